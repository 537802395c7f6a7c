// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are computed
// eagerly; backward() replays the recorded closures in reverse order and
// accumulates gradients into the Parameters that were bound to the tape.
// Sequences of several samples are packed along the row axis and described
// by Segments so that per-token operations run as one large matrix product.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace privkd::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Contiguous block of rows that belongs to one sample.
struct Segment {
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);

  /// Leaf bound to a parameter; gradients are added to param.grad on backward().
  /// Binding the same parameter twice returns the same node. The value is
  /// referenced, not copied, so the parameter must outlive the tape.
  Var param(Parameter& p);

  /// Leaf that references a parameter's value without tracking gradients.
  Var frozen(const Parameter& p);

  /// Records an interior node. `backward` receives the node's gradient and
  /// must forward contributions to its inputs through accumulate().
  Var record(Matrix value, std::vector<Var> inputs, Backward backward);

  const Matrix& value(const Var& v) const {
    const Node& n = nodes_[v.id_];
    return n.ref != nullptr ? *n.ref : n.value;
  }
  bool needs_grad(const Var& v) const { return nodes_[v.id_].needs_grad; }

  /// Adds `g` to the gradient of `v` (no-op for constants).
  void accumulate(const Var& v, const Matrix& g);

  /// Seeds the given nodes with the paired gradients and back-propagates.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);
  void backward(const Var& root, const Matrix& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  std::unordered_map<const Parameter*, std::size_t> frozen_;
};

// -- operations -------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// x·W + b with b broadcast over rows.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Adds a 1×n row to every row of x.
Var add_row(const Var& x, const Var& row);
/// tanh approximation of GELU.
Var gelu(const Var& x);
/// Row-wise layer normalisation with learned scale and shift (both 1×n).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// out.row(r) = x.row(index[r]); rows may repeat.
Var gather_rows(const Var& x, std::vector<Eigen::Index> index);
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const Var& a, const Var& b);
/// Multi-head self-attention restricted to each segment. `qkv` holds the
/// query, key and value projections side by side (N × 3d); result is N × d.
Var segment_attention(const Var& qkv, std::vector<Segment> segments, int heads);

}  // namespace privkd::ag
