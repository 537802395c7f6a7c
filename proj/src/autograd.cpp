// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/autograd.hpp"

#include <cmath>

#include "privkd/errors.hpp"

namespace privkd::ag {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node node;
  node.ref = &p.value;
  node.needs_grad = true;
  node.param = &p;
  nodes_.push_back(std::move(node));
  bound_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::frozen(const Parameter& p) {
  if (auto it = frozen_.find(&p); it != frozen_.end()) return Var(this, it->second);
  Node node;
  node.ref = &p.value;
  nodes_.push_back(std::move(node));
  frozen_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& in : inputs) node.needs_grad = node.needs_grad || nodes_[in.id_].needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& node = nodes_[v.id_];
  if (!node.needs_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    node.grad += g;
  }
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  if (seeds.empty()) return;
  std::size_t top = 0;
  for (const auto& [var, grad] : seeds) {
    if (var.tape_ != this) throw PreconditionError("backward seed belongs to another tape");
    const Matrix& value = this->value(var);
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      throw PreconditionError("backward seed shape does not match node value");
    accumulate(var, grad);
    top = std::max(top, var.id_);
  }
  for (std::size_t i = top + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad) continue;
    if (node.param != nullptr) {
      if (node.param->grad.rows() != node.grad.rows() || node.param->grad.cols() != node.grad.cols())
        node.param->zero_grad();
      node.param->grad += node.grad;
    } else if (node.backward) {
      node.backward(*this, node.grad);
    }
  }
}

void Tape::backward(const Var& root, const Matrix& seed) {
  const std::pair<Var, Matrix> one{root, seed};
  backward(std::span<const std::pair<Var, Matrix>>(&one, 1));
}

namespace {

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw PreconditionError("operands recorded on different tapes");
  return *a.tape();
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw PreconditionError(std::string(op) + ": shape mismatch");
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  if (a.cols() != b.rows()) throw PreconditionError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(const Var& x, const Var& row) {
  Tape& tape = tape_of(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) throw PreconditionError("add_row: row shape mismatch");
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  return tape.record(std::move(out), {x, row}, [x, row](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& tape = tape_of(x, weight);
  if (x.cols() != weight.rows()) throw PreconditionError("linear: input width does not match weight rows");
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw PreconditionError("linear: bias shape mismatch");
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape.record(std::move(out), {x, weight, bias}, [x, weight, bias](Tape& t, const Matrix& g) {
    if (t.needs_grad(x)) t.accumulate(x, g * weight.value().transpose());
    if (t.needs_grad(weight)) t.accumulate(weight, x.value().transpose() * g);
    if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

Var gelu(const Var& x) {
  Tape& tape = *x.tape();
  const Matrix& v = x.value();
  Matrix inner = kSqrt2OverPi * (v.array() + kGeluCubic * v.array().cube()).matrix();
  Matrix th = inner.array().tanh().matrix();
  Matrix out = (0.5 * v.array() * (1.0 + th.array())).matrix();
  return tape.record(std::move(out), {x}, [x, th = std::move(th)](Tape& t, const Matrix& g) {
    const auto v = x.value().array();
    const auto sech2 = 1.0 - th.array().square();
    const auto d_inner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v.square());
    Matrix dx = (g.array() * (0.5 * (1.0 + th.array()) + 0.5 * v * sech2 * d_inner)).matrix();
    t.accumulate(x, dx);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& tape = tape_of(x, gamma);
  const Eigen::Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw PreconditionError("layer_norm: scale/shift shape mismatch");
  const Matrix& v = x.value();
  Matrix xhat(v.rows(), n);
  Vector inv_std(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mean = v.row(r).mean();
    const double var = (v.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
                       if (t.needs_grad(gamma)) t.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                       if (t.needs_grad(beta)) t.accumulate(beta, g.colwise().sum());
                       if (!t.needs_grad(x)) return;
                       const double n = static_cast<double>(xhat.cols());
                       Matrix gx = g;
                       gx.array().rowwise() *= gamma.value().row(0).array();
                       Matrix dx(xhat.rows(), xhat.cols());
                       for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                         const double mean_g = gx.row(r).sum() / n;
                         const double mean_gx = gx.row(r).dot(xhat.row(r)) / n;
                         dx.row(r) = inv_std(r) * (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
                       }
                       t.accumulate(x, dx);
                     });
}

Var gather_rows(const Var& x, std::vector<Eigen::Index> index) {
  Tape& tape = *x.tape();
  const Matrix& v = x.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= v.rows()) throw PreconditionError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = v.row(index[r]);
  }
  return tape.record(std::move(out), {x}, [x, index = std::move(index)](Tape& t, const Matrix& g) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t r = 0; r < index.size(); ++r) dx.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    t.accumulate(x, dx);
  });
}

Var concat_rows(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  if (a.cols() != b.cols()) throw PreconditionError("concat_rows: column count differs");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.topRows(a.rows()));
    if (t.needs_grad(b)) t.accumulate(b, g.bottomRows(b.rows()));
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  if (a.rows() != b.rows()) throw PreconditionError("concat_cols: row count differs");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.leftCols(a.cols()));
    if (t.needs_grad(b)) t.accumulate(b, g.rightCols(b.cols()));
  });
}

Var segment_attention(const Var& qkv, std::vector<Segment> segments, int heads) {
  Tape& tape = *qkv.tape();
  const Matrix& v = qkv.value();
  if (heads <= 0 || v.cols() % (3 * heads) != 0)
    throw PreconditionError("segment_attention: width must be 3 * heads * head_dim");
  const Eigen::Index d = v.cols() / 3;
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out = Matrix::Zero(v.rows(), d);
  std::vector<Matrix> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const Segment& s : segments) {
    if (s.length <= 0 || s.offset < 0 || s.offset + s.length > v.rows())
      throw PreconditionError("segment_attention: segment out of range");
    for (int h = 0; h < heads; ++h) {
      const auto q = v.block(s.offset, h * dh, s.length, dh);
      const auto k = v.block(s.offset, d + h * dh, s.length, dh);
      const auto val = v.block(s.offset, 2 * d + h * dh, s.length, dh);
      Matrix scores = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(s.offset, h * dh, s.length, dh) = scores * val;
      probs.push_back(std::move(scores));
    }
  }
  return tape.record(
      std::move(out), {qkv},
      [qkv, segments = std::move(segments), heads, d, dh, scale, probs = std::move(probs)](Tape& t, const Matrix& g) {
        const Matrix& v = qkv.value();
        Matrix dqkv = Matrix::Zero(v.rows(), v.cols());
        std::size_t p = 0;
        for (const Segment& s : segments) {
          for (int h = 0; h < heads; ++h, ++p) {
            const Matrix& prob = probs[p];
            const auto q = v.block(s.offset, h * dh, s.length, dh);
            const auto k = v.block(s.offset, d + h * dh, s.length, dh);
            const auto val = v.block(s.offset, 2 * d + h * dh, s.length, dh);
            const auto go = g.block(s.offset, h * dh, s.length, dh);
            Matrix dprob = go * val.transpose();
            dqkv.block(s.offset, 2 * d + h * dh, s.length, dh) += prob.transpose() * go;
            Matrix dscores = prob.array() * (dprob.array().colwise() - (dprob.array() * prob.array()).rowwise().sum());
            dqkv.block(s.offset, h * dh, s.length, dh) += scale * (dscores * k);
            dqkv.block(s.offset, d + h * dh, s.length, dh) += scale * (dscores.transpose() * q);
          }
        }
        t.accumulate(qkv, dqkv);
      });
}

}  // namespace privkd::ag
