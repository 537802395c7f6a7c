// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests and the acceptance binary.

#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "privkd/architectures.hpp"
#include "privkd/corpus.hpp"
#include "privkd/distill.hpp"
#include "privkd/rng.hpp"

namespace privkd::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// ||a - b|| / max(||a||, ||b||); 0 when both norms are below `floor`.
double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-9);

/// Central-difference gradient of f at x.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                 double h = 1e-5);

struct GradCheck {
  int instances = 0;
  double worst = 0.0;  ///< largest per-tensor relative error seen
  std::string worst_where;
};

/// kd_loss gradients w.r.t. student logits and embedding on `n` random instances.
GradCheck check_kd_gradients(int n, std::uint64_t seed);

enum class ForwardKind { teacher, text_classifier, image_classifier };

/// Weight gradients of a full forward pass of a tiny random model against
/// central differences; up to `entries` sampled entries per tensor.
GradCheck check_forward_gradients(ForwardKind kind, int n, std::uint64_t seed, int entries = 3);

/// Tiny but complete model configurations.
arch::TeacherSpec tiny_teacher(int vocab, int k);
arch::ClassifierSpec tiny_text_classifier(int vocab, int k);
arch::ClassifierSpec tiny_image_classifier(int k);

/// Small random but valid teacher configuration.
arch::TeacherSpec random_tiny_teacher(Rng& rng);

/// Violations found by check_architecture_invariants.
struct InvariantReport {
  int configs = 0;
  int fused_length = 0;   ///< fused segment length != text + image length
  int cls_tracking = 0;   ///< CLS rows not where the fused layout puts them
  int normalisation = 0;  ///< |sum(probs) - 1| > 1e-6 or a negative probability
  int embedding_dim = 0;  ///< teacher and student embeddings differ in size
  double worst_prob_error = 0.0;

  int violations() const { return fused_length + cls_tracking + normalisation + embedding_dim; }
};

/// Property check of the model structure over `trials` random configurations.
InvariantReport check_architecture_invariants(int trials, std::uint64_t seed);

/// Random 8-bit RGB image.
Image random_image(Rng& rng, int h, int w);

/// Small hand-written dataset with two easily separated classes.
corpus::Dataset toy_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test, std::uint64_t seed);

/// Local HTTP generation stub. Each request pops the next scripted reply;
/// once the script is exhausted the last reply repeats.
class StubServer {
 public:
  struct Reply {
    int status = 200;
    std::chrono::milliseconds delay{0};
    bool png = true;        ///< body is a PNG of the requested size
    std::string body;       ///< used when png is false
  };

  explicit StubServer(std::vector<Reply> script);
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  std::string url() const;
  int requests() const { return requests_.load(); }
  /// Request bodies received so far.
  std::vector<std::string> bodies() const;
  /// Requests whose JSON prompt equals this text fail with HTTP 500.
  void fail_prompt(const std::string& prompt);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::atomic<int> requests_{0};
};

}  // namespace privkd::testing
