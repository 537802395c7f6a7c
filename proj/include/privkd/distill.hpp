// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-level distillation objective for a text-only student:
//
//   total = CE(y, softmax(z_s))
//         + alpha * CE(softmax(z_t / tau), q)
//         + beta  * ||e_t - e_s||^2            (optionally divided by d_e)
//
// where q = softmax(z_s / tau) when soften_student is set and softmax(z_s)
// otherwise. Teacher quantities are constants: gradients are produced only
// for the student's logits and embedding.

#pragma once

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

namespace privkd::distill {

using Vector = Eigen::VectorXd;

/// Predicted probabilities are clamped to at least this value before log().
inline constexpr double kProbFloor = 1e-12;

struct DistillConfig {
  double alpha = 3.0;
  double beta = 1.0;
  double tau = 8.0;
  bool soften_student = true;
  bool normalize_sqdist = false;

  void validate() const;
};

struct LossBreakdown {
  double total = 0;
  double ce_hard = 0;
  double ce_soft = 0;
  double emb_sqdist = 0;
};

struct KdResult {
  LossBreakdown loss;
  Vector d_logits;     ///< d total / d student logits
  Vector d_embedding;  ///< d total / d student embedding
};

/// -sum_j target_j * log(max(pred_j, kProbFloor)), with 0 * log(0) = 0.
double cross_entropy(const Vector& target, const Vector& pred);

Vector softmax(const Vector& logits);
/// softmax(logits / tau); tau must be positive.
Vector soften(const Vector& logits, double tau);

double embedding_sqdist(const Vector& teacher, const Vector& student, bool normalize);

Vector one_hot(int label, int k);

/// Loss and student-side gradients for one sample.
KdResult kd_loss(const Vector& target, const Vector& teacher_logits, const Vector& teacher_embedding,
                 const Vector& student_logits, const Vector& student_embedding, const DistillConfig& cfg);

nlohmann::json to_json(const DistillConfig& cfg);
DistillConfig distill_config_from_json(const nlohmann::json& j);

}  // namespace privkd::distill
