// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/distill.hpp"

#include <cmath>

#include <fmt/format.h>

#include "privkd/errors.hpp"

namespace privkd::distill {

namespace {

constexpr double kSumTolerance = 1e-6;

void check_distribution(const Vector& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v(i) >= 0.0)) throw PreconditionError(fmt::format("{} has a negative or NaN entry", what));
  if (std::abs(v.sum() - 1.0) > kSumTolerance)
    throw PreconditionError(fmt::format("{} sums to {:.9f}, not 1", what, v.sum()));
}

}  // namespace

void DistillConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
}

double cross_entropy(const Vector& target, const Vector& pred) {
  if (target.size() != pred.size())
    throw PreconditionError(fmt::format("cross_entropy length mismatch: {} vs {}", target.size(), pred.size()));
  check_distribution(target, "target");
  check_distribution(pred, "prediction");
  double loss = 0.0;
  for (Eigen::Index j = 0; j < target.size(); ++j) {
    if (target(j) == 0.0) continue;
    loss -= target(j) * std::log(std::max(pred(j), kProbFloor));
  }
  return loss;
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw PreconditionError("softmax of an empty vector");
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Vector soften(const Vector& logits, double tau) {
  if (!(tau > 0.0)) throw PreconditionError("temperature must be positive");
  if (!logits.allFinite()) throw PreconditionError("logits must be finite");
  return softmax(logits / tau);
}

double embedding_sqdist(const Vector& teacher, const Vector& student, bool normalize) {
  if (teacher.size() != student.size())
    throw PreconditionError(
        fmt::format("embedding dimension mismatch: teacher {} vs student {}", teacher.size(), student.size()));
  const double d = (teacher - student).squaredNorm();
  return normalize ? d / static_cast<double>(teacher.size()) : d;
}

Vector one_hot(int label, int k) {
  if (label < 0 || label >= k) throw PreconditionError(fmt::format("label {} outside [0, {})", label, k));
  Vector y = Vector::Zero(k);
  y(label) = 1.0;
  return y;
}

KdResult kd_loss(const Vector& target, const Vector& teacher_logits, const Vector& teacher_embedding,
                 const Vector& student_logits, const Vector& student_embedding, const DistillConfig& cfg) {
  cfg.validate();
  if (teacher_logits.size() != student_logits.size() || target.size() != student_logits.size())
    throw PreconditionError("teacher, student and target disagree on the number of classes");

  KdResult r;
  const Vector p = softmax(student_logits);
  r.loss.ce_hard = cross_entropy(target, p);
  r.d_logits = p * target.sum() - target;

  const Vector t = soften(teacher_logits, cfg.tau);
  if (cfg.soften_student) {
    const Vector q = soften(student_logits, cfg.tau);
    r.loss.ce_soft = cross_entropy(t, q);
    r.d_logits += cfg.alpha * (q - t) / cfg.tau;
  } else {
    r.loss.ce_soft = cross_entropy(t, p);
    r.d_logits += cfg.alpha * (p - t);
  }

  r.loss.emb_sqdist = embedding_sqdist(teacher_embedding, student_embedding, cfg.normalize_sqdist);
  const double emb_scale = cfg.normalize_sqdist ? 2.0 / static_cast<double>(student_embedding.size()) : 2.0;
  r.d_embedding = cfg.beta * emb_scale * (student_embedding - teacher_embedding);

  r.loss.total = r.loss.ce_hard + cfg.alpha * r.loss.ce_soft + cfg.beta * r.loss.emb_sqdist;
  return r;
}

nlohmann::json to_json(const DistillConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"tau", c.tau},
          {"soften_student", c.soften_student},
          {"normalize_sqdist", c.normalize_sqdist}};
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  static const char* allowed[] = {"alpha", "beta", "tau", "soften_student", "normalize_sqdist"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown distill key '" + key + "'");
  }
  DistillConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.tau = j.value("tau", c.tau);
  c.soften_student = j.value("soften_student", c.soften_student);
  c.normalize_sqdist = j.value("normalize_sqdist", c.normalize_sqdist);
  c.validate();
  return c;
}

}  // namespace privkd::distill
