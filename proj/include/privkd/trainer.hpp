// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minibatch training of the teacher, the distilled student and the unimodal
// reference classifiers, plus accuracy evaluation and model files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "privkd/architectures.hpp"
#include "privkd/corpus.hpp"
#include "privkd/distill.hpp"
#include "privkd/genimage.hpp"
#include "privkd/params.hpp"

namespace privkd::train {

struct TrainConfig {
  double lr0 = 5e-5;
  int epochs = 100;
  int batch_size = 14;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm cap; 0 disables clipping.
  double grad_clip = 0.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linearly decayed learning rate; throws PreconditionError unless 0 <= step <= total_steps.
double lr_at(long step, long total_steps, const TrainConfig& cfg);

/// Steps per epoch: ceil(n / batch_size).
long steps_per_epoch(std::size_t n, int batch_size);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg);

  /// One update from the gradients currently stored in `params`.
  void step(ParameterStore& params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::map<std::string, std::pair<ag::Matrix, ag::Matrix>> moments_;
};

enum class ModelKind { teacher, text_classifier, image_classifier };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct EpochMetrics {
  int epoch = 0;  ///< 1-based
  double lr = 0.0;
  double loss = 0.0;
  double ce_hard = 0.0;
  double ce_soft = 0.0;
  double emb_sqdist = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainedModel {
  ModelKind kind = ModelKind::text_classifier;
  std::variant<arch::TeacherSpec, arch::ClassifierSpec> spec;
  arch::Tokenizer tokenizer;
  corpus::DatasetKind dataset_kind = corpus::DatasetKind::synthetic;
  ParameterStore weights;  ///< the selected checkpoint
  TrainConfig config;
  std::optional<distill::DistillConfig> distill;
  std::vector<EpochMetrics> history;
  int selected_epoch = 0;

  const arch::TeacherSpec& teacher_spec() const { return std::get<arch::TeacherSpec>(spec); }
  const arch::ClassifierSpec& classifier_spec() const { return std::get<arch::ClassifierSpec>(spec); }
  bool needs_images() const { return kind != ModelKind::text_classifier; }
};

/// Epoch with the highest validation accuracy, earliest on ties.
int select_epoch(std::span<const EpochMetrics> history);

/// Where a run writes its per-epoch records (line-delimited JSON); empty disables.
struct TrainIo {
  std::filesystem::path metrics_log;
};

/// Cross-entropy training of the fused text+image model.
TrainedModel train_teacher(const arch::TeacherSpec& spec, const arch::Tokenizer& tokenizer, ParameterStore init,
                           const corpus::Dataset& dataset, const gen::ImageStore& images, const TrainConfig& cfg,
                           const TrainIo& io = {});

/// Trains a text-only student against labels, the frozen teacher's softened
/// outputs and its embedding. The teacher is never modified.
TrainedModel distill_student(const arch::ClassifierSpec& spec, const arch::Tokenizer& tokenizer, ParameterStore init,
                             const TrainedModel& teacher, const corpus::Dataset& dataset,
                             const gen::ImageStore& images, const TrainConfig& cfg,
                             const distill::DistillConfig& dcfg, const TrainIo& io = {});

/// Plain cross-entropy training of a single-encoder classifier; `images` is
/// required (and only used) when the encoder is an image encoder.
TrainedModel train_unimodal(const arch::ClassifierSpec& spec, const arch::Tokenizer& tokenizer, ParameterStore init,
                            const corpus::Dataset& dataset, const gen::ImageStore* images, const TrainConfig& cfg,
                            const TrainIo& io = {});

struct Evaluation {
  double accuracy = 0.0;
  double mean_ce = 0.0;
  std::vector<int> predictions;
};

/// Argmax accuracy over `samples`; throws PreconditionError for an empty
/// split or a missing image.
Evaluation evaluate_detailed(const TrainedModel& model, std::span<const corpus::TextSample> samples,
                             const gen::ImageStore* images = nullptr);
double evaluate(const TrainedModel& model, std::span<const corpus::TextSample> samples,
                const gen::ImageStore* images = nullptr);

/// Raw batch outputs of a model (rows follow `samples`).
struct Outputs {
  ag::Matrix logits;
  ag::Matrix embeddings;
};
Outputs predict(const TrainedModel& model, std::span<const corpus::TextSample> samples,
                const gen::ImageStore* images = nullptr);

void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace privkd::train
