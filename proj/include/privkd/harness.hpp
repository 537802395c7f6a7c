// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: run configs, the synthetic testbed, the staged
// pipeline (ingest, generate, baselines, teacher, distillation, evaluation),
// ablations and report files.
//
// Output directory layout:
//   run.json                       normalised copy of the run config
//   dataset.jsonl                  manifest of the ingested dataset
//   tokenizer.json
//   images/<dataset>/...           image cache and index.json
//   seed-<s>/<model>.ckpt          trained models
//   seed-<s>/<model>.metrics.jsonl per-epoch records
//   results.json, results.{csv,md}
//   ablation.json, ablation.{csv,md}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "privkd/architectures.hpp"
#include "privkd/corpus.hpp"
#include "privkd/distill.hpp"
#include "privkd/errors.hpp"
#include "privkd/genimage.hpp"
#include "privkd/trainer.hpp"

namespace privkd::harness {

// -- synthetic task ---------------------------------------------------------------

struct SyntheticTaskSpec {
  int num_classes = 4;
  int vocab_size = 200;
  int length = 20;
  /// Probability that a token ignores the label and is drawn uniformly.
  double epsilon = 0.5;
  /// Probability that the image shows the sample's own class pattern.
  double q = 0.95;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  int image_size = 32;
  /// Standard deviation of the additive pixel noise, in 8-bit intensity units.
  double pixel_noise = 24.0;

  void validate() const;
};

nlohmann::json to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticTask {
  corpus::Dataset dataset;
  gen::ImageIndex index;
  gen::ImageStore images;
};

/// Class-pattern image for class `c`: one quadrant painted in a class colour on a grey field.
Image class_pattern(int c, int num_classes, int size);

/// Texts are "w<i>" tokens: a class-c token comes from the c-th block of
/// vocab_size / k ids with probability 1 - epsilon, else from the whole
/// vocabulary. Fully determined by (spec, seed). When `cache_root` is set the
/// images and their index are also written to the image cache.
SyntheticTask make_synthetic_task(const SyntheticTaskSpec& spec, std::uint64_t seed,
                                  const std::optional<std::filesystem::path>& cache_root = std::nullopt);

// -- run config -------------------------------------------------------------------

struct DatasetConfig {
  corpus::DatasetKind kind = corpus::DatasetKind::synthetic;
  std::filesystem::path path;  ///< unused for synthetic data
  SyntheticTaskSpec synthetic;
  std::uint64_t data_seed = 0;
};

struct GeneratorConfig {
  std::string backend = "mock";  ///< mock | remote
  gen::ImageSize size;
  std::uint64_t seed = 0;
  int workers = 1;
  gen::RemoteConfig remote;
};

struct RunConfig {
  DatasetConfig dataset;
  GeneratorConfig generator;
  arch::TeacherSpec teacher;
  arch::ClassifierSpec student;
  arch::ClassifierSpec image_classifier;
  InitScheme init = InitScheme::xavier;
  std::optional<std::filesystem::path> pretrained;
  std::size_t max_vocab = 30000;
  train::TrainConfig train;
  distill::DistillConfig distill;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir;

  /// Throws ConfigError for inconsistent settings or missing input paths.
  void validate() const;
};

/// Strict: unknown keys anywhere in the tree raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// -- results ----------------------------------------------------------------------

enum class TableKind { models, ablation };

struct ResultRow {
  std::string model;
  bool text = false;
  bool image = false;
  // Loss terms (ablation tables).
  bool ce_hard = true;
  bool ce_soft = false;
  bool emb = false;
  std::vector<double> per_seed;
  std::vector<std::string> sources;  ///< checkpoint per seed, relative to the output directory
  double mean = 0.0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultsTable {
  TableKind kind = TableKind::models;
  std::string dataset;
  std::vector<std::uint64_t> seeds;
  std::vector<ResultRow> rows;

  const ResultRow& row(const std::string& model) const;

  friend bool operator==(const ResultsTable&, const ResultsTable&) = default;
};

nlohmann::json to_json(const ResultsTable& t);
ResultsTable results_from_json(const nlohmann::json& j);

enum class ReportFormat { csv, markdown };

std::string render_report(const ResultsTable& results, ReportFormat format);
/// Throws PreconditionError for an empty table and IoError when the file cannot be written.
void emit_report(const ResultsTable& results, ReportFormat format, const std::filesystem::path& path);

// -- pipeline ---------------------------------------------------------------------

enum class Stage { ingest, generate, train, evaluate, report };

std::string to_string(Stage stage);
/// Process exit code for a failure in `stage`.
int exit_code(Stage stage);

class StageFailed : public Error {
 public:
  StageFailed(Stage stage, const std::string& what) : Error(what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

/// Model names used for checkpoints and table rows.
inline constexpr const char* kBaseline = "text baseline";
inline constexpr const char* kImageOnly = "image-only";
inline constexpr const char* kTeacher = "teacher";
inline constexpr const char* kStudent = "student";

/// One run over an output directory. Construction validates the config,
/// takes the directory lock and records run.json (a directory created by a
/// different config is refused). Every stage reuses persisted artifacts.
class Pipeline {
 public:
  Pipeline(RunConfig cfg, std::filesystem::path out_dir);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out_dir() const { return out_; }

  const corpus::Dataset& ingest();
  const gen::ImageStore& generate();
  void train_baselines();
  void train_teachers();
  void distill_students();
  ResultsTable evaluate();
  ResultsTable ablate();
  void report(const ResultsTable& results, const std::string& stem);

  /// generate -> baselines -> teachers -> students -> evaluate -> report.
  ResultsTable run();

  std::filesystem::path model_path(std::uint64_t seed, const std::string& model) const;

 private:
  const arch::Tokenizer& tokenizer();
  train::TrainedModel teacher_for(std::uint64_t seed);
  train::TrainConfig train_config(std::uint64_t seed) const;
  template <typename Fn>
  decltype(auto) staged(Stage stage, Fn&& fn);

  RunConfig cfg_;
  std::filesystem::path out_;
  std::filesystem::path lock_;
  std::optional<corpus::Dataset> dataset_;
  std::optional<gen::ImageStore> images_;
  std::optional<arch::Tokenizer> tokenizer_;
};

ResultsTable run_pipeline(const RunConfig& cfg);
ResultsTable ablate(const RunConfig& cfg);

/// Student variant names of the ablation table, keyed by the enabled KD terms.
std::string ablation_variant(bool ce_soft, bool emb);

}  // namespace privkd::harness
