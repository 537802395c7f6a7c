// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "privkd/errors.hpp"
#include "privkd/rng.hpp"

namespace privkd::train {

namespace fs = std::filesystem;
using ag::Matrix;
using nlohmann::json;

namespace {

constexpr std::size_t kEvalChunk = 64;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", what));
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(fmt::format("unknown {} key '{}'", what, key));
  }
}

// Model inputs prepared once per split.
struct Inputs {
  std::vector<std::vector<int>> ids;
  std::vector<Matrix> patches;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

const arch::EncoderSpec* text_spec_of(const TrainedModel& m) {
  if (m.kind == ModelKind::teacher) return &m.teacher_spec().text;
  if (m.kind == ModelKind::text_classifier) return &m.classifier_spec().encoder;
  return nullptr;
}

const arch::EncoderSpec* image_spec_of(const TrainedModel& m) {
  if (m.kind == ModelKind::teacher) return &m.teacher_spec().image;
  if (m.kind == ModelKind::image_classifier) return &m.classifier_spec().encoder;
  return nullptr;
}

int num_classes_of(const TrainedModel& m) {
  return m.kind == ModelKind::teacher ? m.teacher_spec().num_classes : m.classifier_spec().num_classes;
}

void require_images(std::span<const corpus::TextSample> samples, const gen::ImageStore* images) {
  if (images == nullptr) throw PreconditionError("this model needs generated images, none were supplied");
  for (const auto& s : samples)
    if (!images->contains(s.id)) throw PreconditionError(fmt::format("no generated image for sample '{}'", s.id));
}

Inputs prepare(const TrainedModel& m, std::span<const corpus::TextSample> samples, const gen::ImageStore* images) {
  const arch::EncoderSpec* ts = text_spec_of(m);
  const arch::EncoderSpec* is = image_spec_of(m);
  if (is != nullptr) require_images(samples, images);
  const int k = num_classes_of(m);
  Inputs in;
  in.labels.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= k)
      throw PreconditionError(fmt::format("sample '{}' has label {} outside [0, {})", s.id, s.label, k));
    in.labels.push_back(s.label);
    if (ts != nullptr) in.ids.push_back(m.tokenizer.encode(corpus::model_input(s, m.dataset_kind), ts->max_len));
    if (is != nullptr) in.patches.push_back(arch::image_patches(images->at(s.id), *is));
  }
  return in;
}

arch::BatchOutput forward(const TrainedModel& m, const arch::Binding& w, std::span<const std::vector<int>> ids,
                          std::span<const Matrix> patches) {
  if (m.kind == ModelKind::teacher) return arch::teacher_batch(w, m.teacher_spec(), ids, patches);
  return arch::classifier_batch(w, m.classifier_spec(), ids, patches);
}

// Gathers the rows `idx` of a prepared split.
struct BatchView {
  std::vector<std::vector<int>> ids;
  std::vector<Matrix> patches;
};

BatchView gather(const Inputs& in, std::span<const std::size_t> idx) {
  BatchView b;
  for (std::size_t i : idx) {
    if (!in.ids.empty()) b.ids.push_back(in.ids[i]);
    if (!in.patches.empty()) b.patches.push_back(in.patches[i]);
  }
  return b;
}

Outputs run_inference(const TrainedModel& m, const ParameterStore& weights, const Inputs& in) {
  Outputs out;
  const std::size_t n = in.size();
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const BatchView b = gather(in, idx);
    ag::Tape tape;
    const arch::Binding w{tape, weights, nullptr};
    const arch::BatchOutput o = forward(m, w, b.ids, b.patches);
    if (start == 0) {
      out.logits.resize(static_cast<Eigen::Index>(n), o.logits.cols());
      out.embeddings.resize(static_cast<Eigen::Index>(n), o.embedding.cols());
    }
    const auto rows = static_cast<Eigen::Index>(idx.size());
    out.logits.middleRows(static_cast<Eigen::Index>(start), rows) = o.logits.value();
    out.embeddings.middleRows(static_cast<Eigen::Index>(start), rows) = o.embedding.value();
  }
  return out;
}

int argmax_row(const Matrix& m, Eigen::Index r) {
  Eigen::Index best = 0;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

double accuracy_of(const Matrix& logits, std::span<const int> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax_row(logits, static_cast<Eigen::Index>(i)) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Computes the mean loss of one minibatch and the gradient seeds for backward().
using BatchLoss = std::function<distill::LossBreakdown(const arch::BatchOutput& out, std::span<const std::size_t> idx,
                                                        std::vector<std::pair<ag::Var, Matrix>>& seeds)>;

BatchLoss cross_entropy_loss(const Inputs& train, int k) {
  return [&train, k](const arch::BatchOutput& out, std::span<const std::size_t> idx,
                     std::vector<std::pair<ag::Var, Matrix>>& seeds) {
    const Matrix& logits = out.logits.value();
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    Matrix d(logits.rows(), logits.cols());
    distill::LossBreakdown lb;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      const distill::Vector y = distill::one_hot(train.labels[idx[r]], k);
      const distill::Vector p = distill::softmax(logits.row(row).transpose());
      const double ce = distill::cross_entropy(y, p);
      lb.ce_hard += ce;
      lb.total += ce;
      const distill::Vector g = p * y.sum() - y;
      d.row(row) = g.transpose() * inv_b;
    }
    lb.ce_hard *= inv_b;
    lb.total *= inv_b;
    seeds.emplace_back(out.logits, std::move(d));
    return lb;
  };
}

void clip_gradients(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& [name, p] : params) p.grad *= scale;
}

bool finite(const distill::LossBreakdown& lb) {
  return std::isfinite(lb.total) && std::isfinite(lb.ce_hard) && std::isfinite(lb.ce_soft) &&
         std::isfinite(lb.emb_sqdist);
}

void append_log(const fs::path& path, const EpochMetrics& m) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to metrics log " + path.string());
  out << to_json(m).dump() << '\n';
}

// Shared minibatch loop. `model` carries kind, spec, tokenizer and configs;
// `weights` is trained in place and the best-validation copy is returned.
TrainedModel fit(TrainedModel model, ParameterStore weights, const Inputs& train, const Inputs& val,
                 const BatchLoss& loss, const TrainIo& io) {
  const TrainConfig& cfg = model.config;
  cfg.validate();
  if (train.size() == 0) throw PreconditionError("training split is empty");
  if (val.size() == 0) throw PreconditionError("validation split is empty");

  if (!io.metrics_log.empty()) {
    if (io.metrics_log.has_parent_path()) fs::create_directories(io.metrics_log.parent_path());
    std::ofstream truncate(io.metrics_log, std::ios::trunc);
    if (!truncate) throw IoError("cannot create metrics log " + io.metrics_log.string());
  }

  const long spe = steps_per_epoch(train.size(), cfg.batch_size);
  const long total = spe * cfg.epochs;
  AdamW opt(cfg);
  long step = 0;

  ParameterStore best;
  double best_val = -1.0;
  std::vector<std::size_t> order(train.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr_at(step, total, cfg);
    std::size_t correct = 0;

    for (long b = 0; b < spe; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);

      const double lr = lr_at(step, total, cfg);
      weights.zero_grad();
      ag::Tape tape;
      const arch::Binding w{tape, weights, &weights};
      const BatchView bv = gather(train, idx);
      const arch::BatchOutput out = forward(model, w, bv.ids, bv.patches);

      std::vector<std::pair<ag::Var, Matrix>> seeds;
      if (!out.logits.value().allFinite() || !out.embedding.value().allFinite())
        throw TrainingError(fmt::format("non-finite model output at epoch {} step {} (lr {:.3g}); first sample index {}",
                                        epoch, step, lr, idx.front()));
      const distill::LossBreakdown lb = loss(out, idx, seeds);
      if (!finite(lb)) {
        throw TrainingError(fmt::format(
            "non-finite loss at epoch {} step {} (lr {:.3g}): total={} ce_hard={} ce_soft={} emb={}; first sample "
            "index {}",
            epoch, step, lr, lb.total, lb.ce_hard, lb.ce_soft, lb.emb_sqdist, idx.front()));
      }
      tape.backward(seeds);
      if (cfg.grad_clip > 0.0) clip_gradients(weights, cfg.grad_clip);
      opt.step(weights, lr);
      ++step;

      const double share = static_cast<double>(idx.size());
      em.loss += lb.total * share;
      em.ce_hard += lb.ce_hard * share;
      em.ce_soft += lb.ce_soft * share;
      em.emb_sqdist += lb.emb_sqdist * share;
      const Matrix& logits = out.logits.value();
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (argmax_row(logits, static_cast<Eigen::Index>(r)) == train.labels[idx[r]]) ++correct;
    }

    const double n = static_cast<double>(train.size());
    em.loss /= n;
    em.ce_hard /= n;
    em.ce_soft /= n;
    em.emb_sqdist /= n;
    em.train_accuracy = static_cast<double>(correct) / n;
    em.val_accuracy = accuracy_of(run_inference(model, weights, val).logits, val.labels);
    model.history.push_back(em);
    append_log(io.metrics_log, em);

    if (em.val_accuracy > best_val) {
      best_val = em.val_accuracy;
      best = weights;
      model.selected_epoch = epoch;
    }
  }
  model.weights = std::move(best);
  return model;
}

void check_init(const ParameterStore& init, const std::vector<ParamShape>& shapes) {
  if (init.size() != shapes.size())
    throw PreconditionError(
        fmt::format("initial weights hold {} tensors, the architecture needs {}", init.size(), shapes.size()));
  for (const auto& s : shapes) {
    if (!init.contains(s.name)) throw PreconditionError("initial weights lack tensor '" + s.name + "'");
    const auto& v = init.at(s.name).value;
    if (v.rows() != s.rows || v.cols() != s.cols)
      throw PreconditionError(fmt::format("initial tensor '{}' is {}x{}, expected {}x{}", s.name, v.rows(), v.cols(),
                                          s.rows, s.cols));
  }
}

TrainedModel skeleton(ModelKind kind, const arch::Tokenizer& tokenizer, const corpus::Dataset& dataset,
                      const TrainConfig& cfg) {
  TrainedModel m;
  m.kind = kind;
  m.tokenizer = tokenizer;
  m.dataset_kind = dataset.kind;
  m.config = cfg;
  return m;
}

}  // namespace

// -- config ---------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
}

json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},     {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed},
          {"weight_decay", c.weight_decay}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
          {"grad_clip", c.grad_clip}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown_keys(j, {"lr0", "epochs", "batch_size", "seed", "weight_decay", "beta1", "beta2", "eps", "grad_clip"},
                      "train");
  TrainConfig c;
  try {
    c.lr0 = j.value("lr0", c.lr0);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(long step, long total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw PreconditionError(fmt::format("step {} outside [0, {}]", step, total_steps));
  return cfg.lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

long steps_per_epoch(std::size_t n, int batch_size) {
  if (batch_size < 1) throw PreconditionError("batch_size must be at least 1");
  const auto b = static_cast<std::size_t>(batch_size);
  return static_cast<long>((n + b - 1) / b);
}

// -- optimizer ------------------------------------------------------------------

AdamW::AdamW(const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), weight_decay_(cfg.weight_decay) {}

void AdamW::step(ParameterStore& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (p.grad.size() == 0) continue;
    auto [it, fresh] = moments_.try_emplace(name);
    auto& [m, v] = it->second;
    if (fresh) {
      m = Matrix::Zero(p.value.rows(), p.value.cols());
      v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + eps_) + weight_decay_ * p.value.array());
  }
}

// -- models -----------------------------------------------------------------------

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::teacher: return "teacher";
    case ModelKind::text_classifier: return "text_classifier";
    case ModelKind::image_classifier: return "image_classifier";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "teacher") return ModelKind::teacher;
  if (name == "text_classifier") return ModelKind::text_classifier;
  if (name == "image_classifier") return ModelKind::image_classifier;
  throw SchemaError(fmt::format("unknown model kind '{}'", name));
}

json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},     {"lr", m.lr},
          {"loss", m.loss},       {"ce_hard", m.ce_hard},
          {"ce_soft", m.ce_soft}, {"emb_sqdist", m.emb_sqdist},
          {"train_accuracy", m.train_accuracy}, {"val_accuracy", m.val_accuracy}};
}

int select_epoch(std::span<const EpochMetrics> history) {
  if (history.empty()) throw PreconditionError("empty training history");
  const EpochMetrics* best = &history.front();
  for (const auto& m : history)
    if (m.val_accuracy > best->val_accuracy) best = &m;
  return best->epoch;
}

TrainedModel train_teacher(const arch::TeacherSpec& spec, const arch::Tokenizer& tokenizer, ParameterStore init,
                           const corpus::Dataset& dataset, const gen::ImageStore& images, const TrainConfig& cfg,
                           const TrainIo& io) {
  spec.validate();
  cfg.validate();
  check_init(init, arch::teacher_shapes(spec));
  if (spec.num_classes != dataset.num_classes) throw PreconditionError("teacher and dataset disagree on class count");
  TrainedModel m = skeleton(ModelKind::teacher, tokenizer, dataset, cfg);
  m.spec = spec;
  require_images(dataset.train, &images);
  require_images(dataset.val, &images);
  const Inputs train = prepare(m, dataset.train, &images);
  const Inputs val = prepare(m, dataset.val, &images);
  return fit(std::move(m), std::move(init), train, val, cross_entropy_loss(train, spec.num_classes), io);
}

TrainedModel distill_student(const arch::ClassifierSpec& spec, const arch::Tokenizer& tokenizer, ParameterStore init,
                             const TrainedModel& teacher, const corpus::Dataset& dataset,
                             const gen::ImageStore& images, const TrainConfig& cfg,
                             const distill::DistillConfig& dcfg, const TrainIo& io) {
  spec.validate();
  cfg.validate();
  dcfg.validate();
  if (teacher.kind != ModelKind::teacher) throw PreconditionError("distillation needs a teacher model");
  if (spec.modality() != arch::Modality::text) throw PreconditionError("the student must be a text classifier");
  if (spec.d_e != teacher.teacher_spec().d_e)
    throw PreconditionError(fmt::format("embedding dimension mismatch: teacher d_e={}, student d_e={}",
                                        teacher.teacher_spec().d_e, spec.d_e));
  if (spec.num_classes != teacher.teacher_spec().num_classes || spec.num_classes != dataset.num_classes)
    throw PreconditionError("teacher, student and dataset disagree on class count");
  check_init(init, arch::classifier_shapes(spec));
  require_images(dataset.train, &images);

  const std::string teacher_digest = teacher.weights.digest();
  const Outputs targets = run_inference(teacher, teacher.weights, prepare(teacher, dataset.train, &images));

  TrainedModel m = skeleton(ModelKind::text_classifier, tokenizer, dataset, cfg);
  m.spec = spec;
  m.distill = dcfg;
  const Inputs train = prepare(m, dataset.train, nullptr);
  const Inputs val = prepare(m, dataset.val, nullptr);
  const int k = spec.num_classes;

  BatchLoss loss = [&](const arch::BatchOutput& out, std::span<const std::size_t> idx,
                       std::vector<std::pair<ag::Var, Matrix>>& seeds) {
    const Matrix& logits = out.logits.value();
    const Matrix& emb = out.embedding.value();
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    Matrix dl(logits.rows(), logits.cols());
    Matrix de(emb.rows(), emb.cols());
    distill::LossBreakdown lb;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      const auto src = static_cast<Eigen::Index>(idx[r]);
      const distill::KdResult kd =
          distill::kd_loss(distill::one_hot(train.labels[idx[r]], k), targets.logits.row(src).transpose(),
                           targets.embeddings.row(src).transpose(), logits.row(row).transpose(),
                           emb.row(row).transpose(), dcfg);
      lb.total += kd.loss.total;
      lb.ce_hard += kd.loss.ce_hard;
      lb.ce_soft += kd.loss.ce_soft;
      lb.emb_sqdist += kd.loss.emb_sqdist;
      dl.row(row) = kd.d_logits.transpose() * inv_b;
      de.row(row) = kd.d_embedding.transpose() * inv_b;
    }
    lb.total *= inv_b;
    lb.ce_hard *= inv_b;
    lb.ce_soft *= inv_b;
    lb.emb_sqdist *= inv_b;
    seeds.emplace_back(out.logits, std::move(dl));
    if (dcfg.beta != 0.0) seeds.emplace_back(out.embedding, std::move(de));
    return lb;
  };

  TrainedModel student = fit(std::move(m), std::move(init), train, val, loss, io);
  if (teacher.weights.digest() != teacher_digest)
    throw IntegrityError("teacher weights changed during distillation");
  return student;
}

TrainedModel train_unimodal(const arch::ClassifierSpec& spec, const arch::Tokenizer& tokenizer, ParameterStore init,
                            const corpus::Dataset& dataset, const gen::ImageStore* images, const TrainConfig& cfg,
                            const TrainIo& io) {
  spec.validate();
  cfg.validate();
  check_init(init, arch::classifier_shapes(spec));
  if (spec.num_classes != dataset.num_classes)
    throw PreconditionError("classifier and dataset disagree on class count");
  const bool image = spec.modality() == arch::Modality::image;
  TrainedModel m = skeleton(image ? ModelKind::image_classifier : ModelKind::text_classifier, tokenizer, dataset, cfg);
  m.spec = spec;
  if (image) {
    require_images(dataset.train, images);
    require_images(dataset.val, images);
  }
  const Inputs train = prepare(m, dataset.train, images);
  const Inputs val = prepare(m, dataset.val, images);
  return fit(std::move(m), std::move(init), train, val, cross_entropy_loss(train, spec.num_classes), io);
}

// -- evaluation -------------------------------------------------------------------

Outputs predict(const TrainedModel& model, std::span<const corpus::TextSample> samples,
                const gen::ImageStore* images) {
  if (samples.empty()) throw PreconditionError("cannot evaluate an empty split");
  return run_inference(model, model.weights, prepare(model, samples, images));
}

Evaluation evaluate_detailed(const TrainedModel& model, std::span<const corpus::TextSample> samples,
                             const gen::ImageStore* images) {
  if (samples.empty()) throw PreconditionError("cannot evaluate an empty split");
  const Inputs in = prepare(model, samples, images);
  const Outputs out = run_inference(model, model.weights, in);
  const int k = num_classes_of(model);
  Evaluation ev;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const int pred = argmax_row(out.logits, row);
    ev.predictions.push_back(pred);
    if (pred == in.labels[i]) ++correct;
    ev.mean_ce += distill::cross_entropy(distill::one_hot(in.labels[i], k),
                                         distill::softmax(out.logits.row(row).transpose()));
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(in.size());
  ev.mean_ce /= static_cast<double>(in.size());
  return ev;
}

double evaluate(const TrainedModel& model, std::span<const corpus::TextSample> samples,
                const gen::ImageStore* images) {
  return evaluate_detailed(model, samples, images).accuracy;
}

// -- persistence ------------------------------------------------------------------

void save_model(const TrainedModel& model, const fs::path& path) {
  json meta;
  meta["format"] = "privkd-model";
  meta["kind"] = to_string(model.kind);
  meta["spec"] = model.kind == ModelKind::teacher ? arch::to_json(model.teacher_spec())
                                                  : arch::to_json(model.classifier_spec());
  meta["tokenizer"] = model.tokenizer.to_json();
  meta["dataset_kind"] = corpus::to_string(model.dataset_kind);
  meta["train"] = to_json(model.config);
  meta["distill"] = model.distill ? distill::to_json(*model.distill) : json(nullptr);
  json hist = json::array();
  for (const auto& e : model.history) hist.push_back(to_json(e));
  meta["history"] = std::move(hist);
  meta["selected_epoch"] = model.selected_epoch;
  save_checkpoint(path, model.weights, meta);
}

TrainedModel load_model(const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  const json& meta = ck.metadata;
  TrainedModel m;
  try {
    if (meta.value("format", "") != "privkd-model") throw SchemaError(path.string() + " is not a model file");
    m.kind = parse_model_kind(meta.at("kind").get<std::string>());
    if (m.kind == ModelKind::teacher) {
      m.spec = arch::teacher_spec_from_json(meta.at("spec"));
    } else {
      m.spec = arch::classifier_spec_from_json(meta.at("spec"));
    }
    m.tokenizer = arch::Tokenizer::from_json(meta.at("tokenizer"));
    m.dataset_kind = corpus::parse_dataset_kind(meta.at("dataset_kind").get<std::string>());
    m.config = train_config_from_json(meta.at("train"));
    if (!meta.at("distill").is_null()) m.distill = distill::distill_config_from_json(meta.at("distill"));
    for (const auto& e : meta.at("history")) {
      EpochMetrics em;
      em.epoch = e.at("epoch").get<int>();
      em.lr = e.at("lr").get<double>();
      em.loss = e.at("loss").get<double>();
      em.ce_hard = e.at("ce_hard").get<double>();
      em.ce_soft = e.at("ce_soft").get<double>();
      em.emb_sqdist = e.at("emb_sqdist").get<double>();
      em.train_accuracy = e.at("train_accuracy").get<double>();
      em.val_accuracy = e.at("val_accuracy").get<double>();
      m.history.push_back(em);
    }
    m.selected_epoch = meta.at("selected_epoch").get<int>();
  } catch (const json::exception& e) {
    throw SchemaError("malformed model metadata in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError("malformed model metadata in " + path.string() + ": " + e.what());
  }
  m.weights = std::move(ck.params);
  return m;
}

}  // namespace privkd::train
