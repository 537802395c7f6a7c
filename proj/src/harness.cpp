// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "privkd/params.hpp"
#include "privkd/rng.hpp"

namespace privkd::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be an object", what));
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(fmt::format("unknown key '{}' in '{}'", key, what));
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("'{}.{}' has the wrong type", where, key));
  }
}

std::string escape_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

constexpr std::array<std::array<int, 3>, 6> kPalette{{
    {230, 60, 60}, {60, 200, 60}, {60, 90, 230}, {230, 210, 50}, {200, 60, 200}, {50, 200, 210}}};

constexpr int kMaxSyntheticClasses = 12;

}  // namespace

// -- synthetic task ---------------------------------------------------------------

void SyntheticTaskSpec::validate() const {
  if (num_classes < 2 || num_classes > kMaxSyntheticClasses)
    throw ConfigError(fmt::format("synthetic num_classes must lie in [2, {}]", kMaxSyntheticClasses));
  if (vocab_size < num_classes) throw ConfigError("synthetic vocab_size must be at least num_classes");
  if (length < 1) throw ConfigError("synthetic length must be positive");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("synthetic epsilon must lie in [0, 1]");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("synthetic q must lie in [0, 1]");
  if (n_train < static_cast<std::size_t>(num_classes)) throw ConfigError("synthetic n_train must be at least num_classes");
  if (n_val == 0 || n_test == 0) throw ConfigError("synthetic n_val and n_test must be positive");
  if (image_size < 2) throw ConfigError("synthetic image_size must be at least 2");
  if (!(pixel_noise >= 0.0)) throw ConfigError("synthetic pixel_noise must be non-negative");
}

json to_json(const SyntheticTaskSpec& s) {
  return {{"num_classes", s.num_classes}, {"vocab_size", s.vocab_size}, {"length", s.length},
          {"epsilon", s.epsilon},         {"q", s.q},                   {"n_train", s.n_train},
          {"n_val", s.n_val},             {"n_test", s.n_test},         {"image_size", s.image_size},
          {"pixel_noise", s.pixel_noise}};
}

SyntheticTaskSpec synthetic_spec_from_json(const json& j) {
  const std::string where = "dataset.synthetic";
  reject_unknown_keys(j,
                      {"num_classes", "vocab_size", "length", "epsilon", "q", "n_train", "n_val", "n_test",
                       "image_size", "pixel_noise"},
                      where);
  SyntheticTaskSpec s;
  s.num_classes = get_or(j, "num_classes", s.num_classes, where);
  s.vocab_size = get_or(j, "vocab_size", s.vocab_size, where);
  s.length = get_or(j, "length", s.length, where);
  s.epsilon = get_or(j, "epsilon", s.epsilon, where);
  s.q = get_or(j, "q", s.q, where);
  s.n_train = get_or(j, "n_train", s.n_train, where);
  s.n_val = get_or(j, "n_val", s.n_val, where);
  s.n_test = get_or(j, "n_test", s.n_test, where);
  s.image_size = get_or(j, "image_size", s.image_size, where);
  s.pixel_noise = get_or(j, "pixel_noise", s.pixel_noise, where);
  s.validate();
  return s;
}

Image class_pattern(int c, int num_classes, int size) {
  if (c < 0 || c >= num_classes || num_classes > kMaxSyntheticClasses)
    throw PreconditionError(fmt::format("no pattern for class {} of {}", c, num_classes));
  Image img(size, size);
  std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t{128});
  const auto& colour = kPalette[static_cast<std::size_t>(c) % kPalette.size()];
  const int quadrant = c % 4;
  const int half = size / 2;
  const int y0 = (quadrant / 2) * half, x0 = (quadrant % 2) * half;
  const int y1 = quadrant / 2 == 0 ? half : size, x1 = quadrant % 2 == 0 ? half : size;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<std::uint8_t>(colour[ch]);
  return img;
}

SyntheticTask make_synthetic_task(const SyntheticTaskSpec& spec, std::uint64_t seed,
                                  const std::optional<fs::path>& cache_root) {
  spec.validate();
  const int k = spec.num_classes;
  const int block = spec.vocab_size / k;
  Rng text_rng(mix_seed(seed, fnv1a64("synthetic-text")));
  Rng image_rng(mix_seed(seed, fnv1a64("synthetic-image")));
  const std::string spec_key = to_json(spec).dump();

  SyntheticTask task;
  corpus::Dataset& ds = task.dataset;
  ds.name = "synthetic";
  ds.kind = corpus::DatasetKind::synthetic;
  ds.num_classes = k;
  for (int c = 0; c < k; ++c) ds.class_names.push_back(fmt::format("class{}", c));

  task.index.dataset = ds.name;
  task.index.generator = {{"backend", "synthetic"}, {"version", "pattern-v1"}, {"seed", seed}, {"spec", to_json(spec)}};
  const fs::path root = cache_root ? gen::dataset_cache_dir(*cache_root, ds.name) : fs::path{};

  const std::pair<corpus::Split, std::size_t> splits[] = {
      {corpus::Split::train, spec.n_train}, {corpus::Split::val, spec.n_val}, {corpus::Split::test, spec.n_test}};
  for (const auto& [split, n] : splits) {
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
    text_rng.shuffle(labels);
    auto& samples = ds.split(split);
    const std::string split_name = corpus::to_string(split);
    for (std::size_t i = 0; i < n; ++i) {
      corpus::TextSample s;
      s.id = fmt::format("syn-{}-{:05d}", split_name, i);
      s.label = labels[i];
      std::string text;
      for (int t = 0; t < spec.length; ++t) {
        int tok = 0;
        if (text_rng.uniform() < spec.epsilon) {
          tok = static_cast<int>(text_rng.below(static_cast<std::uint64_t>(spec.vocab_size)));
        } else {
          tok = s.label * block + static_cast<int>(text_rng.below(static_cast<std::uint64_t>(block)));
        }
        if (t > 0) text += ' ';
        text += fmt::format("w{}", tok);
      }
      s.raw_text = s.clean_text = s.prompt_text = text;

      int shown = s.label;
      const bool faithful = image_rng.uniform() < spec.q;
      const int other = static_cast<int>(image_rng.below(static_cast<std::uint64_t>(k - 1)));
      if (!faithful) shown = other >= s.label ? other + 1 : other;
      Image img = class_pattern(shown, k, spec.image_size);
      for (auto& px : img.pixels) {
        const double v = static_cast<double>(px) + spec.pixel_noise * image_rng.normal();
        px = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }

      const std::string fp = fmt::format("synthetic|pattern-v1|seed={}|{}x{}|prompt={:016x}", seed, spec.image_size,
                                         spec.image_size, fnv1a64(s.id, fnv1a64(spec_key)));
      task.index.entries[s.id] = {split_name + "/" + gen::cache_file_name(s.id), fp, split};
      if (cache_root) gen::cache_store({s.id, img, fp}, root / split_name);
      task.images.emplace(s.id, std::move(img));
      samples.push_back(std::move(s));
    }
  }
  ds.validate();
  if (cache_root) task.index.save(root / "index.json");
  return task;
}

// -- run config -------------------------------------------------------------------

namespace {

arch::EncoderSpec encoder_from(const json& j, arch::EncoderKind kind, const arch::EncoderSpec& fallback,
                               const std::string& where) {
  if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be an object", where));
  json merged = arch::to_json(fallback);
  if (fallback.kind == arch::EncoderKind::toy_text) merged.erase("vocab_size");
  for (const auto& [key, value] : j.items()) {
    if (key == "vocab_size") throw ConfigError(fmt::format("'{}.vocab_size' is derived from the tokenizer", where));
    merged[key] = value;
  }
  try {
    return arch::encoder_spec_from_json(merged, kind);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad encoder '{}': {}", where, e.what()));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("bad encoder '{}': {}", where, e.what()));
  }
}

json encoder_json(const arch::EncoderSpec& s) {
  json j = arch::to_json(s);
  j.erase("vocab_size");
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("the seed list is empty");
  if (dataset.kind == corpus::DatasetKind::synthetic) {
    dataset.synthetic.validate();
  } else if (!fs::exists(dataset.path)) {
    throw ConfigError(fmt::format("dataset path '{}' does not exist", dataset.path.string()));
  }
  if (generator.backend != "mock" && generator.backend != "remote")
    throw ConfigError(fmt::format("unknown generator backend '{}'", generator.backend));
  if (generator.backend == "remote" && generator.remote.url.empty())
    throw ConfigError("the remote generator needs generator.remote.url");
  if (generator.size.height <= 0 || generator.size.width <= 0) throw ConfigError("generator size must be positive");
  if (generator.workers < 1) throw ConfigError("generator.workers must be at least 1");
  if (init == InitScheme::pretrained && (!pretrained || !fs::exists(*pretrained)))
    throw ConfigError("pretrained init needs an existing 'pretrained' weights file");
  teacher.validate();
  student.validate();
  image_classifier.validate();
  if (student.modality() != arch::Modality::text) throw ConfigError("the student must use a text encoder");
  if (image_classifier.modality() != arch::Modality::image)
    throw ConfigError("the image-only classifier must use an image encoder");
  if (student.d_e != teacher.d_e) throw ConfigError("student and teacher must share d_e");
  if (max_vocab < 5) throw ConfigError("tokenizer.max_vocab is too small");
  train.validate();
  distill.validate();
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"dataset", "generator", "teacher", "student", "image_classifier", "init", "pretrained",
                       "tokenizer", "train", "distill", "seeds", "output_dir"},
                      "config");
  RunConfig c;
  try {
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      reject_unknown_keys(d, {"kind", "path", "synthetic", "data_seed"}, "dataset");
      c.dataset.kind = corpus::parse_dataset_kind(get_or<std::string>(d, "kind", "synthetic", "dataset"));
      c.dataset.path = get_or<std::string>(d, "path", "", "dataset");
      if (d.contains("synthetic")) c.dataset.synthetic = synthetic_spec_from_json(d.at("synthetic"));
      c.dataset.data_seed = get_or(d, "data_seed", c.dataset.data_seed, "dataset");
    }
    if (j.contains("generator")) {
      const json& g = j.at("generator");
      reject_unknown_keys(g, {"backend", "height", "width", "seed", "workers", "remote"}, "generator");
      c.generator.backend = get_or(g, "backend", c.generator.backend, "generator");
      c.generator.size.height = get_or(g, "height", c.generator.size.height, "generator");
      c.generator.size.width = get_or(g, "width", c.generator.size.width, "generator");
      c.generator.seed = get_or(g, "seed", c.generator.seed, "generator");
      c.generator.workers = get_or(g, "workers", c.generator.workers, "generator");
      if (g.contains("remote")) {
        const json& r = g.at("remote");
        const std::string where = "generator.remote";
        reject_unknown_keys(r,
                            {"url", "path", "model", "timeout_ms", "max_attempts", "backoff_base_ms",
                             "backoff_factor", "settings", "max_concurrency"},
                            where);
        auto& rc = c.generator.remote;
        rc.url = get_or(r, "url", rc.url, where);
        rc.path = get_or(r, "path", rc.path, where);
        rc.model_id = get_or(r, "model", rc.model_id, where);
        rc.timeout = std::chrono::milliseconds(get_or<std::int64_t>(r, "timeout_ms", rc.timeout.count(), where));
        rc.retry.max_attempts = get_or(r, "max_attempts", rc.retry.max_attempts, where);
        rc.retry.base =
            std::chrono::milliseconds(get_or<std::int64_t>(r, "backoff_base_ms", rc.retry.base.count(), where));
        rc.retry.factor = get_or(r, "backoff_factor", rc.retry.factor, where);
        rc.settings = r.value("settings", rc.settings);
        rc.max_concurrency = get_or(r, "max_concurrency", rc.max_concurrency, where);
      }
    }
    if (j.contains("teacher")) {
      const json& t = j.at("teacher");
      reject_unknown_keys(t, {"text", "image", "fusion_heads", "d_e"}, "teacher");
      c.teacher.text = encoder_from(t.value("text", json::object()), arch::EncoderKind::toy_text, c.teacher.text,
                                    "teacher.text");
      c.teacher.image = encoder_from(t.value("image", json::object()), arch::EncoderKind::toy_image, c.teacher.image,
                                     "teacher.image");
      c.teacher.fusion_heads = get_or(t, "fusion_heads", c.teacher.fusion_heads, "teacher");
      c.teacher.d_e = get_or(t, "d_e", c.teacher.d_e, "teacher");
    }
    c.student.encoder = c.teacher.text;
    c.student.d_e = c.teacher.d_e;
    if (j.contains("student")) {
      const json& s = j.at("student");
      reject_unknown_keys(s, {"encoder", "d_e"}, "student");
      c.student.encoder = encoder_from(s.value("encoder", json::object()), arch::EncoderKind::toy_text,
                                       c.student.encoder, "student.encoder");
      c.student.d_e = get_or(s, "d_e", c.student.d_e, "student");
    }
    c.image_classifier.encoder = c.teacher.image;
    c.image_classifier.d_e = c.teacher.d_e;
    if (j.contains("image_classifier")) {
      const json& s = j.at("image_classifier");
      reject_unknown_keys(s, {"encoder", "d_e"}, "image_classifier");
      c.image_classifier.encoder = encoder_from(s.value("encoder", json::object()), arch::EncoderKind::toy_image,
                                                c.image_classifier.encoder, "image_classifier.encoder");
      c.image_classifier.d_e = get_or(s, "d_e", c.image_classifier.d_e, "image_classifier");
    }
    const std::string init = get_or<std::string>(j, "init", "xavier", "config");
    if (init == "xavier") {
      c.init = InitScheme::xavier;
    } else if (init == "pretrained") {
      c.init = InitScheme::pretrained;
    } else {
      throw ConfigError(fmt::format("unknown init scheme '{}'", init));
    }
    if (j.contains("pretrained")) c.pretrained = get_or<std::string>(j, "pretrained", "", "config");
    if (j.contains("tokenizer")) {
      reject_unknown_keys(j.at("tokenizer"), {"max_vocab"}, "tokenizer");
      c.max_vocab = get_or(j.at("tokenizer"), "max_vocab", c.max_vocab, "tokenizer");
    }
    if (j.contains("train")) c.train = train::train_config_from_json(j.at("train"));
    if (j.contains("distill")) c.distill = distill::distill_config_from_json(j.at("distill"));
    c.seeds = get_or(j, "seeds", c.seeds, "config");
    c.output_dir = get_or<std::string>(j, "output_dir", "", "config");
  } catch (const SchemaError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = {{"kind", corpus::to_string(c.dataset.kind)},
                  {"path", c.dataset.path.string()},
                  {"synthetic", to_json(c.dataset.synthetic)},
                  {"data_seed", c.dataset.data_seed}};
  const auto& r = c.generator.remote;
  j["generator"] = {{"backend", c.generator.backend},
                    {"height", c.generator.size.height},
                    {"width", c.generator.size.width},
                    {"seed", c.generator.seed},
                    {"workers", c.generator.workers},
                    {"remote",
                     {{"url", r.url},
                      {"path", r.path},
                      {"model", r.model_id},
                      {"timeout_ms", r.timeout.count()},
                      {"max_attempts", r.retry.max_attempts},
                      {"backoff_base_ms", r.retry.base.count()},
                      {"backoff_factor", r.retry.factor},
                      {"settings", r.settings},
                      {"max_concurrency", r.max_concurrency}}}};
  j["teacher"] = {{"text", encoder_json(c.teacher.text)},
                  {"image", encoder_json(c.teacher.image)},
                  {"fusion_heads", c.teacher.fusion_heads},
                  {"d_e", c.teacher.d_e}};
  j["student"] = {{"encoder", encoder_json(c.student.encoder)}, {"d_e", c.student.d_e}};
  j["image_classifier"] = {{"encoder", encoder_json(c.image_classifier.encoder)}, {"d_e", c.image_classifier.d_e}};
  j["init"] = c.init == InitScheme::xavier ? "xavier" : "pretrained";
  if (c.pretrained) j["pretrained"] = c.pretrained->string();
  j["tokenizer"] = {{"max_vocab", c.max_vocab}};
  j["train"] = train::to_json(c.train);
  j["distill"] = distill::to_json(c.distill);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir.string();
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError(fmt::format("config file '{}' does not exist", path.string()));
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config file '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return run_config_from_json(j);
}

// -- results ----------------------------------------------------------------------

const ResultRow& ResultsTable::row(const std::string& model) const {
  for (const auto& r : rows)
    if (r.model == model) return r;
  throw PreconditionError(fmt::format("no results row '{}'", model));
}

json to_json(const ResultsTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"model", r.model},
                    {"text", r.text},
                    {"image", r.image},
                    {"ce_hard", r.ce_hard},
                    {"ce_soft", r.ce_soft},
                    {"emb", r.emb},
                    {"per_seed", r.per_seed},
                    {"sources", r.sources},
                    {"mean", r.mean}});
  return {{"kind", t.kind == TableKind::models ? "models" : "ablation"},
          {"dataset", t.dataset},
          {"seeds", t.seeds},
          {"rows", rows}};
}

ResultsTable results_from_json(const json& j) {
  ResultsTable t;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "models" && kind != "ablation") throw SchemaError("unknown results kind '" + kind + "'");
    t.kind = kind == "models" ? TableKind::models : TableKind::ablation;
    t.dataset = j.at("dataset").get<std::string>();
    t.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& r : j.at("rows")) {
      ResultRow row;
      row.model = r.at("model").get<std::string>();
      row.text = r.at("text").get<bool>();
      row.image = r.at("image").get<bool>();
      row.ce_hard = r.at("ce_hard").get<bool>();
      row.ce_soft = r.at("ce_soft").get<bool>();
      row.emb = r.at("emb").get<bool>();
      row.per_seed = r.at("per_seed").get<std::vector<double>>();
      row.sources = r.at("sources").get<std::vector<std::string>>();
      row.mean = r.at("mean").get<double>();
      t.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed results: ") + e.what());
  }
  return t;
}

namespace {

std::string accuracy_cell(double v) { return fmt::format("{:.4f}", v); }

// Numeric columns (per seed, then mean) of every row.
std::vector<std::vector<double>> numeric_columns(const ResultsTable& t) {
  std::vector<std::vector<double>> cols(t.seeds.size() + 1);
  for (const auto& r : t.rows) {
    if (r.per_seed.size() != t.seeds.size())
      throw PreconditionError(fmt::format("row '{}' has {} seed values, expected {}", r.model, r.per_seed.size(),
                                          t.seeds.size()));
    for (std::size_t s = 0; s < r.per_seed.size(); ++s) cols[s].push_back(r.per_seed[s]);
    cols.back().push_back(r.mean);
  }
  return cols;
}

// best[c][r]: row r holds the best (rounded) value of column c.
std::vector<std::vector<bool>> best_cells(const std::vector<std::vector<double>>& cols) {
  std::vector<std::vector<bool>> best;
  for (const auto& col : cols) {
    std::string top;
    double top_v = -1.0;
    for (double v : col)
      if (v > top_v) top_v = v;
    top = accuracy_cell(top_v);
    std::vector<bool> flags;
    for (double v : col) flags.push_back(accuracy_cell(v) == top);
    best.push_back(std::move(flags));
  }
  return best;
}

}  // namespace

std::string render_report(const ResultsTable& t, ReportFormat format) {
  if (t.rows.empty()) throw PreconditionError("cannot report an empty results table");
  const auto cols = numeric_columns(t);
  const auto best = best_cells(cols);
  const bool ablation = t.kind == TableKind::ablation;

  std::vector<std::string> value_headers;
  for (auto s : t.seeds) value_headers.push_back(fmt::format("seed {}", s));
  value_headers.emplace_back("mean");

  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << (ablation ? "model,ce_hard,ce_soft,emb_sqdist" : "model,text,image");
    for (auto s : t.seeds) out << ",seed_" << s;
    out << ",mean,best_in\n";
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& row = t.rows[r];
      out << escape_csv(row.model);
      if (ablation) {
        out << ',' << int{row.ce_hard} << ',' << int{row.ce_soft} << ',' << int{row.emb};
      } else {
        out << ',' << int{row.text} << ',' << int{row.image};
      }
      std::string best_in;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        out << ',' << accuracy_cell(cols[c][r]);
        if (best[c][r]) {
          if (!best_in.empty()) best_in += ';';
          best_in += c + 1 == cols.size() ? std::string("mean") : fmt::format("seed_{}", t.seeds[c]);
        }
      }
      out << ',' << best_in << '\n';
    }
    return out.str();
  }

  const char* check = "✓";
  out << (ablation ? "| Model | CE hard | CE soft | Embedding |" : "| Model | Text | Image |");
  for (const auto& h : value_headers) out << ' ' << h << " |";
  out << '\n' << (ablation ? "|---|:-:|:-:|:-:|" : "|---|:-:|:-:|");
  for (std::size_t c = 0; c < cols.size(); ++c) out << "--:|";
  out << '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    out << "| " << row.model << " |";
    if (ablation) {
      out << ' ' << (row.ce_hard ? check : "") << " | " << (row.ce_soft ? check : "") << " | "
          << (row.emb ? check : "") << " |";
    } else {
      out << ' ' << (row.text ? check : "") << " | " << (row.image ? check : "") << " |";
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const std::string cell = accuracy_cell(cols[c][r]);
      out << ' ' << (best[c][r] ? "**" + cell + "**" : cell) << " |";
    }
    out << '\n';
  }
  return out.str();
}

void emit_report(const ResultsTable& results, ReportFormat format, const fs::path& path) {
  const std::string text = render_report(results, format);
  try {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, text);
  } catch (const fs::filesystem_error& e) {
    throw IoError(fmt::format("cannot write report {}: {}", path.string(), e.what()));
  }
}

// -- pipeline ---------------------------------------------------------------------

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::ingest: return "ingest";
    case Stage::generate: return "generate";
    case Stage::train: return "train";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "unknown";
}

int exit_code(Stage stage) {
  switch (stage) {
    case Stage::ingest: return 3;
    case Stage::generate: return 4;
    case Stage::train: return 5;
    case Stage::evaluate:
    case Stage::report: return 6;
  }
  return 1;
}

std::string ablation_variant(bool ce_soft, bool emb) {
  if (ce_soft && emb) return "student (ce_soft + embedding)";
  if (ce_soft) return "student (ce_soft only)";
  if (emb) return "student (embedding only)";
  return "student (no KD terms)";
}

namespace {

const char* file_key(const std::string& model) {
  if (model == kBaseline) return "baseline";
  if (model == kImageOnly) return "image_only";
  if (model == kTeacher) return "teacher";
  if (model == kStudent) return "student";
  if (model == ablation_variant(false, false)) return "ablation-none";
  if (model == ablation_variant(true, false)) return "ablation-soft";
  if (model == ablation_variant(false, true)) return "ablation-emb";
  if (model == ablation_variant(true, true)) return "ablation-both";
  throw PreconditionError("unknown model '" + model + "'");
}

json comparable(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  return j;
}

}  // namespace

Pipeline::Pipeline(RunConfig cfg, fs::path out_dir) : cfg_(std::move(cfg)), out_(std::move(out_dir)) {
  if (out_.empty()) out_ = cfg_.output_dir;
  if (out_.empty()) throw ConfigError("no output directory given");
  cfg_.output_dir = out_;
  cfg_.validate();
  fs::create_directories(out_);

  lock_ = out_ / ".lock";
  std::FILE* f = std::fopen(lock_.c_str(), "wx");
  if (f == nullptr) {
    lock_.clear();
    throw PreconditionError(fmt::format("output directory {} is locked by another run (remove {} if stale)",
                                        out_.string(), (out_ / ".lock").string()));
  }
  std::fclose(f);

  try {
    const fs::path record = out_ / "run.json";
    if (fs::exists(record)) {
      json previous = json::parse(read_file(record));
      previous.erase("output_dir");
      if (previous != comparable(cfg_))
        throw ConfigError(
            fmt::format("{} holds artifacts of a different run config; use a fresh output directory", out_.string()));
    } else {
      write_file_atomic(record, to_json(cfg_).dump(2) + "\n");
    }
  } catch (...) {
    fs::remove(lock_);
    lock_.clear();
    throw;
  }
}

Pipeline::~Pipeline() {
  if (!lock_.empty()) {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
}

template <typename Fn>
decltype(auto) Pipeline::staged(Stage stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageFailed&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailed(stage, fmt::format("stage '{}' failed: {}", to_string(stage), e.what()));
  }
}

fs::path Pipeline::model_path(std::uint64_t seed, const std::string& model) const {
  return out_ / fmt::format("seed-{}", seed) / (std::string(file_key(model)) + ".ckpt");
}

const corpus::Dataset& Pipeline::ingest() {
  if (dataset_) return *dataset_;
  return staged(Stage::ingest, [&]() -> const corpus::Dataset& {
    const fs::path manifest = out_ / "dataset.jsonl";
    if (fs::exists(manifest)) {
      dataset_ = corpus::import_manifest(manifest);
    } else {
      if (cfg_.dataset.kind == corpus::DatasetKind::synthetic) {
        dataset_ = make_synthetic_task(cfg_.dataset.synthetic, cfg_.dataset.data_seed).dataset;
      } else {
        dataset_ = corpus::load_dataset(cfg_.dataset.path, cfg_.dataset.kind);
      }
      dataset_->validate();
      corpus::export_manifest(*dataset_, manifest);
    }
    return *dataset_;
  });
}

const gen::ImageStore& Pipeline::generate() {
  if (images_) return *images_;
  const corpus::Dataset& ds = ingest();
  return staged(Stage::generate, [&]() -> const gen::ImageStore& {
    const fs::path cache_root = out_ / "images";
    if (cfg_.dataset.kind == corpus::DatasetKind::synthetic) {
      const fs::path index_file = gen::dataset_cache_dir(cache_root, ds.name) / "index.json";
      if (fs::exists(index_file)) {
        images_ = gen::load_images(gen::ImageIndex::load(index_file), cache_root);
        if (images_->size() == ds.size()) return *images_;
      }
      images_ = make_synthetic_task(cfg_.dataset.synthetic, cfg_.dataset.data_seed, cache_root).images;
      return *images_;
    }
    gen::GenerateOptions opts{cfg_.generator.seed, cfg_.generator.size, cfg_.generator.workers};
    gen::ImageIndex index;
    if (cfg_.generator.backend == "remote") {
      gen::RemoteBackend backend(cfg_.generator.remote);
      index = gen::generate_all(ds, backend, cache_root, opts);
    } else {
      gen::MockBackend backend;
      index = gen::generate_all(ds, backend, cache_root, opts);
    }
    images_ = gen::load_images(index, cache_root);
    return *images_;
  });
}

const arch::Tokenizer& Pipeline::tokenizer() {
  if (tokenizer_) return *tokenizer_;
  const corpus::Dataset& ds = ingest();
  const fs::path file = out_ / "tokenizer.json";
  if (fs::exists(file)) {
    tokenizer_ = arch::Tokenizer::from_json(json::parse(read_file(file)));
  } else {
    std::vector<std::string> texts;
    for (const auto& s : ds.train) texts.push_back(corpus::model_input(s, ds.kind));
    tokenizer_ = arch::Tokenizer::build(texts, cfg_.max_vocab);
    write_file_atomic(file, tokenizer_->to_json().dump() + "\n");
  }
  return *tokenizer_;
}

train::TrainConfig Pipeline::train_config(std::uint64_t seed) const {
  train::TrainConfig tc = cfg_.train;
  tc.seed = seed;
  return tc;
}

namespace {

constexpr std::uint64_t kTeacherInit = 1;
constexpr std::uint64_t kTextInit = 2;
constexpr std::uint64_t kImageInit = 3;

template <typename Train>
train::TrainedModel cached_model(const fs::path& path, Train&& fn) {
  if (fs::exists(path)) return train::load_model(path);
  fs::create_directories(path.parent_path());
  train::TrainedModel m = fn(train::TrainIo{fs::path(path).replace_extension(".metrics.jsonl")});
  train::save_model(m, path);
  return m;
}

}  // namespace

void Pipeline::train_baselines() {
  const corpus::Dataset& ds = ingest();
  const gen::ImageStore& images = generate();
  const arch::Tokenizer& tok = tokenizer();
  staged(Stage::train, [&] {
    arch::ClassifierSpec text = cfg_.student;
    text.encoder.vocab_size = tok.size();
    text.num_classes = ds.num_classes;
    arch::ClassifierSpec image = cfg_.image_classifier;
    image.num_classes = ds.num_classes;
    for (auto seed : cfg_.seeds) {
      cached_model(model_path(seed, kBaseline), [&](const train::TrainIo& io) {
        auto init = init_weights(arch::classifier_shapes(text), cfg_.init, mix_seed(seed, kTextInit), cfg_.pretrained);
        return train::train_unimodal(text, tok, std::move(init), ds, nullptr, train_config(seed), io);
      });
      cached_model(model_path(seed, kImageOnly), [&](const train::TrainIo& io) {
        auto init = init_weights(arch::classifier_shapes(image), InitScheme::xavier, mix_seed(seed, kImageInit));
        return train::train_unimodal(image, tok, std::move(init), ds, &images, train_config(seed), io);
      });
    }
  });
}

train::TrainedModel Pipeline::teacher_for(std::uint64_t seed) {
  const corpus::Dataset& ds = ingest();
  const gen::ImageStore& images = generate();
  const arch::Tokenizer& tok = tokenizer();
  arch::TeacherSpec spec = cfg_.teacher;
  spec.text.vocab_size = tok.size();
  spec.num_classes = ds.num_classes;
  return cached_model(model_path(seed, kTeacher), [&](const train::TrainIo& io) {
    auto init = init_weights(arch::teacher_shapes(spec), cfg_.init, mix_seed(seed, kTeacherInit), cfg_.pretrained);
    return train::train_teacher(spec, tok, std::move(init), ds, images, train_config(seed), io);
  });
}

void Pipeline::train_teachers() {
  staged(Stage::train, [&] {
    for (auto seed : cfg_.seeds) teacher_for(seed);
  });
}

void Pipeline::distill_students() {
  const corpus::Dataset& ds = ingest();
  const gen::ImageStore& images = generate();
  const arch::Tokenizer& tok = tokenizer();
  staged(Stage::train, [&] {
    arch::ClassifierSpec spec = cfg_.student;
    spec.encoder.vocab_size = tok.size();
    spec.num_classes = ds.num_classes;
    for (auto seed : cfg_.seeds) {
      if (fs::exists(model_path(seed, kStudent))) continue;
      const train::TrainedModel teacher = teacher_for(seed);
      cached_model(model_path(seed, kStudent), [&](const train::TrainIo& io) {
        auto init = init_weights(arch::classifier_shapes(spec), cfg_.init, mix_seed(seed, kTextInit), cfg_.pretrained);
        return train::distill_student(spec, tok, std::move(init), teacher, ds, images, train_config(seed),
                                      cfg_.distill, io);
      });
    }
  });
}

ResultsTable Pipeline::evaluate() {
  const corpus::Dataset& ds = ingest();
  const gen::ImageStore& images = generate();
  return staged(Stage::evaluate, [&] {
    ResultsTable t;
    t.kind = TableKind::models;
    t.dataset = ds.name;
    t.seeds = cfg_.seeds;
    const std::pair<const char*, std::pair<bool, bool>> models[] = {{kBaseline, {true, false}},
                                                                    {kImageOnly, {false, true}},
                                                                    {kTeacher, {true, true}},
                                                                    {kStudent, {true, false}}};
    for (const auto& [name, flags] : models) {
      ResultRow row;
      row.model = name;
      row.text = flags.first;
      row.image = flags.second;
      row.ce_soft = row.emb = std::string(name) == kStudent;
      for (auto seed : cfg_.seeds) {
        const fs::path path = model_path(seed, name);
        if (!fs::exists(path)) throw PreconditionError(fmt::format("missing checkpoint {}", path.string()));
        const train::TrainedModel m = train::load_model(path);
        row.per_seed.push_back(train::evaluate(m, ds.test, &images));
        row.sources.push_back(fs::relative(path, out_).generic_string());
      }
      double sum = 0.0;
      for (double v : row.per_seed) sum += v;
      row.mean = sum / static_cast<double>(row.per_seed.size());
      t.rows.push_back(std::move(row));
    }
    write_file_atomic(out_ / "results.json", to_json(t).dump(2) + "\n");
    return t;
  });
}

ResultsTable Pipeline::ablate() {
  const corpus::Dataset& ds = ingest();
  const gen::ImageStore& images = generate();
  const arch::Tokenizer& tok = tokenizer();
  ResultsTable t = staged(Stage::train, [&] {
    arch::ClassifierSpec spec = cfg_.student;
    spec.encoder.vocab_size = tok.size();
    spec.num_classes = ds.num_classes;
    ResultsTable table;
    table.kind = TableKind::ablation;
    table.dataset = ds.name;
    table.seeds = cfg_.seeds;
    const std::pair<bool, bool> variants[] = {{false, false}, {true, false}, {false, true}, {true, true}};
    for (const auto& [soft, emb] : variants) {
      ResultRow row;
      row.model = ablation_variant(soft, emb);
      row.text = true;
      row.ce_soft = soft;
      row.emb = emb;
      table.rows.push_back(std::move(row));
    }
    for (auto seed : cfg_.seeds) {
      std::optional<train::TrainedModel> teacher;
      for (auto& row : table.rows) {
        const fs::path path = model_path(seed, row.model);
        if (!fs::exists(path) && !teacher) teacher = teacher_for(seed);
        cached_model(path, [&](const train::TrainIo& io) {
          distill::DistillConfig dc = cfg_.distill;
          if (!row.ce_soft) dc.alpha = 0.0;
          if (!row.emb) dc.beta = 0.0;
          auto init =
              init_weights(arch::classifier_shapes(spec), cfg_.init, mix_seed(seed, kTextInit), cfg_.pretrained);
          return train::distill_student(spec, tok, std::move(init), *teacher, ds, images, train_config(seed), dc, io);
        });
      }
    }
    return table;
  });
  return staged(Stage::evaluate, [&] {
    for (auto& row : t.rows) {
      for (auto seed : cfg_.seeds) {
        const fs::path path = model_path(seed, row.model);
        row.per_seed.push_back(train::evaluate(train::load_model(path), ds.test, &images));
        row.sources.push_back(fs::relative(path, out_).generic_string());
      }
      double sum = 0.0;
      for (double v : row.per_seed) sum += v;
      row.mean = sum / static_cast<double>(row.per_seed.size());
    }
    write_file_atomic(out_ / "ablation.json", to_json(t).dump(2) + "\n");
    return t;
  });
}

void Pipeline::report(const ResultsTable& results, const std::string& stem) {
  staged(Stage::report, [&] {
    emit_report(results, ReportFormat::csv, out_ / (stem + ".csv"));
    emit_report(results, ReportFormat::markdown, out_ / (stem + ".md"));
  });
}

ResultsTable Pipeline::run() {
  ingest();
  generate();
  train_baselines();
  train_teachers();
  distill_students();
  ResultsTable t = evaluate();
  report(t, "results");
  return t;
}

ResultsTable run_pipeline(const RunConfig& cfg) {
  Pipeline p(cfg, cfg.output_dir);
  return p.run();
}

ResultsTable ablate(const RunConfig& cfg) {
  Pipeline p(cfg, cfg.output_dir);
  ResultsTable t = p.ablate();
  p.report(t, "ablation");
  return t;
}

}  // namespace privkd::harness
