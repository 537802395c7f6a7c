// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/genimage.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "privkd/errors.hpp"
#include "privkd/params.hpp"
#include "privkd/rng.hpp"

// Last: pulls in <resolv.h>, whose _res macro collides with Eigen.
#include <httplib.h>

namespace privkd::gen {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fingerprint(const GeneratorBackend& backend, std::string_view prompt, std::uint64_t seed, ImageSize size) {
  return fmt::format("{}|{}|seed={}|{}x{}|prompt={:016x}", backend.name(), backend.version(), seed, size.height,
                     size.width, fnv1a64(prompt));
}

// -- mock -----------------------------------------------------------------------

namespace {

struct Rgb {
  int r, g, b;
};

Rgb random_color(Rng& rng) {
  return {static_cast<int>(rng.below(256)), static_cast<int>(rng.below(256)), static_cast<int>(rng.below(256))};
}

void blend(Image& img, int y, int x, const Rgb& c, int alpha) {
  const int keep = 256 - alpha;
  img.at(y, x, 0) = static_cast<std::uint8_t>((img.at(y, x, 0) * keep + c.r * alpha) >> 8);
  img.at(y, x, 1) = static_cast<std::uint8_t>((img.at(y, x, 1) * keep + c.g * alpha) >> 8);
  img.at(y, x, 2) = static_cast<std::uint8_t>((img.at(y, x, 2) * keep + c.b * alpha) >> 8);
}

}  // namespace

Image render_mock(std::string_view prompt, std::uint64_t seed, ImageSize size) {
  if (size.height <= 0 || size.width <= 0) throw PreconditionError("image size must be positive");
  Rng rng(mix_seed(fnv1a64(prompt), seed));
  const int h = size.height, w = size.width;
  Image img(h, w);

  const Rgb top = random_color(rng), bottom = random_color(rng);
  const int span = std::max(1, h - 1);
  for (int y = 0; y < h; ++y) {
    const Rgb c{(top.r * (span - y) + bottom.r * y) / span, (top.g * (span - y) + bottom.g * y) / span,
                (top.b * (span - y) + bottom.b * y) / span};
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>(c.r);
      img.at(y, x, 1) = static_cast<std::uint8_t>(c.g);
      img.at(y, x, 2) = static_cast<std::uint8_t>(c.b);
    }
  }

  const int shapes = 3 + static_cast<int>(rng.below(4));
  const int small = std::max(1, std::min(h, w));
  for (int s = 0; s < shapes; ++s) {
    const bool disc = rng.below(2) == 1;
    const Rgb color = random_color(rng);
    const int alpha = 96 + static_cast<int>(rng.below(129));
    if (disc) {
      const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
      const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
      const int r = std::max(1, small / 16 + static_cast<int>(rng.below(static_cast<std::uint64_t>(small / 4 + 1))));
      for (int y = std::max(0, cy - r); y < std::min(h, cy + r + 1); ++y)
        for (int x = std::max(0, cx - r); x < std::min(w, cx + r + 1); ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) blend(img, y, x, color, alpha);
    } else {
      const int rh = std::max(1, h / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h / 2 + 1))));
      const int rw = std::max(1, w / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w / 2 + 1))));
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
      for (int y = y0; y < std::min(h, y0 + rh); ++y)
        for (int x = x0; x < std::min(w, x0 + rw); ++x) blend(img, y, x, color, alpha);
    }
  }
  return img;
}

GeneratedImage mock_generate(const std::string& prompt, std::uint64_t seed, ImageSize size) {
  if (prompt.empty()) throw PreconditionError("cannot generate an image for an empty prompt");
  MockBackend backend;
  GeneratedImage out;
  out.image = backend.generate(prompt, seed, size);
  out.fingerprint = fingerprint(backend, prompt, seed, size);
  return out;
}

Image MockBackend::generate(const std::string& prompt, std::uint64_t seed, ImageSize size) {
  if (prompt.empty()) throw PreconditionError("cannot generate an image for an empty prompt");
  ++calls_;
  return render_mock(prompt, seed, size);
}

// -- remote ---------------------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay_after(int failures) const {
  const double ms = static_cast<double>(base.count()) * std::pow(factor, std::max(0, failures - 1));
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(ms)));
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

RemoteBackend::RemoteBackend(RemoteConfig cfg, Sleeper sleeper) : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)) {
  if (cfg_.url.empty()) throw ConfigError("remote generator needs a url");
  if (cfg_.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be at least 1");
}

std::string RemoteBackend::version() const {
  return fmt::format("{}|settings={:016x}", cfg_.model_id, fnv1a64(cfg_.settings.dump()));
}

Image RemoteBackend::generate(const std::string& prompt, std::uint64_t seed, ImageSize size) {
  return remote_generate(prompt, seed, size, cfg_, sleeper_).image;
}

namespace {

bool is_transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

RemoteResult remote_generate(const std::string& prompt, std::uint64_t seed, ImageSize size, const RemoteConfig& cfg,
                             const Sleeper& sleeper) {
  if (prompt.empty()) throw PreconditionError("cannot generate an image for an empty prompt");
  const json body = {{"prompt", prompt},         {"seed", seed},         {"width", size.width},
                     {"height", size.height},    {"model", cfg.model_id}, {"settings", cfg.settings}};
  const std::string payload = body.dump();

  httplib::Client client(cfg.url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  std::string last_error;
  for (int attempt = 1; attempt <= cfg.retry.max_attempts; ++attempt) {
    auto res = client.Post(cfg.path, payload, "application/json");
    if (res && res->status == 200) {
      DecodedPng png;
      try {
        png = decode_png(res->body);
      } catch (const IntegrityError& e) {
        throw ProtocolError(fmt::format("generator returned a body that is not a PNG: {}", e.what()));
      }
      if (png.image.height != size.height || png.image.width != size.width)
        throw ProtocolError(fmt::format("generator returned {}x{}, requested {}x{}", png.image.height, png.image.width,
                                        size.height, size.width));
      return {std::move(png.image), attempt};
    }
    if (res) {
      last_error = fmt::format("HTTP {}", res->status);
      if (!is_transient_status(res->status))
        throw BackendError(fmt::format("generator rejected the request: {}", last_error));
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < cfg.retry.max_attempts) sleeper(cfg.retry.delay_after(attempt));
  }
  throw BackendError(fmt::format("generator failed after {} attempts (last: {})", cfg.retry.max_attempts, last_error));
}

// -- cache ----------------------------------------------------------------------

std::string cache_file_name(std::string_view sample_id) {
  std::string out;
  for (char c : sample_id) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '-' || c == '_' || c == '.') {
      out.push_back(c);
    } else {
      out += fmt::format("%{:02X}", u);
    }
  }
  if (out.empty() || out == "." || out == "..") throw PreconditionError("invalid sample id for the image cache");
  return out + ".png";
}

std::optional<GeneratedImage> cache_lookup(const std::string& sample_id, const std::string& fp, const fs::path& dir) {
  if (!fs::is_directory(dir)) return std::nullopt;
  const fs::path file = dir / cache_file_name(sample_id);
  if (!fs::exists(file)) return std::nullopt;
  DecodedPng png;
  try {
    png = decode_png(read_file(file));
  } catch (const IntegrityError& e) {
    throw IntegrityError(fmt::format("corrupt cached image {}: {}", file.string(), e.what()));
  }
  if (!png.fingerprint || *png.fingerprint != fp) return std::nullopt;
  return GeneratedImage{sample_id, std::move(png.image), fp};
}

void cache_store(const GeneratedImage& image, const fs::path& dir) {
  write_file_atomic(dir / cache_file_name(image.sample_id), encode_png(image.image, image.fingerprint));
}

void ImageIndex::save(const fs::path& file) const {
  json j;
  j["version"] = 1;
  j["dataset"] = dataset;
  j["generator"] = generator;
  json entries_json = json::object();
  for (const auto& [id, e] : entries)
    entries_json[id] = {{"path", e.path}, {"fingerprint", e.fingerprint}, {"split", corpus::to_string(e.split)}};
  j["entries"] = std::move(entries_json);
  write_file_atomic(file, j.dump(1) + "\n");
}

ImageIndex ImageIndex::load(const fs::path& file) {
  ImageIndex idx;
  try {
    const json j = json::parse(read_file(file));
    if (j.value("version", 0) != 1) throw SchemaError("unsupported image index version in " + file.string());
    idx.dataset = j.at("dataset").get<std::string>();
    idx.generator = j.value("generator", json::object());
    for (const auto& [id, e] : j.at("entries").items())
      idx.entries[id] = {e.at("path").get<std::string>(), e.at("fingerprint").get<std::string>(),
                         corpus::parse_split(e.at("split").get<std::string>())};
  } catch (const json::exception& e) {
    throw SchemaError("malformed image index " + file.string() + ": " + e.what());
  }
  return idx;
}

fs::path dataset_cache_dir(const fs::path& cache_root, const std::string& dataset) { return cache_root / dataset; }

ImageIndex generate_all(const corpus::Dataset& dataset, GeneratorBackend& backend, const fs::path& cache_root,
                        const GenerateOptions& options) {
  if (dataset.size() == 0) throw PreconditionError("cannot generate images for an empty dataset");
  const fs::path root = dataset_cache_dir(cache_root, dataset.name);
  fs::create_directories(root);

  struct Job {
    const corpus::TextSample* sample;
    corpus::Split split;
  };
  std::vector<Job> jobs;
  for (auto split : {corpus::Split::train, corpus::Split::val, corpus::Split::test})
    for (const auto& s : dataset.split(split)) jobs.push_back({&s, split});

  struct Outcome {
    std::optional<IndexEntry> entry;
    std::string error;
  };
  std::vector<Outcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      const std::string dir_name = corpus::to_string(job.split);
      const fs::path dir = root / dir_name;
      try {
        std::string prompt = job.sample->prompt_text;
        if (prompt.empty()) throw PreconditionError("empty prompt");
        const std::string fp = fingerprint(backend, prompt, options.seed, options.size);
        if (!cache_lookup(job.sample->id, fp, dir)) {
          GeneratedImage img{job.sample->id, backend.generate(prompt, options.seed, options.size), fp};
          cache_store(img, dir);
        }
        outcomes[i].entry = IndexEntry{dir_name + "/" + cache_file_name(job.sample->id), fp, job.split};
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    }
  };

  const int workers = std::max(1, std::min(options.workers, backend.max_concurrency()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  ImageIndex index;
  index.dataset = dataset.name;
  index.generator = {{"backend", backend.name()},
                     {"version", backend.version()},
                     {"seed", options.seed},
                     {"height", options.size.height},
                     {"width", options.size.width}};
  std::vector<std::string> failed;
  std::string first_error;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (outcomes[i].entry) {
      index.entries[jobs[i].sample->id] = *outcomes[i].entry;
    } else {
      failed.push_back(jobs[i].sample->id);
      if (first_error.empty()) first_error = outcomes[i].error;
    }
  }
  index.save(root / "index.json");
  if (!failed.empty()) {
    std::string what = fmt::format("image generation failed for {} sample(s), first: {} ({})", failed.size(),
                                   failed.front(), first_error);
    throw GenerationFailed(what, std::move(failed));
  }
  return index;
}

ImageStore load_images(const ImageIndex& index, const fs::path& cache_root) {
  const fs::path root = dataset_cache_dir(cache_root, index.dataset);
  ImageStore store;
  store.reserve(index.entries.size());
  for (const auto& [id, entry] : index.entries) {
    const fs::path file = root / entry.path;
    DecodedPng png;
    try {
      png = decode_png(read_file(file));
    } catch (const IoError&) {
      throw IntegrityError("indexed image is missing: " + file.string());
    }
    if (!png.fingerprint || *png.fingerprint != entry.fingerprint)
      throw IntegrityError("cached image fingerprint does not match the index: " + file.string());
    store.emplace(id, std::move(png.image));
  }
  return store;
}

}  // namespace privkd::gen
