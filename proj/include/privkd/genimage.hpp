// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Privileged-image generation: one image per text sample, produced by a
// pluggable backend and cached as PNG files whose tEXt chunk carries the
// fingerprint (backend, version, seed, size, prompt hash) they were made with.
//
// Cache layout:  <cache_root>/<dataset>/<split>/<sample_id>.png
//                <cache_root>/<dataset>/index.json

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "privkd/corpus.hpp"
#include "privkd/image.hpp"

namespace privkd::gen {

struct ImageSize {
  int height = 512;
  int width = 512;
};

struct GeneratedImage {
  std::string sample_id;
  Image image;
  std::string fingerprint;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;

  virtual std::string name() const = 0;
  /// Model id plus any settings that change the output.
  virtual std::string version() const = 0;
  virtual bool deterministic() const = 0;
  virtual std::size_t prompt_budget() const { return corpus::kPromptBudget; }
  /// Upper bound on concurrent generate() calls.
  virtual int max_concurrency() const { return 1; }

  /// Throws BackendError when the image cannot be produced.
  virtual Image generate(const std::string& prompt, std::uint64_t seed, ImageSize size) = 0;
};

std::string fingerprint(const GeneratorBackend& backend, std::string_view prompt, std::uint64_t seed, ImageSize size);

// -- mock backend -------------------------------------------------------------

/// Procedural image that is a pure function of (prompt, seed, size): a
/// vertical two-colour gradient overlaid with alpha-blended rectangles and
/// discs. Integer arithmetic only, so buffers are identical on every platform.
Image render_mock(std::string_view prompt, std::uint64_t seed, ImageSize size);

/// render_mock plus fingerprint; throws PreconditionError for an empty prompt.
GeneratedImage mock_generate(const std::string& prompt, std::uint64_t seed, ImageSize size);

class MockBackend : public GeneratorBackend {
 public:
  std::string name() const override { return "mock"; }
  std::string version() const override { return "procedural-v1"; }
  bool deterministic() const override { return true; }
  int max_concurrency() const override { return 8; }
  Image generate(const std::string& prompt, std::uint64_t seed, ImageSize size) override;

  std::size_t calls() const { return calls_.load(); }

 private:
  std::atomic<std::size_t> calls_{0};
};

// -- remote backend -------------------------------------------------------------

/// Exponential backoff between attempts: base * factor^(failures - 1).
struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base{1000};
  double factor = 2.0;

  std::chrono::milliseconds delay_after(int failures) const;
};

/// HTTP generation protocol.
///
///   POST <url><path>   Content-Type: application/json
///   {"prompt": str, "seed": u64, "width": int, "height": int, "model": str, "settings": {...}}
///
///   200 with an image/png body of exactly width × height pixels.
///   408, 429 and 5xx responses and transport errors are retried; any other
///   status fails immediately. A 200 whose body is not such a PNG is a
///   ProtocolError and is not retried.
struct RemoteConfig {
  std::string url;  ///< scheme://host:port
  std::string path = "/generate";
  std::string model_id = "stable-diffusion-2";
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
  nlohmann::json settings = nlohmann::json::object();  ///< sampler steps, guidance, ...
  int max_concurrency = 1;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

class RemoteBackend : public GeneratorBackend {
 public:
  explicit RemoteBackend(RemoteConfig cfg, Sleeper sleeper = real_sleeper());

  std::string name() const override { return "remote"; }
  std::string version() const override;
  bool deterministic() const override { return true; }
  int max_concurrency() const override { return cfg_.max_concurrency; }
  Image generate(const std::string& prompt, std::uint64_t seed, ImageSize size) override;

  const RemoteConfig& config() const { return cfg_; }

 private:
  RemoteConfig cfg_;
  Sleeper sleeper_;
};

struct RemoteResult {
  Image image;
  int attempts = 0;
};

/// One prompt through the HTTP protocol with retries.
RemoteResult remote_generate(const std::string& prompt, std::uint64_t seed, ImageSize size, const RemoteConfig& cfg,
                             const Sleeper& sleeper = real_sleeper());

// -- cache and index --------------------------------------------------------------

/// File name used for a sample id (path separators and other unsafe bytes escaped).
std::string cache_file_name(std::string_view sample_id);

/// Returns the cached image iff `dir/<id>.png` exists and carries `fingerprint`.
/// Throws IntegrityError if the file exists but cannot be decoded.
std::optional<GeneratedImage> cache_lookup(const std::string& sample_id, const std::string& fingerprint,
                                           const std::filesystem::path& dir);

/// Encodes and writes atomically (temporary file + rename).
void cache_store(const GeneratedImage& image, const std::filesystem::path& dir);

struct IndexEntry {
  std::string path;  ///< relative to the dataset cache directory
  std::string fingerprint;
  corpus::Split split = corpus::Split::train;

  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

struct ImageIndex {
  std::string dataset;
  nlohmann::json generator = nlohmann::json::object();
  std::map<std::string, IndexEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool contains(const std::string& id) const { return entries.contains(id); }

  void save(const std::filesystem::path& file) const;
  static ImageIndex load(const std::filesystem::path& file);

  friend bool operator==(const ImageIndex&, const ImageIndex&) = default;
};

struct GenerateOptions {
  std::uint64_t seed = 0;
  ImageSize size;
  int workers = 1;
};

std::filesystem::path dataset_cache_dir(const std::filesystem::path& cache_root, const std::string& dataset);

/// Generates (or reuses) one image per sample of every split and persists the
/// index. On failures the partial index is still written, then
/// GenerationFailed lists the failed sample ids.
ImageIndex generate_all(const corpus::Dataset& dataset, GeneratorBackend& backend,
                        const std::filesystem::path& cache_root, const GenerateOptions& options = {});

/// Decoded images keyed by sample id.
using ImageStore = std::unordered_map<std::string, Image>;

/// Loads every indexed image and checks its fingerprint against the index.
ImageStore load_images(const ImageIndex& index, const std::filesystem::path& cache_root);

}  // namespace privkd::gen
