// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "privkd/autograd.hpp"

namespace privkd {

enum class InitKind { xavier, zeros, ones };

/// Declared shape of one named tensor and how it is initialised.
struct ParamShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  InitKind init = InitKind::xavier;
};

enum class InitScheme { xavier, pretrained };

/// Named tensors of one model. Iteration order is the lexicographic name order,
/// which fixes the order of random draws and of checkpoint records.
class ParameterStore {
 public:
  ag::Parameter& at(const std::string& name);
  const ag::Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }
  void insert(const std::string& name, ag::Matrix value);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  /// 64-bit FNV-1a over names, shapes and raw value bytes, as 16 hex digits.
  std::string digest() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::map<std::string, ag::Parameter> params_;
};

/// Builds the tensors listed in `shapes`.
///
/// xavier: every xavier-kind matrix is drawn from N(0, 2 / (rows + cols)) using
/// a deterministic generator seeded with `seed`; zeros/ones kinds are constant.
/// pretrained: tensors present in the checkpoint at `asset` are copied (shapes
/// must match) and the rest are drawn as for xavier, so an encoder checkpoint
/// initialises the encoders under fresh heads. An asset sharing no tensor
/// with `shapes` is rejected.
ParameterStore init_weights(const std::vector<ParamShape>& shapes, InitScheme scheme, std::uint64_t seed,
                            const std::optional<std::filesystem::path>& asset = std::nullopt);

/// Checkpoint container: an 8-byte magic, a little-endian u64 manifest length,
/// a JSON manifest ({"version", "metadata", "tensors": [{name, rows, cols, offset}]})
/// and the concatenated little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct Checkpoint {
  ParameterStore params;
  nlohmann::json metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `bytes` to `path` through a temporary sibling and an atomic rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace privkd
