// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/params.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "privkd/errors.hpp"
#include "privkd/rng.hpp"

namespace privkd {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'K', 'D', 'C', 'K', 'P', 'T', '1'};

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t h) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n), h);
}

}  // namespace

ag::Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return it->second;
}

const ag::Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw PreconditionError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::insert(const std::string& name, ag::Matrix value) {
  ag::Parameter p;
  p.value = std::move(value);
  p.zero_grad();
  params_.insert_or_assign(name, std::move(p));
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::string ParameterStore::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : params_) {
    h = fnv1a64(name, h);
    const std::array<std::int64_t, 2> shape = {p.value.rows(), p.value.cols()};
    h = hash_bytes(shape.data(), sizeof(shape), h);
    h = hash_bytes(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double), h);
  }
  return fmt::format("{:016x}", h);
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.params_.size() != b.params_.size()) return false;
  auto ib = b.params_.begin();
  for (const auto& [name, p] : a.params_) {
    if (name != ib->first) return false;
    const auto& q = ib->second.value;
    if (p.value.rows() != q.rows() || p.value.cols() != q.cols()) return false;
    if (std::memcmp(p.value.data(), q.data(), static_cast<std::size_t>(q.size()) * sizeof(double)) != 0) return false;
    ++ib;
  }
  return true;
}

ParameterStore init_weights(const std::vector<ParamShape>& shapes, InitScheme scheme, std::uint64_t seed,
                            const std::optional<fs::path>& asset) {
  for (const auto& s : shapes) {
    if (s.rows <= 0 || s.cols <= 0)
      throw PreconditionError(fmt::format("parameter '{}' has a zero dimension ({}x{})", s.name, s.rows, s.cols));
  }

  std::optional<Checkpoint> ckpt;
  if (scheme == InitScheme::pretrained) {
    if (!asset) throw PreconditionError("pretrained initialisation requires an asset path");
    if (!fs::exists(*asset)) throw IoError("pretrained asset not found: " + asset->string());
    ckpt = load_checkpoint(*asset);
    std::size_t shared = 0;
    for (const auto& s : shapes) {
      if (!ckpt->params.contains(s.name)) continue;
      const auto& v = ckpt->params.at(s.name).value;
      if (v.rows() != s.rows || v.cols() != s.cols)
        throw SchemaError(fmt::format("pretrained parameter '{}' is {}x{}, expected {}x{}", s.name, v.rows(),
                                      v.cols(), s.rows, s.cols));
      ++shared;
    }
    if (shared == 0) throw SchemaError("pretrained asset shares no tensor with the model: " + asset->string());
  }

  std::vector<ParamShape> ordered = shapes;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  Rng rng(seed);
  ParameterStore out;
  for (const auto& s : ordered) {
    ag::Matrix m(s.rows, s.cols);
    switch (s.init) {
      case InitKind::zeros:
        m.setZero();
        break;
      case InitKind::ones:
        m.setOnes();
        break;
      case InitKind::xavier: {
        const double stddev = std::sqrt(2.0 / static_cast<double>(s.rows + s.cols));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
        break;
      }
    }
    if (ckpt && ckpt->params.contains(s.name)) m = ckpt->params.at(s.name).value;
    out.insert(s.name, std::move(m));
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const fs::path& path, const ParameterStore& params, const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["metadata"] = metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, p] : params) {
    manifest["tensors"].push_back(
        {{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(p.value.data()),
                   static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  const std::string header = manifest.dump();
  const std::uint64_t header_len = header.size();
  std::string bytes(kMagic.begin(), kMagic.end());
  bytes.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  bytes += header;
  bytes += payload;
  write_file_atomic(path, bytes);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kMagic.size() + 8 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw SchemaError("not a checkpoint file: " + path.string());
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + kMagic.size(), sizeof(header_len));
  const std::size_t payload_start = kMagic.size() + 8 + header_len;
  if (payload_start > bytes.size()) throw IntegrityError("truncated checkpoint manifest: " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(kMagic.size() + 8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("bad checkpoint manifest in " + path.string() + ": " + e.what());
  }
  if (manifest.value("version", 0) != 1) throw SchemaError("unsupported checkpoint version in " + path.string());

  Checkpoint out;
  out.metadata = manifest.value("metadata", nlohmann::json::object());
  const std::size_t payload_size = bytes.size() - payload_start;
  for (const auto& t : manifest.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::size_t>();
    const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (rows < 0 || cols < 0 || offset + n > payload_size)
      throw IntegrityError("checkpoint tensor '" + t.at("name").get<std::string>() + "' exceeds payload");
    ag::Matrix m(rows, cols);
    std::memcpy(m.data(), bytes.data() + payload_start + offset, n);
    out.params.insert(t.at("name").get<std::string>(), std::move(m));
  }
  return out;
}

}  // namespace privkd
