// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace privkd {

/// Height × width × RGB, 8 bits per channel, row-major and interleaved.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  bool empty() const { return height <= 0 || width <= 0; }
  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Area-averaging resample to (height, width). Throws PreconditionError on empty input.
Image resize(const Image& src, int height, int width);

/// PNG encoding with an optional tEXt "fingerprint" chunk.
std::string encode_png(const Image& image, const std::string& fingerprint = {});

struct DecodedPng {
  Image image;
  std::optional<std::string> fingerprint;
};

/// Throws IntegrityError on any decode failure (bad signature, CRC, truncation).
DecodedPng decode_png(const std::string& bytes);

}  // namespace privkd
