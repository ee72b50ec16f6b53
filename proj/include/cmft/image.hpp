// Copyright 2026 The CMFT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CMFT_IMAGE_HPP_
#define CMFT_IMAGE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cmft {

// 8-bit image with interleaved channels in row-major order (the PNM layout).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

// Binary PNM with maxval 255: P6 for 3 channels, P5 for 1. The writer emits
// "P6\n<w> <h>\n255\n" followed by the raw samples.
std::vector<std::uint8_t> encode_pnm(const Image& image);

// Accepts '#' comments and arbitrary whitespace in the header. Throws
// FormatError on an unknown magic, a maxval other than 255, zero extents or a
// truncated payload. Trailing bytes after the payload are rejected too.
Image decode_pnm(std::span<const std::uint8_t> bytes);

void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

}  // namespace cmft

#endif  // CMFT_IMAGE_HPP_
