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

#include "cmft/image.hpp"

#include <cctype>
#include <string>

#include "cmft/io.hpp"
#include "cmft/tensor.hpp"

namespace cmft {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw FormatError("pnm: expected a number in header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_++] - '0');
      if (v > (1u << 24)) throw FormatError("pnm: header value too large");
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("pnm: channels must be 1 or 3");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw DimensionError("pnm: pixel buffer does not match extents");
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("pnm: expected P5 or P6 magic");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader r(bytes.subspan(2));
  const std::size_t w = r.number();
  const std::size_t h = r.number();
  const std::size_t maxval = r.number();
  if (w == 0 || h == 0) throw FormatError("pnm: zero extent");
  if (maxval != 255) throw FormatError("pnm: maxval must be 255, got " + std::to_string(maxval));
  // Exactly one whitespace byte separates the header from the samples.
  const std::size_t sep = 2 + r.pos();
  if (sep >= bytes.size() || !std::isspace(bytes[sep])) throw FormatError("pnm: truncated header");
  const std::size_t start = sep + 1;
  const std::size_t n = w * h * channels;
  if (bytes.size() - start < n) throw FormatError("pnm: truncated payload");
  if (bytes.size() - start > n) throw FormatError("pnm: trailing bytes after payload");
  Image img(w, h, channels);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end(), img.pixels.begin());
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) { write_bytes(path, encode_pnm(image)); }

Image read_pnm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cmft
