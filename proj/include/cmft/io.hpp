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

#ifndef CMFT_IO_HPP_
#define CMFT_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cmft {

// Whole-file helpers. Failures throw std::runtime_error naming the path.
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// Flat "key = value" text. Blank lines and lines starting with '#' are
// skipped; whitespace around keys and values is trimmed. A line without '='
// or a repeated key throws FormatError. Order of appearance is kept.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

}  // namespace cmft

#endif  // CMFT_IO_HPP_
