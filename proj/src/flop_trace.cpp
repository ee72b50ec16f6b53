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

#include "cmft/flop_trace.hpp"

namespace cmft {

namespace {
thread_local FlopTrace* g_active = nullptr;
}  // namespace

FlopTrace* active_flop_trace() { return g_active; }

FlopTrace::FlopTrace() : previous_(g_active) { g_active = this; }

FlopTrace::~FlopTrace() { g_active = previous_; }

std::uint64_t FlopTrace::total_macs() const {
  std::uint64_t total = 0;
  for (const auto& r : records_) total += r.macs;
  return total;
}

std::uint64_t FlopTrace::total_flops() const {
  std::uint64_t total = 0;
  for (const auto& r : records_) total += r.flops();
  return total;
}

std::uint64_t FlopTrace::macs_matching(std::string_view needle) const {
  std::uint64_t total = 0;
  for (const auto& r : records_) {
    if (r.label.find(needle) != std::string::npos) total += r.macs;
  }
  return total;
}

void FlopTrace::push_label(std::string_view label) { labels_.emplace_back(label); }

void FlopTrace::pop_label() {
  if (!labels_.empty()) labels_.pop_back();
}

void FlopTrace::record(std::string_view op, std::uint64_t macs, std::uint64_t elementwise) {
  std::string label;
  for (const auto& l : labels_) {
    if (!label.empty()) label += '/';
    label += l;
  }
  records_.push_back(FlopRecord{std::string(op), std::move(label), macs, elementwise});
}

}  // namespace cmft
