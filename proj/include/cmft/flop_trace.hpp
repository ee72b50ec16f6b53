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

#ifndef CMFT_FLOP_TRACE_HPP_
#define CMFT_FLOP_TRACE_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cmft {

// One forward-pass contribution. `macs` counts multiply-accumulates of
// matrix products; `elementwise` counts every other scalar operation.
struct FlopRecord {
  std::string op;
  std::string label;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;

  // Convention: 1 MAC = 2 FLOPs.
  std::uint64_t flops() const { return 2 * macs + elementwise; }
};

// Collects FlopRecords from ops executed while it is installed on the
// current thread. Labels nest ("block0/qkv").
class FlopTrace {
 public:
  FlopTrace();
  ~FlopTrace();
  FlopTrace(const FlopTrace&) = delete;
  FlopTrace& operator=(const FlopTrace&) = delete;

  const std::vector<FlopRecord>& records() const { return records_; }
  std::uint64_t total_macs() const;
  std::uint64_t total_flops() const;
  // Sum of MACs over records whose label contains `needle`.
  std::uint64_t macs_matching(std::string_view needle) const;

  void push_label(std::string_view label);
  void pop_label();
  void record(std::string_view op, std::uint64_t macs, std::uint64_t elementwise);

 private:
  std::vector<FlopRecord> records_;
  std::vector<std::string> labels_;
  FlopTrace* previous_;
};

// Active trace on this thread, or nullptr.
FlopTrace* active_flop_trace();

inline void trace_op(std::string_view op, std::uint64_t macs, std::uint64_t elementwise) {
  if (FlopTrace* t = active_flop_trace()) t->record(op, macs, elementwise);
}

class FlopLabel {
 public:
  explicit FlopLabel(std::string_view label) : trace_(active_flop_trace()) {
    if (trace_) trace_->push_label(label);
  }
  ~FlopLabel() {
    if (trace_) trace_->pop_label();
  }
  FlopLabel(const FlopLabel&) = delete;
  FlopLabel& operator=(const FlopLabel&) = delete;

 private:
  FlopTrace* trace_;
};

}  // namespace cmft

#endif  // CMFT_FLOP_TRACE_HPP_
