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

#ifndef CMFT_COMPLEXITY_HPP_
#define CMFT_COMPLEXITY_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmft/cft.hpp"
#include "cmft/detector.hpp"
#include "cmft/flop_trace.hpp"
#include "cmft/params.hpp"

namespace cmft {

// Closed-form cost of one transformer block over T tokens of width C.
// Params ~ 4 T C + 8 C^2, FLOPs ~ 12 T C^2 + 2 T^2 C. Both throw
// ContractError for T or C below 1.
std::uint64_t analytic_params(std::uint64_t tokens, std::uint64_t channels);
std::uint64_t analytic_flops(std::uint64_t tokens, std::uint64_t channels);

// Elements of the T x T attention score matrix at full resolution H x W,
// where T = 2 H W.
std::uint64_t attention_matrix_elements(std::uint64_t height, std::uint64_t width);

struct ParamCount {
  std::uint64_t total = 0;
  std::vector<std::pair<std::string, std::uint64_t>> by_id;  // registry order
  std::map<std::string, std::uint64_t> by_module;             // prefix before the first '.'
};

template <class S>
ParamCount count_params(const ParameterStore<S>& store);

// Weight elements of one block's projections (W^Q, W^K, W^V, per-head
// projections, W^O, FC1, FC2), excluding biases and norms.
template <class S>
std::uint64_t block_projection_params(const ParameterStore<S>& store, const std::string& block_prefix);

// Biases and layer-norm affines of one block.
template <class S>
std::uint64_t block_other_params(const ParameterStore<S>& store, const std::string& block_prefix);

// Sum of FlopRecord::flops() (1 MAC = 2 FLOPs).
std::uint64_t count_flops(const FlopTrace& trace);

struct ComplexityTerm {
  std::string name;
  std::uint64_t value = 0;
};

struct ComplexityReport {
  std::uint64_t analytic_params = 0;  // per block
  std::uint64_t analytic_flops = 0;   // per block
  std::uint64_t counted_params = 0;   // per block, projections + biases + norms
  std::uint64_t counted_flops = 0;    // per block, traced FLOPs
  std::vector<ComplexityTerm> breakdown;
  std::vector<std::string> notes;

  std::string to_text() const;
};

// Audits one standalone fusion module: per-block analytic vs counted
// parameters and traced FLOPs, module-level itemization, the full-resolution
// attention memory estimate and the detector parameter totals per mode.
ComplexityReport complexity_report(const CftConfig& cfg, const DetectorConfig& detector);

}  // namespace cmft

#endif  // CMFT_COMPLEXITY_HPP_
