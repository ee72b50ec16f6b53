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

#include "cmft/complexity.hpp"

#include <sstream>

#include "cmft/ops.hpp"
#include "cmft/rng.hpp"

namespace cmft {

namespace {

void require_positive(std::uint64_t tokens, std::uint64_t channels) {
  if (tokens < 1 || channels < 1) throw ContractError("complexity: tokens and channels must be >= 1");
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

bool is_projection_weight(const std::string& suffix) {
  return suffix == "wq" || suffix == "wk" || suffix == "wv" || suffix == "wq_heads" || suffix == "wk_heads" ||
         suffix == "wv_heads" || suffix == "wo" || suffix == "fc1.w" || suffix == "fc2.w";
}

std::string verdict(bool ok) { return ok ? "match" : "MISMATCH"; }

}  // namespace

std::uint64_t analytic_params(std::uint64_t tokens, std::uint64_t channels) {
  require_positive(tokens, channels);
  return 4 * tokens * channels + 8 * channels * channels;
}

std::uint64_t analytic_flops(std::uint64_t tokens, std::uint64_t channels) {
  require_positive(tokens, channels);
  return 12 * tokens * channels * channels + 2 * tokens * tokens * channels;
}

std::uint64_t attention_matrix_elements(std::uint64_t height, std::uint64_t width) {
  const std::uint64_t t = 2 * height * width;
  return t * t;
}

template <class S>
ParamCount count_params(const ParameterStore<S>& store) {
  ParamCount pc;
  for (const auto& p : store.all()) {
    const std::uint64_t n = p.value.numel();
    pc.total += n;
    pc.by_id.emplace_back(p.id, n);
    pc.by_module[p.id.substr(0, p.id.find('.'))] += n;
  }
  return pc;
}

template <class S>
std::uint64_t block_projection_params(const ParameterStore<S>& store, const std::string& block_prefix) {
  std::uint64_t n = 0;
  for (const auto& p : store.all()) {
    if (starts_with(p.id, block_prefix) && is_projection_weight(p.id.substr(block_prefix.size()))) {
      n += p.value.numel();
    }
  }
  return n;
}

template <class S>
std::uint64_t block_other_params(const ParameterStore<S>& store, const std::string& block_prefix) {
  std::uint64_t n = 0;
  for (const auto& p : store.all()) {
    if (starts_with(p.id, block_prefix) && !is_projection_weight(p.id.substr(block_prefix.size()))) {
      n += p.value.numel();
    }
  }
  return n;
}

template ParamCount count_params(const ParameterStore<float>&);
template ParamCount count_params(const ParameterStore<double>&);
template std::uint64_t block_projection_params(const ParameterStore<float>&, const std::string&);
template std::uint64_t block_projection_params(const ParameterStore<double>&, const std::string&);
template std::uint64_t block_other_params(const ParameterStore<float>&, const std::string&);
template std::uint64_t block_other_params(const ParameterStore<double>&, const std::string&);

std::uint64_t count_flops(const FlopTrace& trace) { return trace.total_flops(); }

std::string ComplexityReport::to_text() const {
  std::ostringstream os;
  os << "# complexity report\n";
  os << "analytic_params=" << analytic_params << "\n";
  os << "analytic_flops=" << analytic_flops << "\n";
  os << "counted_params=" << counted_params << "\n";
  os << "counted_flops=" << counted_flops << "\n";
  for (const auto& t : breakdown) os << t.name << "=" << t.value << "\n";
  for (const auto& n : notes) os << "note: " << n << "\n";
  return os.str();
}

ComplexityReport complexity_report(const CftConfig& cfg, const DetectorConfig& detector) {
  cfg.validate();
  const std::uint64_t t = cfg.tokens(), c = cfg.channels, r = cfg.mlp_ratio;
  ComplexityReport rep;
  rep.analytic_params = analytic_params(t, c);
  rep.analytic_flops = analytic_flops(t, c);

  ParameterStore<float> store(0);
  const CftParams<float> params = make_cft_params(store, "cft.", cfg);
  const std::uint64_t proj = block_projection_params(store, "cft.block0.");
  const std::uint64_t other = block_other_params(store, "cft.block0.");
  rep.counted_params = proj + other;
  const ParamCount module = count_params(store);
  const std::uint64_t pos = store.at("cft.pos_embedding").value.numel();
  const std::uint64_t out_proj = store.at("cft.out_proj").value.numel();

  // One traced forward pass at the pooled resolution.
  Rng rng(1);
  std::vector<float> a(c * cfg.pooled_size * cfg.pooled_size), b(a.size());
  for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
  const Shape shape{c, cfg.pooled_size, cfg.pooled_size};
  FlopTrace trace;
  {
    NoGradGuard no_grad;
    fuse(Tensor<float>::from(shape, a), Tensor<float>::from(shape, b), cfg, params);
  }
  std::uint64_t qkv = 0, attn = 0, wo = 0, mlp = 0, elementwise = 0;
  for (const auto& rec : trace.records()) {
    if (!starts_with(rec.label, "block0/")) continue;
    const std::string part = rec.label.substr(7);
    if (starts_with(part, "qkv")) qkv += rec.macs;
    if (starts_with(part, "attention")) attn += rec.macs;
    if (starts_with(part, "out_proj")) wo += rec.macs;
    if (starts_with(part, "mlp")) mlp += rec.macs;
    elementwise += rec.elementwise;
  }
  const std::uint64_t block_macs = qkv + attn + wo + mlp;
  rep.counted_flops = 2 * block_macs + elementwise;

  rep.breakdown = {
      {"analytic.params.4TC", 4 * t * c},
      {"analytic.params.8C^2", 8 * c * c},
      {"analytic.flops.12TC^2", 12 * t * c * c},
      {"analytic.flops.2T^2C", 2 * t * t * c},
      {"counted.block.projection_weights", proj},
      {"counted.block.biases_and_norms", other},
      {"counted.module.blocks", module.total - pos - out_proj},
      {"counted.module.pos_embedding", pos},
      {"counted.module.out_proj", out_proj},
      {"counted.module.total", module.total},
      {"traced.block.qkv_macs", qkv},
      {"traced.block.attention_core_macs", attn},
      {"traced.block.out_proj_macs", wo},
      {"traced.block.mlp_macs", mlp},
      {"traced.block.elementwise_flops", elementwise},
      {"traced.module.flops", count_flops(trace)},
      {"memory.attention_elements_160x160", attention_matrix_elements(160, 160)},
  };
  for (FusionMode mode : {FusionMode::kRgbOnly, FusionMode::kThermalOnly, FusionMode::kTwoStream, FusionMode::kCft}) {
    DetectorConfig dc = detector;
    dc.mode = mode;
    Detector<float> model(dc, 0);
    rep.breakdown.push_back({"detector.params." + to_string(mode), model.params().total_elements()});
  }

  const std::uint64_t expected_proj = 3 * c * c + c * c + 2 * r * c * c;
  std::ostringstream n;
  n << "tokens T=" << t << " (2 x pooled " << cfg.pooled_size << "x" << cfg.pooled_size << "), channels C=" << c
    << ", heads=" << cfg.heads << ", blocks=" << cfg.blocks << ", mlp_ratio=" << r;
  rep.notes.push_back(n.str());
  rep.notes.push_back("FLOP convention: 1 MAC = 2 FLOPs; the analytic FLOP formula is read as a MAC count");

  n.str("");
  n << "projection weights per block: counted " << proj << " vs 8C^2 = " << 8 * c * c << " -> "
    << verdict(proj == 8 * c * c);
  if (cfg.paper_literal_heads) n << " (literal heads add per-head projections and an hC x C W^O)";
  rep.notes.push_back(n.str());

  n.str("");
  n << "4TC term = " << 4 * t * c << "; itemized non-projection parameters per block = " << other
    << ", positional embedding T*C = " << pos << " per module (shared by " << cfg.blocks
    << " blocks); the formula's 4TC does not correspond to a stored tensor, difference 4TC - (biases + T*C) = "
    << static_cast<std::int64_t>(4 * t * c) - static_cast<std::int64_t>(other + pos);
  rep.notes.push_back(n.str());

  n.str("");
  n << "attention core: traced MACs " << attn << " vs 2T^2C = " << 2 * t * t * c << " -> "
    << verdict(attn == 2 * t * t * c) << "; traced FLOPs " << 2 * attn << " (factor 2 from the MAC convention)";
  rep.notes.push_back(n.str());

  n.str("");
  n << "projections: traced MACs " << qkv + wo + mlp << " = (4 + 2*mlp_ratio) T C^2 = " << expected_proj * t
    << " vs 12TC^2 = " << 12 * t * c * c << " -> " << verdict(qkv + wo + mlp == 12 * t * c * c)
    << "; 12TC^2 corresponds to mlp_ratio 4, while 8C^2 parameters corresponds to mlp_ratio 2";
  rep.notes.push_back(n.str());

  n.str("");
  n << "block MACs traced " << block_macs << " vs analytic " << rep.analytic_flops << " -> "
    << verdict(block_macs == rep.analytic_flops);
  rep.notes.push_back(n.str());

  n.str("");
  n << "full-resolution attention at H=W=160: (2HW)^2 = " << attention_matrix_elements(160, 160)
    << " elements > 2.4e9 -> pooling to " << cfg.pooled_size << "x" << cfg.pooled_size << " gives " << t * t;
  rep.notes.push_back(n.str());
  return rep;
}

}  // namespace cmft
