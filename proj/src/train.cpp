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

#include "cmft/train.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "cmft/ops.hpp"
#include "cmft/rng.hpp"

namespace cmft {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw FormatError("config '" + key + "': expected a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long u = 0;
  try {
    if (!v.empty() && v[0] != '-') u = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw FormatError("config '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return u;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config '" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field uint_field(T RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<T>(parse_uint(k, v)); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field double_field(double RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); },
          [m](const RunConfig& c) { return fmt(c.*m); }};
}

Field gain_field(double LossGains::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.gains.*m = parse_double(k, v); },
          [m](const RunConfig& c) { return fmt(c.gains.*m); }};
}

Field bool_field(bool RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Field string_field(std::string RunConfig::*m) {
  return {[m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; },
          [m](const RunConfig& c) { return c.*m; }};
}

// Serialization order of config.txt.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            c.mode = parse_fusion_mode(v);
          } catch (const std::exception&) {
            throw FormatError("config '" + k + "': unknown mode '" + v + "'");
          }
        },
        [](const RunConfig& c) { return to_string(c.mode); }}},
      {"epochs", uint_field(&RunConfig::epochs)},
      {"batch_size", uint_field(&RunConfig::batch_size)},
      {"lr", double_field(&RunConfig::lr)},
      {"momentum", double_field(&RunConfig::momentum)},
      {"weight_decay", double_field(&RunConfig::weight_decay)},
      {"lr_step", uint_field(&RunConfig::lr_step)},
      {"lr_gamma", double_field(&RunConfig::lr_gamma)},
      {"grad_clip", double_field(&RunConfig::grad_clip)},
      {"seed", uint_field(&RunConfig::seed)},
      {"data", string_field(&RunConfig::data)},
      {"out", string_field(&RunConfig::out)},
      {"image_size", uint_field(&RunConfig::image_size)},
      {"num_classes", uint_field(&RunConfig::num_classes)},
      {"blocks", uint_field(&RunConfig::blocks)},
      {"heads", uint_field(&RunConfig::heads)},
      {"pooled_size", uint_field(&RunConfig::pooled_size)},
      {"mlp_ratio", uint_field(&RunConfig::mlp_ratio)},
      {"paper_literal_heads", bool_field(&RunConfig::paper_literal_heads)},
      {"use_layernorm", bool_field(&RunConfig::use_layernorm)},
      {"zero_fusion", bool_field(&RunConfig::zero_fusion)},
      {"gain_box", gain_field(&LossGains::box)},
      {"gain_cls", gain_field(&LossGains::cls)},
      {"gain_obj", gain_field(&LossGains::obj)},
      {"gain_noobj", gain_field(&LossGains::noobj)},
      {"score_threshold", double_field(&RunConfig::score_threshold)},
      {"nms_iou", double_field(&RunConfig::nms_iou)},
  };
  return f;
}

EpochLog& accumulate(EpochLog& acc, const LossBreakdown<float>& l) {
  acc.box += l.box.item();
  acc.cls += l.cls.item();
  acc.obj += l.obj.item();
  acc.noobj += l.noobj.item();
  acc.total += l.total.item();
  return acc;
}

void normalize(EpochLog& log, std::size_t n) {
  const double d = static_cast<double>(std::max<std::size_t>(n, 1));
  log.box /= d;
  log.cls /= d;
  log.obj /= d;
  log.noobj /= d;
  log.total /= d;
}

}  // namespace

void RunConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ContractError("config: epochs and batch_size must be >= 1");
  if (!(lr > 0)) throw ContractError("config: lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ContractError("config: momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ContractError("config: weight_decay must be >= 0");
  if (!(lr_gamma > 0)) throw ContractError("config: lr_gamma must be > 0");
  if (!(grad_clip >= 0)) throw ContractError("config: grad_clip must be >= 0");
  if (!(score_threshold >= 0 && score_threshold < 1)) throw ContractError("config: score_threshold must be in [0, 1)");
  if (!(nms_iou > 0 && nms_iou <= 1)) throw ContractError("config: nms_iou must be in (0, 1]");
  if (!(gains.box >= 0 && gains.cls >= 0 && gains.obj >= 0 && gains.noobj >= 0)) {
    throw ContractError("config: loss gains must be >= 0");
  }
  detector_config().validate();
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    const auto& f = fields();
    auto it = std::find_if(f.begin(), f.end(), [&](const auto& e) { return e.first == key; });
    if (it == f.end()) throw FormatError("config: unknown key '" + key + "'");
    it->second.set(*this, key, value);
  }
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  for (const auto& [key, f] : fields()) kv.emplace_back(key, f.get(*this));
  return kv;
}

DetectorConfig RunConfig::detector_config() const {
  DetectorConfig dc;
  dc.mode = mode;
  dc.image_size = image_size;
  dc.num_classes = num_classes;
  dc.cft.blocks = blocks;
  dc.cft.heads = heads;
  dc.cft.pooled_size = pooled_size;
  dc.cft.mlp_ratio = mlp_ratio;
  dc.cft.paper_literal_heads = paper_literal_heads;
  dc.cft.use_layernorm = use_layernorm;
  dc.zero_fusion = zero_fusion;
  return dc;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  cfg.apply(parse_key_values(text));
  return cfg;
}

std::string format_training_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,box,cls,obj,noobj,total\n";
  char buf[256];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.box, e.cls, e.obj, e.noobj, e.total);
    os << buf;
  }
  return os.str();
}

PreparedSet prepare(const Dataset& dataset, const DetectorConfig& detector) {
  PreparedSet out;
  out.image_size = detector.image_size;
  std::array<std::size_t, kNumScales> grids{};
  for (std::size_t s = 0; s < kNumScales; ++s) grids[s] = detector.grid_size(s);
  for (const PairSample& s : dataset.samples) {
    if (s.rgb.width != detector.image_size || s.rgb.height != detector.image_size) {
      throw DimensionError("dataset image " + std::to_string(s.rgb.width) + "x" + std::to_string(s.rgb.height) +
                           " does not match model input " + std::to_string(detector.image_size));
    }
    for (const GroundTruth& g : s.annotations) {
      if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= detector.num_classes) {
        throw ContractError("dataset class id " + std::to_string(g.class_id) + " outside the model's classes");
      }
    }
    out.inputs.push_back(to_model_input<float>(s));
    out.targets.push_back(assign_targets(s.annotations, grids, static_cast<double>(detector.image_size)));
    out.ground_truth.push_back(s.annotations);
  }
  return out;
}

TrainResult train(Detector<float>& model, const PreparedSet& data, const RunConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t n = data.inputs.size();
  if (n == 0) throw ContractError("train: empty dataset");
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(n);
  // Parameters outside the graph (skipped fusion) still take the SGD step.
  for (auto& p : model.params().all()) p.value.mutable_grad();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0x5EED0000ULL + epoch));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const double lr = cfg.lr_step ? cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>((epoch - 1) / cfg.lr_step))
                                  : cfg.lr;

    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const float inv = 1.0f / static_cast<float>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto out = model.forward(data.inputs[i].rgb, data.inputs[i].thermal);
        const auto loss = total_loss(out.heads, data.targets[i], cfg.gains);
        accumulate(log, loss);
        backward(scale(loss.total, inv));
      }
      if (cfg.grad_clip > 0) model.params().clip_grad_norm(cfg.grad_clip);
      model.params().sgd_step(static_cast<float>(lr), static_cast<float>(cfg.momentum),
                              static_cast<float>(cfg.weight_decay));
      model.params().zero_grad();
    }
    normalize(log, n);
    result.log.push_back(log);
    if (log.total < best) {
      best = log.total;
      result.best_epoch = epoch;
      result.best_checkpoint = encode_checkpoint(model.params());
    }
    if (on_epoch) on_epoch(log);
  }
  return result;
}

EpochLog evaluate_loss(const Detector<float>& model, const PreparedSet& data, const LossGains& gains) {
  NoGradGuard no_grad;
  EpochLog log;
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    const auto out = model.forward(data.inputs[i].rgb, data.inputs[i].thermal);
    accumulate(log, total_loss(out.heads, data.targets[i], gains));
  }
  normalize(log, data.inputs.size());
  return log;
}

std::vector<Detection> predict(const Detector<float>& model, const ModelInput<float>& input, double score_threshold,
                               double nms_iou) {
  NoGradGuard no_grad;
  const auto out = model.forward(input.rgb, input.thermal);
  std::vector<Detection> all;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    auto d = decode_boxes(out.heads[s], kScaleStrides[s], score_threshold,
                          static_cast<double>(model.config().image_size));
    all.insert(all.end(), d.begin(), d.end());
  }
  return nms(all, nms_iou);
}

MapResult evaluate(const Detector<float>& model, const PreparedSet& data, const RunConfig& cfg) {
  std::vector<std::vector<Detection>> dets;
  dets.reserve(data.inputs.size());
  for (const auto& input : data.inputs) dets.push_back(predict(model, input, cfg.score_threshold, cfg.nms_iou));
  return map_suite(dets, data.ground_truth, model.config().num_classes);
}

TrainResult run_training(const RunConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const Dataset train_set = load_split(cfg.data, "train");
  Detector<float> model(cfg.detector_config(), cfg.seed);
  const PreparedSet data = prepare(train_set, model.config());
  TrainResult result = train(model, data, cfg, on_epoch);
  const std::filesystem::path out(cfg.out);
  std::filesystem::create_directories(out);
  save_checkpoint(model.params(), out / "last.ckpt");
  write_bytes(out / "best.ckpt", result.best_checkpoint);
  write_text(out / "train_log.csv", format_training_log(result.log));
  write_text(out / "config.txt", format_key_values(cfg.to_key_values()));
  return result;
}

Detector<float> load_model(const std::filesystem::path& checkpoint, RunConfig* config_out) {
  const std::filesystem::path sidecar = checkpoint.parent_path() / "config.txt";
  const RunConfig cfg = parse_run_config(read_text(sidecar));
  cfg.validate();
  Detector<float> model(cfg.detector_config(), cfg.seed);
  load_checkpoint(model.params(), checkpoint);
  if (config_out) *config_out = cfg;
  return model;
}

}  // namespace cmft
