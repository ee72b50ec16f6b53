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

#ifndef CMFT_TRAIN_HPP_
#define CMFT_TRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cmft/detector.hpp"
#include "cmft/io.hpp"
#include "cmft/losses.hpp"
#include "cmft/metrics.hpp"
#include "cmft/synth.hpp"

namespace cmft {

struct RunConfig {
  FusionMode mode = FusionMode::kCft;
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double lr = 1e-2;
  double momentum = 0.937;
  double weight_decay = 5e-4;
  // Step decay hook: multiply lr by lr_gamma every lr_step epochs (0 = constant).
  std::size_t lr_step = 0;
  double lr_gamma = 0.1;
  // Global gradient-norm bound per step (0 = off).
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  std::string data = "data";
  std::string out = "run";
  std::size_t image_size = 64;
  std::size_t num_classes = 3;
  // Fusion module, shared by the three stages.
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t pooled_size = 8;
  std::size_t mlp_ratio = 2;
  bool paper_literal_heads = false;
  bool use_layernorm = false;
  bool zero_fusion = false;
  LossGains gains;
  // Inference.
  double score_threshold = 0.001;
  double nms_iou = kDefaultNmsIou;

  // Throws ContractError on non-positive numeric fields.
  void validate() const;
  // Overrides fields from key/value pairs. Unknown keys and unparsable
  // values throw FormatError.
  void apply(const KeyValues& kv);
  KeyValues to_key_values() const;
  DetectorConfig detector_config() const;
};

RunConfig parse_run_config(const std::string& text);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double box = 0, cls = 0, obj = 0, noobj = 0, total = 0;  // means over samples
};

// "epoch,box,cls,obj,noobj,total" followed by one line per epoch.
std::string format_training_log(const std::vector<EpochLog>& log);

// A split converted once into model inputs and per-sample targets.
struct PreparedSet {
  std::size_t image_size = 0;
  std::vector<ModelInput<float>> inputs;
  std::vector<TargetAssignment> targets;
  std::vector<std::vector<GroundTruth>> ground_truth;
};

PreparedSet prepare(const Dataset& dataset, const DetectorConfig& detector);

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // lowest mean total loss
  std::vector<std::uint8_t> best_checkpoint;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch SGD over `data` in a seed-determined order per epoch. Leaves the
// model at its final weights.
TrainResult train(Detector<float>& model, const PreparedSet& data, const RunConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Mean loss of the current weights over `data`, no parameter update.
EpochLog evaluate_loss(const Detector<float>& model, const PreparedSet& data, const LossGains& gains);

// Decoded, NMS-filtered detections for one sample.
std::vector<Detection> predict(const Detector<float>& model, const ModelInput<float>& input, double score_threshold,
                               double nms_iou);

MapResult evaluate(const Detector<float>& model, const PreparedSet& data, const RunConfig& cfg);

// Full run: loads <data>/train, trains, and writes into <out>:
// last.ckpt, best.ckpt, train_log.csv and config.txt.
TrainResult run_training(const RunConfig& cfg, const EpochCallback& on_epoch = {});

// Rebuilds the model described by the config.txt next to `checkpoint` and
// loads the weights.
Detector<float> load_model(const std::filesystem::path& checkpoint, RunConfig* config_out = nullptr);

}  // namespace cmft

#endif  // CMFT_TRAIN_HPP_
