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


#include <filesystem>

#include "doctest.h"
#include "cmft/attention_dump.hpp"
#include "cmft/train.hpp"

using namespace cmft;

namespace {

Dataset tiny_dataset(std::size_t count, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.seed = seed;
  Dataset d;
  d.split = "train";
  for (std::size_t i = 0; i < count; ++i) d.samples.push_back(synthesize(cfg, i).pair);
  return d;
}

RunConfig tiny_run(FusionMode mode, std::size_t epochs) {
  RunConfig cfg;
  cfg.mode = mode;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.blocks = 1;
  return cfg;
}

}  // namespace

TEST_CASE("run config round trip and validation") {
  RunConfig cfg;
  cfg.mode = FusionMode::kTwoStream;
  cfg.lr = 0.125;
  cfg.use_layernorm = true;
  cfg.gains.box = 0.25;
  cfg.out = "some dir/run";
  const RunConfig back = parse_run_config(format_key_values(cfg.to_key_values()));
  CHECK(back.to_key_values() == cfg.to_key_values());
  CHECK(back.mode == FusionMode::kTwoStream);
  CHECK(back.lr == 0.125);
  CHECK(back.use_layernorm);
  CHECK(back.out == "some dir/run");

  RunConfig r;
  CHECK_THROWS_AS(r.apply({{"no_such_key", "1"}}), FormatError);
  CHECK_THROWS_AS(r.apply({{"epochs", "ten"}}), FormatError);
  CHECK_THROWS_AS(r.apply({{"mode", "early"}}), FormatError);
  CHECK_THROWS_AS(r.apply({{"use_layernorm", "maybe"}}), FormatError);
  r = RunConfig{};
  r.lr = 0;
  CHECK_THROWS_AS(r.validate(), ContractError);
  r = RunConfig{};
  r.batch_size = 0;
  CHECK_THROWS_AS(r.validate(), ContractError);

  const DetectorConfig det = RunConfig{}.detector_config();
  CHECK(det.mode == FusionMode::kCft);
  CHECK(det.cft.blocks == 2);
  CHECK(det.image_size == 64);
}

TEST_CASE("training log format") {
  const std::vector<EpochLog> log = {{1, 1.5, 0.25, 0.125, 2, 3.875}};
  CHECK(format_training_log(log) == "epoch,box,cls,obj,noobj,total\n1,1.500000,0.250000,0.125000,2.000000,3.875000\n");
}

TEST_CASE("prepare converts every sample") {
  const Dataset d = tiny_dataset(3, 1);
  const PreparedSet p = prepare(d, RunConfig{}.detector_config());
  CHECK(p.inputs.size() == 3);
  CHECK(p.targets.size() == 3);
  CHECK(p.ground_truth[2] == d.samples[2].annotations);
  CHECK(p.targets[0].scales[0].grid == 16);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const PreparedSet data = prepare(tiny_dataset(8, 2), tiny_run(FusionMode::kCft, 1).detector_config());
  for (FusionMode mode : {FusionMode::kTwoStream, FusionMode::kCft}) {
    CAPTURE(to_string(mode));
    const RunConfig cfg = tiny_run(mode, 6);
    Detector<float> a(cfg.detector_config(), cfg.seed);
    Detector<float> b(cfg.detector_config(), cfg.seed);
    std::size_t calls = 0;
    const TrainResult ra = train(a, data, cfg, [&](const EpochLog&) { ++calls; });
    const TrainResult rb = train(b, data, cfg);
    CHECK(calls == 6);
    CHECK(format_training_log(ra.log) == format_training_log(rb.log));
    CHECK(encode_checkpoint(a.params()) == encode_checkpoint(b.params()));
    CHECK(ra.best_checkpoint == rb.best_checkpoint);
    CHECK(ra.log.back().total < ra.log.front().total);

    const EpochLog before = ra.log.front();
    const EpochLog now = evaluate_loss(a, data, cfg.gains);
    CHECK(now.total < before.total);
    CHECK(now.total == doctest::Approx(now.box + now.cls + now.obj + now.noobj));

    RunConfig other = cfg;
    other.seed = 1;
    Detector<float> c(other.detector_config(), other.seed);
    train(c, data, other);
    CHECK(encode_checkpoint(c.params()) != encode_checkpoint(a.params()));
  }
}

TEST_CASE("prediction and evaluation") {
  const RunConfig cfg = tiny_run(FusionMode::kTwoStream, 1);
  const PreparedSet data = prepare(tiny_dataset(4, 3), cfg.detector_config());
  const Detector<float> model(cfg.detector_config(), 0);
  const auto dets = predict(model, data.inputs[0], cfg.score_threshold, cfg.nms_iou);
  for (const auto& d : dets) {
    CHECK(d.confidence >= cfg.score_threshold);
    CHECK(d.box.valid());
    CHECK(d.box.x2 <= 64);
  }
  const MapResult r = evaluate(model, data, cfg);
  CHECK(r.num_classes == 3);
  CHECK(r.map50 >= 0);
  CHECK(r.map50 <= 100);
}

TEST_CASE("attention heatmap and csv") {
  const auto alpha = Tensor<float>::from({2, 2}, {0.25f, 0.75f, 0.5f, 0.5f});
  const Heatmap h = attention_heatmap(alpha);
  CHECK(h.min == 0.25);
  CHECK(h.max == 0.75);
  CHECK(h.image.pixels == std::vector<std::uint8_t>{0, 255, 128, 128});
  CHECK(attention_heatmap(Tensor<float>::full({2, 2}, 0.5f)).image.pixels == std::vector<std::uint8_t>(4, 0));
  CHECK(attention_csv(alpha) == "0.25,0.75\n0.5,0.5\n");
}

TEST_CASE("attention dump writes every head of every stage") {
  RunConfig cfg = tiny_run(FusionMode::kCft, 1);
  const Detector<float> model(cfg.detector_config(), 0);
  const Dataset d = tiny_dataset(1, 4);
  const auto dir = std::filesystem::temp_directory_path() / "cmft_test_train_dump";
  std::filesystem::remove_all(dir);
  const auto files = dump_attention(model, to_model_input<float>(d.samples[0]), dir);
  // 3 stages x 1 block x 4 heads x (csv, pgm, txt).
  CHECK(files.size() == 36);
  CHECK(std::filesystem::exists(dir / "stage0_block0_head3.csv"));
  const Image first = read_pnm(dir / "stage0_block0_head0.pgm");
  CHECK(first.width == 128);
  CHECK(first.height == 128);
  // The last stage is 4x4, so at most 2 * 4 * 4 tokens.
  CHECK(read_pnm(dir / "stage2_block0_head0.pgm").width == 32);
  const std::string sidecar = read_text(dir / "stage0_block0_head0.txt");
  CHECK(sidecar.find("quadrant_boundary=64") != std::string::npos);
  const std::string csv = read_text(dir / "stage1_block0_head2.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 128);
  std::filesystem::remove_all(dir);

  const Detector<float> plain(tiny_run(FusionMode::kTwoStream, 1).detector_config(), 0);
  CHECK_THROWS(dump_attention(plain, to_model_input<float>(d.samples[0]), dir));
}

TEST_CASE("zeroed fusion follows the two-stream trajectory") {
  const PreparedSet data = prepare(tiny_dataset(8, 6), tiny_run(FusionMode::kCft, 1).detector_config());
  RunConfig zeroed = tiny_run(FusionMode::kCft, 3);
  zeroed.zero_fusion = true;
  const RunConfig base = tiny_run(FusionMode::kTwoStream, 3);
  Detector<float> a(zeroed.detector_config(), 0);
  Detector<float> b(base.detector_config(), 0);
  const auto ra = train(a, data, zeroed);
  const auto rb = train(b, data, base);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(ra.log[e].total == rb.log[e].total);
    CHECK(ra.log[e].box == rb.log[e].box);
  }
  for (const auto& p : b.params().all()) {
    const auto x = a.params().at(p.id).value.data();
    const auto y = p.value.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }
}
