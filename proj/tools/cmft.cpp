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

// Command-line driver: gen-data, train, eval, dump-attn, complexity.
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "cmft/attention_dump.hpp"
#include "cmft/complexity.hpp"
#include "cmft/io.hpp"
#include "cmft/rng.hpp"
#include "cmft/synth.hpp"
#include "cmft/train.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for invalid flag or config values found after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

// Exposes every RunConfig key as --key-name and collects the ones given.
struct RunConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    for (const auto& [key, value] : cmft::RunConfig{}.to_key_values()) {
      cmd->add_option(dashed(key), values[key], "default " + value);
    }
  }

  cmft::RunConfig resolve(CLI::App* cmd) const {
    cmft::RunConfig cfg;
    try {
      if (!config_path.empty()) cfg.apply(cmft::parse_key_values(cmft::read_text(config_path)));
      cmft::KeyValues overrides;
      for (const auto& [key, value] : values) {
        const CLI::Option* opt = cmd->get_option_no_throw(dashed(key));
        if (opt != nullptr && opt->count() > 0) overrides.emplace_back(key, value);
      }
      cfg.apply(overrides);
      cfg.validate();
    } catch (const cmft::FormatError& e) {
      throw UsageError(e.what());
    } catch (const cmft::ContractError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

void print_summary(const cmft::MapResult& r) {
  std::printf("mAP50=%.4f\nmAP75=%.4f\nmAP=%.4f\n", r.map50, r.map75, r.map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modality fusion transformer toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic paired RGB/thermal dataset");
  cmft::SynthConfig synth;
  std::string gen_out;
  std::size_t n_test = 0;
  std::vector<double> probs = {synth.visibility_probs.begin(), synth.visibility_probs.end()};
  gen->add_option("--out", gen_out, "dataset root")->required();
  gen->add_option("--seed", synth.seed, "generator seed");
  gen->add_option("--n", synth.count, "training pairs");
  gen->add_option("--n-test", n_test, "test pairs (default max(1, n / 5))");
  gen->add_option("--size", synth.image_size, "image side in pixels");
  gen->add_option("--probs", probs, "visibility probabilities rgb_only,thermal_only,both")
      ->expected(3)
      ->delimiter(',');
  gen->add_option("--night", synth.night_fraction, "fraction of night samples");
  gen->add_option("--min-objects", synth.min_objects);
  gen->add_option("--max-objects", synth.max_objects);

  // train
  auto* train = app.add_subcommand("train", "train a detector");
  RunConfigFlags train_flags;
  train_flags.add_to(train);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_report;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint with config.txt alongside")->required();
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--split", eval_split, "split name");
  eval->add_option("--report", eval_report, "report path (default <checkpoint dir>/eval_<split>.txt)");

  // dump-attn
  auto* dump = app.add_subcommand("dump-attn", "write correlation matrices for one sample");
  std::string dump_ckpt, dump_data, dump_split = "test", dump_out;
  std::size_t dump_index = 0;
  dump->add_option("--checkpoint", dump_ckpt)->required();
  dump->add_option("--data", dump_data, "dataset root")->required();
  dump->add_option("--split", dump_split);
  dump->add_option("--index", dump_index, "sample index within the split");
  dump->add_option("--out", dump_out, "output directory")->required();

  // complexity
  auto* cx = app.add_subcommand("complexity", "audit fusion-module parameters and FLOPs");
  cmft::CftConfig cx_cft;
  std::string cx_out;
  RunConfigFlags cx_flags;
  cx->add_option("--channels", cx_cft.channels);
  cx->add_option("--heads", cx_cft.heads);
  cx->add_option("--blocks", cx_cft.blocks);
  cx->add_option("--pooled-size", cx_cft.pooled_size);
  cx->add_option("--mlp-ratio", cx_cft.mlp_ratio);
  cx->add_flag("--literal-heads", cx_cft.paper_literal_heads, "per-head C x C projections");
  cx->add_flag("--layernorm", cx_cft.use_layernorm);
  cx->add_option("--run-config", cx_flags.config_path, "run config for the detector totals");
  cx->add_option("--out", cx_out, "also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      if (probs.size() != 3) throw UsageError("--probs needs three values");
      std::copy(probs.begin(), probs.end(), synth.visibility_probs.begin());
      try {
        synth.validate();
      } catch (const cmft::ContractError& e) {
        throw UsageError(e.what());
      }
      cmft::SynthConfig test = synth;
      test.count = gen->count("--n-test") ? n_test : std::max<std::size_t>(1, synth.count / 5);
      // Disjoint sample streams for the two splits.
      test.seed = cmft::mix_seed(synth.seed, cmft::hash_string("test"));
      cmft::generate(synth, gen_out, "train");
      cmft::generate(test, gen_out, "test");
      std::printf("wrote %zu train and %zu test pairs to %s\n", synth.count, test.count, gen_out.c_str());
    } else if (train->parsed()) {
      const cmft::RunConfig cfg = train_flags.resolve(train);
      cmft::run_training(cfg, [](const cmft::EpochLog& e) {
        std::printf("epoch %zu box=%.4f cls=%.4f obj=%.4f noobj=%.4f total=%.4f\n", e.epoch, e.box, e.cls, e.obj,
                    e.noobj, e.total);
        std::fflush(stdout);
      });
      std::printf("checkpoints written to %s\n", cfg.out.c_str());
    } else if (eval->parsed()) {
      cmft::RunConfig cfg;
      const cmft::Detector<float> model = cmft::load_model(eval_ckpt, &cfg);
      const cmft::PreparedSet data = cmft::prepare(cmft::load_split(eval_data, eval_split), model.config());
      const cmft::MapResult r = cmft::evaluate(model, data, cfg);
      const std::filesystem::path report =
          eval_report.empty() ? std::filesystem::path(eval_ckpt).parent_path() / ("eval_" + eval_split + ".txt")
                              : std::filesystem::path(eval_report);
      cmft::write_text(report, cmft::format_map_report(r));
      print_summary(r);
    } else if (dump->parsed()) {
      const cmft::Detector<float> model = cmft::load_model(dump_ckpt);
      const cmft::Dataset d = cmft::load_split(dump_data, dump_split);
      if (dump_index >= d.samples.size()) throw UsageError("--index beyond the split size");
      const auto files =
          cmft::dump_attention(model, cmft::to_model_input<float>(d.samples[dump_index]), dump_out);
      std::printf("wrote %zu files to %s\n", files.size(), dump_out.c_str());
    } else if (cx->parsed()) {
      const cmft::RunConfig run = cx_flags.resolve(cx);
      try {
        cx_cft.validate();
      } catch (const cmft::ContractError& e) {
        throw UsageError(e.what());
      }
      const std::string text = cmft::complexity_report(cx_cft, run.detector_config()).to_text();
      if (!cx_out.empty()) cmft::write_text(cx_out, text);
      std::fputs(text.c_str(), stdout);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
