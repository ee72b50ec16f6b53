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

#include "cmft/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cmft/rng.hpp"

namespace cmft {

namespace {

constexpr std::size_t kNoiseCell = 16;
constexpr double kNightGain = 0.25;
constexpr double kNightNoise = 6.0;
constexpr double kThermalNoise = 3.0;
constexpr int kPlacementAttempts = 100;

struct Rgb {
  double r, g, b;
};

constexpr std::array<Rgb, kNumSynthClasses> kClassColor = {{
    {210, 70, 60},   // person
    {50, 90, 220},   // car
    {70, 200, 80},   // bicycle
}};

// Smooth lattice noise in [lo, hi] with one random value per kNoiseCell.
std::vector<double> value_noise(Rng& rng, std::size_t size, double lo, double hi) {
  const std::size_t n = size / kNoiseCell + 2;
  std::vector<double> lattice(n * n);
  for (double& v : lattice) v = rng.uniform(lo, hi);
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / kNoiseCell;
    const std::size_t iy = static_cast<std::size_t>(fy);
    double ty = fy - static_cast<double>(iy);
    ty = ty * ty * (3 - 2 * ty);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / kNoiseCell;
      const std::size_t ix = static_cast<std::size_t>(fx);
      double tx = fx - static_cast<double>(ix);
      tx = tx * tx * (3 - 2 * tx);
      const double a = lattice[iy * n + ix], b = lattice[iy * n + ix + 1];
      const double c = lattice[(iy + 1) * n + ix], d = lattice[(iy + 1) * n + ix + 1];
      out[y * size + x] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

bool covers(int class_id, const Box& b, double px, double py) {
  const double cx = (b.x1 + b.x2) / 2, cy = (b.y1 + b.y2) / 2;
  const double rx = b.width() / 2, ry = b.height() / 2;
  const double dx = (px - cx) / rx, dy = (py - cy) / ry;
  switch (class_id) {
    case 0:
      return dx * dx + dy * dy <= 1.0;
    case 1:
      return true;
    default:
      return std::abs(dx) + std::abs(dy) <= 1.0;
  }
}

std::pair<int, int> class_extent(Rng& rng, int class_id) {
  switch (class_id) {
    case 0:
      return {rng.range(5, 8), rng.range(11, 18)};
    case 1:
      return {rng.range(12, 20), rng.range(6, 10)};
    default:
      return {rng.range(7, 10), rng.range(7, 10)};
  }
}

bool overlaps(const Box& a, const Box& b) {
  return std::min(a.x2, b.x2) > std::max(a.x1, b.x1) && std::min(a.y2, b.y2) > std::max(a.y1, b.y1);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string sample_name(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

long parse_int(const std::string& s, std::size_t lineno) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw FormatError("annotations line " + std::to_string(lineno) + ": bad integer '" + s + "'");
  }
  return v;
}

const std::string& manifest_value(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  throw FormatError("manifest: missing key '" + key + "'");
}

}  // namespace

void SynthConfig::validate() const {
  double sum = 0;
  for (double p : visibility_probs) {
    if (!(p >= 0)) throw ContractError("synth: visibility probabilities must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("synth: visibility probabilities must sum to 1");
  if (image_size < 16) throw ContractError("synth: image_size must be >= 16");
  if (min_objects < 1 || max_objects < min_objects) throw ContractError("synth: need 1 <= min_objects <= max_objects");
  if (!(night_fraction >= 0 && night_fraction <= 1)) throw ContractError("synth: night_fraction must be in [0, 1]");
}

SyntheticSample synthesize(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, index));
  const std::size_t size = cfg.image_size;
  SyntheticSample out;
  out.night = rng.uniform() < cfg.night_fraction;

  // Grey-ish RGB background (shared luminance, slight per-channel tint) and a
  // cool thermal background.
  const std::vector<double> lum = value_noise(rng, size, 70, 150);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-10, 10);
  const std::vector<double> heat = value_noise(rng, size, 40, 120);

  const std::size_t n_obj = static_cast<std::size_t>(rng.range(static_cast<int>(cfg.min_objects),
                                                               static_cast<int>(cfg.max_objects)));
  for (std::size_t k = 0; k < n_obj; ++k) {
    ObjectSpec o;
    o.class_id = static_cast<int>(rng.below(kNumSynthClasses));
    const auto [w, h] = class_extent(rng, o.class_id);
    const double u = rng.uniform();
    o.visibility = u < cfg.visibility_probs[0]                                ? Visibility::kRgbOnly
                   : u < cfg.visibility_probs[0] + cfg.visibility_probs[1] ? Visibility::kThermalOnly
                                                                             : Visibility::kBoth;
    o.contrast = rng.uniform(0.75, 1.0);
    const int limit = static_cast<int>(size);
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const int x1 = rng.range(0, limit - w), y1 = rng.range(0, limit - h);
      o.box = Box{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x1 + w),
                  static_cast<double>(y1 + h)};
      placed = std::none_of(out.objects.begin(), out.objects.end(),
                            [&](const ObjectSpec& other) { return overlaps(o.box, other.box); });
    }
    if (placed) out.objects.push_back(o);
  }

  std::vector<double> rgb(size * size * 3), thermal(heat);
  for (std::size_t i = 0; i < size * size; ++i) {
    for (std::size_t c = 0; c < 3; ++c) rgb[i * 3 + c] = lum[i] + tint[c];
  }
  for (const ObjectSpec& o : out.objects) {
    const Rgb color = kClassColor[static_cast<std::size_t>(o.class_id)];
    const double hot = rng.uniform(170, 250);
    for (std::size_t y = static_cast<std::size_t>(o.box.y1); y < static_cast<std::size_t>(o.box.y2); ++y) {
      for (std::size_t x = static_cast<std::size_t>(o.box.x1); x < static_cast<std::size_t>(o.box.x2); ++x) {
        if (!covers(o.class_id, o.box, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
        const std::size_t i = y * size + x;
        if (o.visibility != Visibility::kThermalOnly) {
          const double target[3] = {color.r, color.g, color.b};
          for (std::size_t c = 0; c < 3; ++c) rgb[i * 3 + c] += o.contrast * (target[c] - rgb[i * 3 + c]);
        }
        if (o.visibility != Visibility::kRgbOnly) thermal[i] += o.contrast * (hot - thermal[i]);
      }
    }
    out.pair.annotations.push_back(GroundTruth{o.box, o.class_id});
  }

  out.pair.rgb = Image(size, size, 3);
  out.pair.thermal = Image(size, size, 1);
  for (std::size_t i = 0; i < size * size; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      double v = rgb[i * 3 + c];
      if (out.night) v = v * kNightGain + kNightNoise * rng.normal();
      out.pair.rgb.pixels[i * 3 + c] = to_u8(v);
    }
    out.pair.thermal.pixels[i] = to_u8(thermal[i] + kThermalNoise * rng.normal());
  }
  return out;
}

std::string encode_annotations(const std::vector<std::vector<GroundTruth>>& per_image) {
  std::ostringstream os;
  os << "image_id,class_id,x1,y1,x2,y2\n";
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    for (const GroundTruth& g : per_image[i]) {
      const double v[4] = {g.box.x1, g.box.y1, g.box.x2, g.box.y2};
      os << i << "," << g.class_id;
      for (double c : v) {
        if (c != std::round(c)) throw ContractError("annotations: box coordinates must be integral");
        os << "," << static_cast<long>(c);
      }
      os << "\n";
    }
  }
  return os.str();
}

std::vector<std::vector<GroundTruth>> decode_annotations(const std::string& csv, std::size_t num_images) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "image_id,class_id,x1,y1,x2,y2") {
    throw FormatError("annotations: missing header 'image_id,class_id,x1,y1,x2,y2'");
  }
  std::vector<std::vector<GroundTruth>> out(num_images);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 6) throw FormatError("annotations line " + std::to_string(lineno) + ": expected 6 fields");
    const long id = parse_int(fields[0], lineno);
    if (id < 0 || static_cast<std::size_t>(id) >= num_images) {
      throw FormatError("annotations line " + std::to_string(lineno) + ": image id out of range");
    }
    GroundTruth g;
    g.class_id = static_cast<int>(parse_int(fields[1], lineno));
    g.box = Box{static_cast<double>(parse_int(fields[2], lineno)), static_cast<double>(parse_int(fields[3], lineno)),
                static_cast<double>(parse_int(fields[4], lineno)), static_cast<double>(parse_int(fields[5], lineno))};
    if (!g.box.valid()) throw FormatError("annotations line " + std::to_string(lineno) + ": empty box");
    out[static_cast<std::size_t>(id)].push_back(g);
  }
  return out;
}

void write_pair(const PairSample& sample, const std::filesystem::path& rgb_path,
                const std::filesystem::path& thermal_path) {
  write_pnm(rgb_path, sample.rgb);
  write_pnm(thermal_path, sample.thermal);
}

PairSample load_pair(const std::filesystem::path& rgb_path, const std::filesystem::path& thermal_path,
                     std::vector<GroundTruth> annotations) {
  PairSample s{read_pnm(rgb_path), read_pnm(thermal_path), std::move(annotations)};
  if (s.rgb.channels != 3) throw DimensionError(rgb_path.string() + ": RGB image must have 3 channels");
  if (s.thermal.channels != 1) throw DimensionError(thermal_path.string() + ": thermal image must have 1 channel");
  if (s.rgb.width != s.thermal.width || s.rgb.height != s.thermal.height) {
    throw DimensionError("misaligned pair: RGB " + std::to_string(s.rgb.width) + "x" + std::to_string(s.rgb.height) +
                         " vs thermal " + std::to_string(s.thermal.width) + "x" + std::to_string(s.thermal.height));
  }
  return s;
}

void generate(const SynthConfig& cfg, const std::filesystem::path& root, const std::string& split) {
  cfg.validate();
  const std::filesystem::path dir = root / split;
  std::filesystem::create_directories(dir / "rgb");
  std::filesystem::create_directories(dir / "thermal");
  KeyValues manifest = {
      {"split", split},
      {"count", std::to_string(cfg.count)},
      {"seed", std::to_string(cfg.seed)},
      {"image_size", std::to_string(cfg.image_size)},
      {"visibility_probs", fmt(cfg.visibility_probs[0]) + "," + fmt(cfg.visibility_probs[1]) + "," +
                               fmt(cfg.visibility_probs[2])},
      {"night_fraction", fmt(cfg.night_fraction)},
      {"min_objects", std::to_string(cfg.min_objects)},
      {"max_objects", std::to_string(cfg.max_objects)},
      {"num_classes", std::to_string(kNumSynthClasses)},
  };
  std::vector<std::vector<GroundTruth>> annotations;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const SyntheticSample s = synthesize(cfg, i);
    const std::string name = sample_name(i);
    write_pair(s.pair, dir / "rgb" / (name + ".ppm"), dir / "thermal" / (name + ".pgm"));
    annotations.push_back(s.pair.annotations);
    manifest.emplace_back("file." + name, "rgb/" + name + ".ppm,thermal/" + name + ".pgm");
  }
  write_text(dir / "annotations.csv", encode_annotations(annotations));
  write_text(dir / "manifest.txt", format_key_values(manifest));
}

Dataset load_split(const std::filesystem::path& root, const std::string& split) {
  const std::filesystem::path dir = root / split;
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset split '" + dir.string() + "' not found");
  Dataset d;
  d.split = split;
  d.manifest = parse_key_values(read_text(dir / "manifest.txt"));
  std::size_t count = 0;
  try {
    count = std::stoul(manifest_value(d.manifest, "count"));
  } catch (const std::logic_error&) {
    throw FormatError("manifest: bad count");
  }
  auto annotations = decode_annotations(read_text(dir / "annotations.csv"), count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string files = manifest_value(d.manifest, "file." + sample_name(i));
    const auto comma = files.find(',');
    if (comma == std::string::npos) throw FormatError("manifest: bad file entry for sample " + sample_name(i));
    d.samples.push_back(load_pair(dir / files.substr(0, comma), dir / files.substr(comma + 1), annotations[i]));
  }
  std::size_t listed = 0;
  for (const auto& kv : d.manifest) listed += kv.first.rfind("file.", 0) == 0;
  if (listed != count) throw FormatError("manifest: count does not match the file list");
  return d;
}

template <class S>
ModelInput<S> to_model_input(const PairSample& sample) {
  const std::size_t h = sample.rgb.height, w = sample.rgb.width;
  std::vector<S> rgb(3 * h * w), thermal(h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) rgb[c * h * w + i] = static_cast<S>(sample.rgb.pixels[i * 3 + c]) / S(255);
  }
  for (std::size_t i = 0; i < h * w; ++i) thermal[i] = static_cast<S>(sample.thermal.pixels[i]) / S(255);
  return {Tensor<S>::from({3, h, w}, std::move(rgb)), Tensor<S>::from({1, sample.thermal.height, w}, std::move(thermal))};
}

template ModelInput<float> to_model_input(const PairSample&);
template ModelInput<double> to_model_input(const PairSample&);

}  // namespace cmft
