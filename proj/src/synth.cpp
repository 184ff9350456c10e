/*
 * Copyright (c) 2026 The CoReEcho Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "coreecho/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "coreecho/errors.hpp"

namespace coreecho::data {

void SynthSpec::validate() const {
  if (count == 0) throw UsageError("synth: count must be >= 1");
  if (resolved_val_count() + resolved_test_count() > count) {
    throw UsageError("synth: val + test counts exceed count");
  }
  if (min_frames < 1 || min_frames > max_frames || max_frames > 0xFFFF) {
    throw UsageError("synth: need 1 <= min_frames <= max_frames <= 65535");
  }
  if (size < 8 || size > 0xFFFF) throw UsageError("synth: size must be in [8, 65535]");
  if (channels < 1 || channels > 0xFFFF) throw UsageError("synth: channels must be >= 1");
  if (!(min_label >= 0.0 && min_label <= max_label && max_label < 100.0)) {
    throw UsageError("synth: need 0 <= min_label <= max_label < 100");
  }
  if (!(min_axis_ratio > 0.0 && min_axis_ratio <= max_axis_ratio && max_axis_ratio <= 1.0)) {
    throw UsageError("synth: need 0 < min_axis_ratio <= max_axis_ratio <= 1");
  }
  if (!(min_radius > 0.0 && min_radius <= max_radius && max_radius < 0.5)) {
    throw UsageError("synth: need 0 < min_radius <= max_radius < 0.5");
  }
  if (!(noise_sigma >= 0.0)) throw UsageError("synth: noise_sigma must be >= 0");
}

SynthVideo synth_video(const SynthSpec& spec, std::uint64_t seed, std::size_t index) {
  spec.validate();
  Rng rng = Rng::derive(seed, {stream::kSynth, index});
  const double ef = rng.uniform(spec.min_label, spec.max_label);
  const std::size_t frames =
      static_cast<std::size_t>(rng.integer(static_cast<long long>(spec.min_frames),
                                           static_cast<long long>(spec.max_frames)));
  const double n = static_cast<double>(spec.size);
  const double major = rng.uniform(spec.min_radius, spec.max_radius) * n;
  const double minor = major * rng.uniform(spec.min_axis_ratio, spec.max_axis_ratio);
  const double angle = rng.uniform(-0.35, 0.35);
  const double cy = n / 2.0 + rng.uniform(-1.0, 1.0);
  const double cx = n / 2.0 + rng.uniform(-1.0, 1.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double background = rng.uniform(0.05, 0.2);
  const double foreground = rng.uniform(0.7, 0.9);

  SynthVideo out;
  out.ejection_fraction = ef;
  VideoRecord& rec = out.record;
  char name[32];
  std::snprintf(name, sizeof(name), "vid_%05zu", index);
  rec.id = name;
  rec.frames = frames;
  rec.height = spec.size;
  rec.width = spec.size;
  rec.channels = spec.channels;
  rec.pixels.resize(frames * spec.size * spec.size * spec.channels);
  rec.label = spec.task == Task::kRegression ? ef : (ef < spec.class_threshold ? 1.0 : 0.0);

  const double area_d = std::numbers::pi * major * minor;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);
  constexpr int kSub = 4;
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(frames);
    const double area = area_d * (1.0 - (ef / 100.0) * (1.0 - std::cos(t + phase)) / 2.0);
    out.areas.push_back(area);
    const double s = std::sqrt(area / area_d);
    const double a = major * s, b = minor * s;
    for (std::size_t y = 0; y < spec.size; ++y) {
      for (std::size_t x = 0; x < spec.size; ++x) {
        int inside = 0;
        for (int i = 0; i < kSub; ++i) {
          for (int j = 0; j < kSub; ++j) {
            const double py = static_cast<double>(y) + (i + 0.5) / kSub - cy;
            const double px = static_cast<double>(x) + (j + 0.5) / kSub - cx;
            // Major axis runs vertically, tilted by `angle`.
            const double u = cos_a * py + sin_a * px;
            const double v = -sin_a * py + cos_a * px;
            if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) ++inside;
          }
        }
        const double coverage = inside / static_cast<double>(kSub * kSub);
        double value = background + (foreground - background) * coverage;
        value += spec.noise_sigma * rng.normal();
        value = std::clamp(value, 0.0, 1.0);
        const auto byte = static_cast<std::uint8_t>(std::lround(value * 255.0));
        for (std::size_t c = 0; c < spec.channels; ++c) {
          rec.pixels[((f * spec.size + y) * spec.size + x) * spec.channels + c] = byte;
        }
      }
    }
  }
  return out;
}

SynthSummary synth_generate(const SynthSpec& spec, std::uint64_t seed,
                            const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "videos");
  const std::size_t n_val = spec.resolved_val_count();
  const std::size_t n_test = spec.resolved_test_count();
  const std::size_t n_train = spec.count - n_val - n_test;

  SynthSummary summary;
  summary.histogram.assign(10, 0);
  summary.min_label = spec.min_label;
  summary.max_label = spec.max_label;
  std::vector<ManifestRow> rows;
  rows.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    SynthVideo v = synth_video(spec, seed, i);
    v.record.split = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
    write_vten(out_dir / "videos" / (v.record.id + ".vten"), v.record);
    rows.push_back({v.record.id, v.record.label, v.record.split});

    const double width = spec.max_label - spec.min_label;
    std::size_t bin = 0;
    if (spec.task == Task::kClassification) {
      bin = v.record.label > 0.5 ? 9 : 0;
    } else if (width > 0.0) {
      bin = std::min<std::size_t>(
          9, static_cast<std::size_t>((v.record.label - spec.min_label) / width * 10.0));
    }
    ++summary.histogram[bin];
  }
  summary.train = n_train;
  summary.val = n_val;
  summary.test = n_test;
  summary.manifest = out_dir / "manifest.csv";
  write_manifest(summary.manifest, rows);
  return summary;
}

}  // namespace coreecho::data
