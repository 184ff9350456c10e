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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "coreecho/data.hpp"

namespace coreecho::data {

// Procedural stand-in for an echocardiography dataset: a filled ellipse
// ("ventricle") on a noisy background whose area goes through one sinusoidal
// cycle between the diastolic area A_d and the systolic area A_s. The label is
// the ejection fraction 100 * (A_d - A_s) / A_d.
struct SynthSpec {
  std::size_t count = 64;
  // Default to count / 6 each; the rest is train.
  std::optional<std::size_t> val_count;
  std::optional<std::size_t> test_count;
  std::size_t min_frames = 20;
  std::size_t max_frames = 30;
  std::size_t size = 32;
  std::size_t channels = 3;
  double min_label = 10.0;
  double max_label = 80.0;
  // Minor/major semi-axis ratio of the ellipse.
  double min_axis_ratio = 0.6;
  double max_axis_ratio = 0.8;
  // Diastolic major semi-axis as a fraction of the frame size.
  double min_radius = 0.31;
  double max_radius = 0.37;
  double noise_sigma = 0.05;
  Task task = Task::kRegression;
  // Classification label is 1 when the ejection fraction is below this.
  double class_threshold = 40.0;

  void validate() const;
  std::size_t resolved_val_count() const { return val_count.value_or(count / 6); }
  std::size_t resolved_test_count() const { return test_count.value_or(count / 6); }
};

struct SynthVideo {
  VideoRecord record;
  double ejection_fraction = 0.0;
  std::vector<double> areas;  // analytic ellipse area per frame, pixels^2
};

// Video `index` of the dataset generated with `seed`.
SynthVideo synth_video(const SynthSpec& spec, std::uint64_t seed, std::size_t index);

struct SynthSummary {
  std::filesystem::path manifest;
  std::size_t train = 0, val = 0, test = 0;
  double min_label = 0.0, max_label = 0.0;
  std::vector<std::size_t> histogram;  // 10 equal-width bins over the label range
};

SynthSummary synth_generate(const SynthSpec& spec, std::uint64_t seed,
                            const std::filesystem::path& out_dir);

}  // namespace coreecho::data
