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

#include <filesystem>
#include <string>

#include "coreecho/config.hpp"
#include "coreecho/synth.hpp"

namespace coreecho::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("coreecho_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// 16x16 single-channel synthetic videos, short enough for unit tests.
inline data::SynthSpec tiny_spec(std::size_t count) {
  data::SynthSpec spec;
  spec.count = count;
  spec.size = 16;
  spec.channels = 1;
  spec.min_frames = 10;
  spec.max_frames = 14;
  return spec;
}

inline data::Dataset tiny_dataset(const std::string& name, std::size_t count, std::uint64_t seed,
                                  data::Task task = data::Task::kRegression) {
  data::SynthSpec spec = tiny_spec(count);
  spec.task = task;
  const auto dir = scratch_dir(name);
  data::synth_generate(spec, seed, dir);
  return data::load_dataset(dir);
}

inline RunConfig tiny_config() {
  return parse_config(R"(
    frame_height = 16
    frame_width = 16
    channels = 1
    clip_frames = 4
    clip_stride = 2
    encoder_widths = 3,4
    embed_dim = 6
    augment_pad = 2
    batch_videos = 4
    stage1_epochs = 2
    stage2_epochs = 1
    transfer_epochs = 1
    lr = 1e-3
    val_clips = 1
    eval_clips = 2
  )");
}

}  // namespace coreecho::testing
