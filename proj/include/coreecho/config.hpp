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
#include <string>
#include <vector>

#include "coreecho/autodiff.hpp"
#include "coreecho/data.hpp"
#include "coreecho/model.hpp"

namespace coreecho {

enum class OptimizerKind { kAdamW, kSgdMomentum };
enum class SchedulerKind { kStep, kNone };
// rnc+l1 is the two-stage objective; l1 trains encoder and head end to end on
// the regression loss alone.
enum class Objective { kRncL1, kL1 };
// Loss for probing and fine-tuning. kAuto picks l1 for regression and bce
// for classification.
enum class TaskLoss { kAuto, kL1, kMse, kBce };

struct TrainConfig {
  std::size_t batch_videos = 16;
  std::size_t stage1_epochs = 25;
  std::size_t stage2_epochs = 5;
  std::size_t transfer_epochs = 10;
  double temperature = 1.0;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum = 0.9;
  SchedulerKind scheduler = SchedulerKind::kStep;
  std::size_t step_size = 15;
  double gamma = 0.1;
  Objective objective = Objective::kRncL1;
  TaskLoss loss = TaskLoss::kAuto;
  bool standardize_labels = true;
  std::size_t val_clips = 1;
  std::size_t eval_clips = 3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  ad::Precision precision = ad::Precision::kF64;

  void validate() const;
};

struct RunConfig {
  TrainConfig train;
  data::SamplerConfig sampler;
  data::AugmentPolicy augment;
  model::EncoderConfig encoder;
  model::HeadConfig head;
  std::string dataset;
  std::string output_dir;

  RunConfig();
  void validate() const;
  // Encoder input shape follows the sampler and the frame size.
  void sync();
};

std::vector<std::string> config_keys();
std::string config_get(const RunConfig& cfg, const std::string& key);
// Throws ConfigError for unknown keys and malformed values.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat "key = value" lines; '#' starts a comment.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// `runtime` adds workers, dataset and output_dir, which never affect results.
std::string to_text(const RunConfig& cfg, bool runtime = true);
bool is_runtime_key(const std::string& key);

std::string to_string(OptimizerKind k);
std::string to_string(SchedulerKind k);
std::string to_string(Objective k);
std::string to_string(TaskLoss k);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace coreecho
