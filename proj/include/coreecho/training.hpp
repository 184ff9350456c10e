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
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coreecho/checkpoint.hpp"
#include "coreecho/config.hpp"
#include "coreecho/data.hpp"
#include "coreecho/model.hpp"
#include "coreecho/optim.hpp"

namespace coreecho::train {

enum class Stage { kStage1, kStage2, kProbe, kFinetune };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct EpochLog {
  Stage stage = Stage::kStage1;
  std::size_t epoch = 0;  // 1-based within the stage
  double loss = 0.0;
  std::optional<double> rnc;
  std::optional<double> l1;
  double lr = 0.0;
  std::size_t steps = 0;
  // Validation MAE for regression, F1 for classification.
  std::optional<double> val_metric;
  std::string val_metric_name;
  bool best = false;

  std::string to_json() const;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Loss used by probe and finetune; resolves kAuto and rejects combinations
// that do not match the task.
TaskLoss resolve_task_loss(TaskLoss requested, data::Task task);

// One training context: model, one optimizer for the encoder and one for the
// head, and the position inside the current stage. Every random draw comes
// from Rng::derive(seed, {stream, stage, epoch, step}), so a run restored
// from a checkpoint continues exactly as the uninterrupted run would.
class Trainer {
 public:
  Trainer(RunConfig cfg, data::Task task);

  // Restores model, optimizer state and stage position.
  static Trainer resume(const Checkpoint& ckpt, std::optional<RunConfig> cfg = std::nullopt);

  // Encoder weights from `ckpt`, fresh head, positioned at epoch 0 of
  // `stage` (kProbe or kFinetune).
  static Trainer transfer(const Checkpoint& ckpt, RunConfig cfg, data::Task task, Stage stage);

  // Stage 1 then stage 2, starting from the current position. `max_epochs`
  // bounds the number of epochs run by this call.
  std::vector<EpochLog> run(const data::Dataset& dataset, const EpochCallback& on_epoch = {},
                            std::optional<std::size_t> max_epochs = std::nullopt);

  std::vector<EpochLog> run_stage1(const data::Dataset& dataset, const EpochCallback& on_epoch = {},
                                   std::optional<std::size_t> max_epochs = std::nullopt);
  std::vector<EpochLog> run_stage2(const data::Dataset& dataset, const EpochCallback& on_epoch = {},
                                   std::optional<std::size_t> max_epochs = std::nullopt);
  // Probe or finetune, depending on the stage given to transfer().
  std::vector<EpochLog> run_transfer(const data::Dataset& dataset, const EpochCallback& on_epoch = {},
                                     std::optional<std::size_t> max_epochs = std::nullopt);

  Checkpoint checkpoint();

  model::Model& model() { return *model_; }
  const RunConfig& config() const { return cfg_; }
  data::Task task() const { return task_; }
  Stage stage() const { return stage_; }
  std::size_t epoch() const { return epoch_; }
  Optimizer& encoder_optimizer() { return *encoder_opt_; }
  Optimizer& head_optimizer() { return *head_opt_; }

  // Regression: sets the head output affine to the mean and standard
  // deviation of the training labels.
  void standardize_head(const data::Dataset& dataset);

 private:
  void make_optimizers();
  void set_stage(Stage s);
  double epoch_lr() const;
  std::optional<double> validate(const data::Dataset& dataset, std::string& name);
  EpochLog finish_epoch(EpochLog log, const data::Dataset& dataset);
  std::vector<std::size_t> shuffled(std::size_t n) const;

  RunConfig cfg_;
  data::Task task_;
  std::unique_ptr<model::Model> model_;
  std::unique_ptr<Optimizer> encoder_opt_, head_opt_;
  Stage stage_ = Stage::kStage1;
  std::size_t epoch_ = 0;
  std::optional<double> best_;
};

}  // namespace coreecho::train
