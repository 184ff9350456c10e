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

#include "coreecho/training.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "coreecho/errors.hpp"
#include "coreecho/evaluation.hpp"
#include "coreecho/losses.hpp"

namespace coreecho::train {

using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

std::uint64_t stage_tag(Stage s) { return static_cast<std::uint64_t>(s) + 1; }

model::HeadConfig head_config(const RunConfig& cfg, data::Task task) {
  model::HeadConfig h = cfg.head;
  h.embed_dim = cfg.encoder.embed_dim;
  h.kind = task == data::Task::kClassification ? model::HeadKind::kClassification
                                               : model::HeadKind::kRegression;
  return h;
}

std::vector<double> labels_of(std::span<const data::VideoRecord* const> records) {
  std::vector<double> y;
  for (const data::VideoRecord* r : records) y.push_back(r->label);
  return y;
}

void check_frame_shape(const RunConfig& cfg, const data::Dataset& dataset) {
  for (const data::VideoRecord& r : dataset.records) {
    if (r.height != cfg.encoder.height || r.width != cfg.encoder.width || r.channels != cfg.encoder.channels) {
      throw ConfigError("dataset frames are " + std::to_string(r.height) + "x" + std::to_string(r.width) +
                        "x" + std::to_string(r.channels) + " but the encoder expects " +
                        std::to_string(cfg.encoder.height) + "x" + std::to_string(cfg.encoder.width) + "x" +
                        std::to_string(cfg.encoder.channels));
    }
  }
}

Var task_loss(TaskLoss loss, const Var& pred, std::span<const double> y) {
  switch (loss) {
    case TaskLoss::kMse: return losses::mse_loss(pred, y);
    case TaskLoss::kBce: return losses::bce_loss(pred, y);
    default: return losses::l1_loss(pred, y);
  }
}

void load_tensors(const Checkpoint& ckpt, const std::vector<model::NamedTensor>& into) {
  for (const auto& [name, t] : into) {
    const Tensor& src = ckpt.tensor(name);
    if (src.shape() != t->shape()) {
      throw CheckpointError(CheckpointError::Kind::kCorrupt,
                            "checkpoint: tensor '" + name + "' has shape " + ad::shape_str(src.shape()) +
                                ", expected " + ad::shape_str(t->shape()));
    }
    *t = src;
  }
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
    case Stage::kProbe: return "probe";
    case Stage::kFinetune: return "finetune";
  }
  return "stage1";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::kStage1, Stage::kStage2, Stage::kProbe, Stage::kFinetune}) {
    if (to_string(st) == s) return st;
  }
  throw CheckpointError(CheckpointError::Kind::kCorrupt, "checkpoint: unknown stage '" + s + "'");
}

std::string EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = to_string(stage);
  j["epoch"] = epoch;
  j["loss"] = loss;
  if (rnc) j["rnc"] = *rnc;
  if (l1) j["l1"] = *l1;
  j["lr"] = lr;
  j["steps"] = steps;
  if (val_metric) {
    j["val_" + val_metric_name] = *val_metric;
  } else {
    j["val_" + (val_metric_name.empty() ? std::string("mae") : val_metric_name)] = nullptr;
  }
  j["best"] = best;
  return j.dump();
}

TaskLoss resolve_task_loss(TaskLoss requested, data::Task task) {
  const bool cls = task == data::Task::kClassification;
  if (requested == TaskLoss::kAuto) return cls ? TaskLoss::kBce : TaskLoss::kL1;
  if (cls && requested != TaskLoss::kBce) {
    throw ConfigError("loss " + to_string(requested) + " does not fit a classification manifest; use bce");
  }
  if (!cls && requested == TaskLoss::kBce) {
    throw ConfigError("loss bce does not fit a regression manifest; use l1 or mse");
  }
  return requested;
}

Trainer::Trainer(RunConfig cfg, data::Task task) : cfg_(std::move(cfg)), task_(task) {
  cfg_.sync();
  cfg_.validate();
  model_ = std::make_unique<model::Model>(cfg_.encoder, head_config(cfg_, task_), cfg_.train.seed);
  make_optimizers();
}

void Trainer::make_optimizers() {
  const TrainConfig& t = cfg_.train;
  auto make = [&](std::vector<ad::Parameter*> params) -> std::unique_ptr<Optimizer> {
    if (t.optimizer == OptimizerKind::kAdamW) {
      return std::make_unique<AdamW>(std::move(params), AdamWOptions{t.beta1, t.beta2, t.adam_eps, t.weight_decay});
    }
    return std::make_unique<SgdMomentum>(std::move(params), t.momentum, t.weight_decay);
  };
  encoder_opt_ = make(model_->encoder.parameters());
  head_opt_ = make(model_->head.parameters());
}

void Trainer::set_stage(Stage s) {
  stage_ = s;
  epoch_ = 0;
  best_.reset();
  model_->encoder.set_trainable(s == Stage::kStage1 || s == Stage::kFinetune);
}

Checkpoint Trainer::checkpoint() {
  Checkpoint c;
  c.config = to_text(cfg_, /*runtime=*/false);
  c.epoch = epoch_;
  c.rng_state = Rng::derive(cfg_.train.seed, {stream::kShuffle, stage_tag(stage_), epoch_}).state();
  c.meta["stage"] = to_string(stage_);
  c.meta["task"] = data::to_string(task_);
  c.meta["optimizer"] = encoder_opt_->kind();
  c.meta["encoder_steps"] = std::to_string(encoder_opt_->steps());
  c.meta["head_steps"] = std::to_string(head_opt_->steps());
  c.meta["best"] = best_ ? format_double(*best_) : "";
  for (const auto& [name, t] : model_->state()) c.put(name, *t);
  for (const auto& [name, t] : encoder_opt_->state()) c.put("optim.encoder." + name, *t);
  for (const auto& [name, t] : head_opt_->state()) c.put("optim.head." + name, *t);
  return c;
}

Trainer Trainer::resume(const Checkpoint& ckpt, std::optional<RunConfig> cfg) {
  RunConfig run = cfg ? *cfg : parse_config(ckpt.config);
  auto meta = [&](const char* key) -> const std::string& {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) {
      throw CheckpointError(CheckpointError::Kind::kCorrupt, std::string("checkpoint: missing meta '") + key + "'");
    }
    return it->second;
  };
  Trainer t(std::move(run), data::parse_task(meta("task")));
  if (meta("optimizer") != t.encoder_opt_->kind()) {
    throw ConfigError("checkpoint optimizer " + meta("optimizer") + " differs from configured " +
                      t.encoder_opt_->kind());
  }
  load_tensors(ckpt, t.model_->state());
  std::vector<model::NamedTensor> opt_state;
  for (const auto& [name, ten] : t.encoder_opt_->state()) opt_state.emplace_back("optim.encoder." + name, ten);
  for (const auto& [name, ten] : t.head_opt_->state()) opt_state.emplace_back("optim.head." + name, ten);
  load_tensors(ckpt, opt_state);
  t.encoder_opt_->set_steps(std::stoull(meta("encoder_steps")));
  t.head_opt_->set_steps(std::stoull(meta("head_steps")));
  t.set_stage(parse_stage(meta("stage")));
  t.epoch_ = ckpt.epoch;
  if (!meta("best").empty()) t.best_ = std::stod(meta("best"));
  return t;
}

Trainer Trainer::transfer(const Checkpoint& ckpt, RunConfig cfg, data::Task task, Stage stage) {
  if (stage != Stage::kProbe && stage != Stage::kFinetune) {
    throw UsageError("transfer: stage must be probe or finetune");
  }
  resolve_task_loss(cfg.train.loss, task);
  // Encoder architecture comes from the pretrained run.
  const RunConfig source = parse_config(ckpt.config);
  cfg.encoder = source.encoder;
  cfg.sampler.clip_frames = source.sampler.clip_frames;
  cfg.sync();
  Trainer t(std::move(cfg), task);
  load_tensors(ckpt, t.model_->encoder.state());
  t.set_stage(stage);
  return t;
}

void Trainer::standardize_head(const data::Dataset& dataset) {
  if (task_ != data::Task::kRegression || !cfg_.train.standardize_labels) return;
  const std::vector<double> y = labels_of(dataset.split(data::Split::kTrain));
  if (y.empty()) return;
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  model_->head.set_output_affine(mean, var > 0.0 ? std::sqrt(var) : 1.0);
}

double Trainer::epoch_lr() const {
  const TrainConfig& t = cfg_.train;
  if (stage_ == Stage::kStage1 && t.scheduler == SchedulerKind::kStep) {
    return step_lr(t.lr, epoch_, t.step_size, t.gamma);
  }
  return t.lr;
}

std::vector<std::size_t> Trainer::shuffled(std::size_t n) const {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(cfg_.train.seed, {stream::kShuffle, stage_tag(stage_), epoch_});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

std::optional<double> Trainer::validate(const data::Dataset& dataset, std::string& name) {
  const bool cls = task_ == data::Task::kClassification;
  name = cls ? "f1" : "mae";
  const std::vector<const data::VideoRecord*> val = dataset.split(data::Split::kVal);
  if (val.empty()) return std::nullopt;
  eval::PredictOptions opt;
  opt.clips = cfg_.train.val_clips;
  opt.seed = cfg_.train.seed;
  const std::vector<double> pred = eval::predict(*model_, val, cfg_.sampler, opt);
  const std::vector<double> y = labels_of(val);
  if (cls) return eval::classification_metrics(pred, y).get("f1");
  double mae = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) mae += std::fabs(pred[i] - y[i]);
  return mae / static_cast<double>(y.size());
}

EpochLog Trainer::finish_epoch(EpochLog log, const data::Dataset& dataset) {
  ++epoch_;
  log.epoch = epoch_;
  log.val_metric = validate(dataset, log.val_metric_name);
  if (log.val_metric) {
    const bool higher_better = task_ == data::Task::kClassification;
    const double v = *log.val_metric;
    if (!best_ || (higher_better ? v > *best_ : v < *best_)) {
      best_ = v;
      log.best = true;
    }
  }
  return log;
}

std::vector<EpochLog> Trainer::run(const data::Dataset& dataset, const EpochCallback& on_epoch,
                                   std::optional<std::size_t> max_epochs) {
  std::vector<EpochLog> logs;
  if (stage_ == Stage::kStage1) {
    logs = run_stage1(dataset, on_epoch, max_epochs);
    if (epoch_ < cfg_.train.stage1_epochs) return logs;
    set_stage(Stage::kStage2);
    if (max_epochs) max_epochs = *max_epochs - logs.size();
  }
  if (stage_ != Stage::kStage2) throw UsageError("run: trainer is positioned in " + to_string(stage_));
  std::vector<EpochLog> more = run_stage2(dataset, on_epoch, max_epochs);
  logs.insert(logs.end(), more.begin(), more.end());
  return logs;
}

std::vector<EpochLog> Trainer::run_stage1(const data::Dataset& dataset, const EpochCallback& on_epoch,
                                          std::optional<std::size_t> max_epochs) {
  if (stage_ != Stage::kStage1) throw UsageError("run_stage1: trainer is positioned in " + to_string(stage_));
  if (task_ != data::Task::kRegression) throw ConfigError("two-stage training needs a regression manifest");
  check_frame_shape(cfg_, dataset);
  const std::vector<const data::VideoRecord*> train = dataset.split(data::Split::kTrain);
  if (train.empty()) throw DataError("dataset has no training videos");
  if (epoch_ == 0 && encoder_opt_->steps() == 0) standardize_head(dataset);

  const TrainConfig& t = cfg_.train;
  const std::size_t n_batch = t.batch_videos;
  std::vector<EpochLog> logs;
  while (epoch_ < t.stage1_epochs && (!max_epochs || logs.size() < *max_epochs)) {
    const double lr = epoch_lr();
    const std::vector<std::size_t> order = shuffled(train.size());
    EpochLog log;
    log.stage = Stage::kStage1;
    log.lr = lr;
    double loss_sum = 0.0, rnc_sum = 0.0, l1_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += n_batch, ++step) {
      const std::size_t end = std::min(order.size(), begin + n_batch);
      std::vector<const data::VideoRecord*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);
      Rng sample_rng = Rng::derive(t.seed, {stream::kSample, stage_tag(stage_), epoch_, step});
      Rng drop_rng = Rng::derive(t.seed, {stream::kDropout, stage_tag(stage_), epoch_, step});
      const data::ClipBatch clips = data::build_stage1_batch(batch, cfg_.sampler, cfg_.augment, sample_rng, t.workers);

      Tape tape(t.precision);
      Var e = model_->encoder.forward(tape, tape.constant(clips.clips), ad::Mode::kTrain);
      Var total;
      if (t.objective == Objective::kRncL1) {
        losses::Stage1Loss l =
            losses::stage1_loss(e, clips.labels, model_->head, t.temperature, ad::Mode::kTrain, &drop_rng);
        total = l.total;
        rnc_sum += l.rnc.value().item();
        l1_sum += l.l1.value().item();
      } else {
        Var pred = model_->head.forward(tape, e, ad::Mode::kTrain, &drop_rng);
        total = losses::l1_loss(pred, clips.labels);
        l1_sum += total.value().item();
      }
      loss_sum += total.value().item();
      encoder_opt_->zero_grad();
      head_opt_->zero_grad();
      tape.backward(total);
      encoder_opt_->step(lr);
      head_opt_->step(lr);
    }
    const double steps = static_cast<double>(step);
    log.steps = step;
    log.loss = loss_sum / steps;
    log.l1 = l1_sum / steps;
    if (t.objective == Objective::kRncL1) log.rnc = rnc_sum / steps;
    logs.push_back(finish_epoch(log, dataset));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

std::vector<EpochLog> Trainer::run_stage2(const data::Dataset& dataset, const EpochCallback& on_epoch,
                                          std::optional<std::size_t> max_epochs) {
  if (stage_ != Stage::kStage2) set_stage(Stage::kStage2);
  check_frame_shape(cfg_, dataset);
  const std::vector<const data::VideoRecord*> train = dataset.split(data::Split::kTrain);
  if (train.size() < 2) throw DataError("stage 2 needs at least 2 training videos");
  const TrainConfig& t = cfg_.train;
  std::vector<EpochLog> logs;
  while (epoch_ < t.stage2_epochs && (!max_epochs || logs.size() < *max_epochs)) {
    const double lr = epoch_lr();
    const std::vector<std::size_t> order = shuffled(train.size());
    EpochLog log;
    log.stage = Stage::kStage2;
    log.lr = lr;
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin + 1 < order.size(); begin += t.batch_videos, ++step) {
      const std::size_t end = std::min(order.size(), begin + t.batch_videos);
      if (end - begin < 2) break;
      std::vector<const data::VideoRecord*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);
      Rng sample_rng = Rng::derive(t.seed, {stream::kSample, stage_tag(stage_), epoch_, step});
      Rng drop_rng = Rng::derive(t.seed, {stream::kDropout, stage_tag(stage_), epoch_, step});
      const data::ClipBatch clips =
          data::build_single_clip_batch(batch, cfg_.sampler, cfg_.augment, sample_rng, t.workers);
      Tape tape(t.precision);
      losses::Stage2Loss l = losses::stage2_loss(tape, clips.clips, clips.labels, model_->encoder, model_->head,
                                                 ad::Mode::kTrain, &drop_rng);
      loss_sum += l.total.value().item();
      head_opt_->zero_grad();
      tape.backward(l.total);
      head_opt_->step(lr);
    }
    log.steps = step;
    log.loss = step > 0 ? loss_sum / static_cast<double>(step) : 0.0;
    log.l1 = log.loss;
    logs.push_back(finish_epoch(log, dataset));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

std::vector<EpochLog> Trainer::run_transfer(const data::Dataset& dataset, const EpochCallback& on_epoch,
                                            std::optional<std::size_t> max_epochs) {
  if (stage_ != Stage::kProbe && stage_ != Stage::kFinetune) {
    throw UsageError("run_transfer: trainer is positioned in " + to_string(stage_));
  }
  if (dataset.task != task_) throw ConfigError("run_transfer: dataset task differs from the trainer task");
  check_frame_shape(cfg_, dataset);
  const TaskLoss loss = resolve_task_loss(cfg_.train.loss, task_);
  const std::vector<const data::VideoRecord*> train = dataset.split(data::Split::kTrain);
  if (train.size() < 2) throw DataError("transfer needs at least 2 training videos");
  if (epoch_ == 0 && head_opt_->steps() == 0) standardize_head(dataset);
  const bool finetune = stage_ == Stage::kFinetune;
  const TrainConfig& t = cfg_.train;
  std::vector<EpochLog> logs;
  while (epoch_ < t.transfer_epochs && (!max_epochs || logs.size() < *max_epochs)) {
    const double lr = epoch_lr();
    const std::vector<std::size_t> order = shuffled(train.size());
    EpochLog log;
    log.stage = stage_;
    log.lr = lr;
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin + 1 < order.size(); begin += t.batch_videos, ++step) {
      const std::size_t end = std::min(order.size(), begin + t.batch_videos);
      if (end - begin < 2) break;
      std::vector<const data::VideoRecord*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);
      Rng sample_rng = Rng::derive(t.seed, {stream::kSample, stage_tag(stage_), epoch_, step});
      Rng drop_rng = Rng::derive(t.seed, {stream::kDropout, stage_tag(stage_), epoch_, step});
      const data::ClipBatch clips =
          data::build_single_clip_batch(batch, cfg_.sampler, cfg_.augment, sample_rng, t.workers);
      Tape tape(t.precision);
      Var e = model_->encoder.forward(tape, tape.constant(clips.clips),
                                      finetune ? ad::Mode::kTrain : ad::Mode::kEval);
      if (!finetune) e = ad::stop_gradient(e);
      Var pred = model_->head.forward(tape, e, ad::Mode::kTrain, &drop_rng);
      Var total = task_loss(loss, pred, clips.labels);
      loss_sum += total.value().item();
      encoder_opt_->zero_grad();
      head_opt_->zero_grad();
      tape.backward(total);
      if (finetune) encoder_opt_->step(lr);
      head_opt_->step(lr);
    }
    log.steps = step;
    log.loss = step > 0 ? loss_sum / static_cast<double>(step) : 0.0;
    logs.push_back(finish_epoch(log, dataset));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

}  // namespace coreecho::train
