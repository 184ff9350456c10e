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

#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "coreecho/errors.hpp"
#include "coreecho/training.hpp"
#include "support/fixtures.hpp"

namespace coreecho::train {
namespace {

using ad::Parameter;
using ad::Tensor;
using testing::tiny_config;
using testing::tiny_dataset;

std::uint64_t param_checksum(const std::vector<Parameter*>& ps) {
  std::vector<model::NamedTensor> named;
  for (Parameter* p : ps) named.emplace_back(p->name, &p->value);
  return model::checksum(named);
}

std::uint64_t encoder_state(Trainer& t) { return model::checksum(t.model().encoder.state()); }
std::uint64_t head_params(Trainer& t) { return param_checksum(t.model().head.parameters()); }

const data::Dataset& shared_dataset() {
  static const data::Dataset ds = tiny_dataset("train_ds", 10, 4);
  return ds;
}

TEST(AdamW, SingleStepHandComputation) {
  Tensor p = Tensor::from({1.0}), g = Tensor::from({1.0}), m({1}), v({1});
  AdamWOptions opt;
  opt.weight_decay = 0.0;
  adamw_step(p, g, m, v, 1, 0.1, opt);
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_NEAR(m[0], 0.1, 1e-15);
  EXPECT_NEAR(v[0], 0.001, 1e-15);
}

TEST(AdamW, DecayAndZeroGradient) {
  AdamWOptions opt;
  opt.weight_decay = 0.0;
  Tensor p = Tensor::from({1.5, -2.0}), zero({2}), m({2}), v({2});
  adamw_step(p, zero, m, v, 1, 0.1, opt);
  EXPECT_EQ(p, Tensor::from({1.5, -2.0}));
  opt.weight_decay = 0.01;
  adamw_step(p, zero, m, v, 2, 0.1, opt);
  EXPECT_DOUBLE_EQ(p[0], 1.5 - 0.1 * 0.01 * 1.5);
  EXPECT_DOUBLE_EQ(p[1], -2.0 - 0.1 * 0.01 * -2.0);
}

TEST(AdamW, DescendsOnUnitQuadratic) {
  AdamWOptions opt;
  for (double lr : {1e-3, 1e-4}) {
    Tensor p = Tensor::from({0.7, -1.3, 0.2}), m({3}), v({3});
    auto loss = [&] { return 0.5 * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); };
    const double before = loss();
    adamw_step(p, p, m, v, 1, lr, opt);
    EXPECT_LT(loss(), before);
  }
}

TEST(AdamW, Errors) {
  Tensor p = Tensor::from({1.0}), g = Tensor::from({1.0}), m({1}), v({1});
  AdamWOptions opt;
  opt.eps = 0.0;
  EXPECT_THROW(adamw_step(p, g, m, v, 1, 0.1, opt), ConfigError);
  opt.eps = -1e-8;
  EXPECT_THROW(adamw_step(p, g, m, v, 1, 0.1, opt), ConfigError);
  opt.eps = 1e-8;
  Tensor wide({2});
  EXPECT_THROW(adamw_step(p, wide, m, v, 1, 0.1, opt), ShapeError);
}

TEST(AdamW, OptimizerSkipsFrozenParameters) {
  Parameter a("a", Tensor::from({1.0})), b("b", Tensor::from({1.0}), false);
  AdamW opt({&a, &b}, AdamWOptions{});
  opt.zero_grad();
  a.grad = Tensor::from({1.0});
  b.grad = Tensor::from({1.0});
  opt.step(0.1);
  EXPECT_LT(a.value[0], 1.0);
  EXPECT_EQ(b.value[0], 1.0);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(SgdMomentum, TwoStepHandComputation) {
  Parameter p("p", Tensor::from({1.0}));
  SgdMomentum opt({&p}, 0.9, 0.0);
  for (int i = 0; i < 2; ++i) {
    p.grad = Tensor::from({1.0});
    opt.step(0.1);
  }
  // velocity 1 then 1.9
  EXPECT_NEAR(p.value[0], 0.71, 1e-15);
}

TEST(StepLr, Examples) {
  EXPECT_EQ(step_lr(1e-4, 0, 15, 0.1), 1e-4);
  EXPECT_EQ(step_lr(1e-4, 14, 15, 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(step_lr(1e-4, 15, 15, 0.1), 1e-5);
  EXPECT_DOUBLE_EQ(step_lr(1e-4, 30, 15, 0.1), 1e-6);
  for (std::size_t e : {0u, 7u, 100u}) EXPECT_EQ(step_lr(3e-4, e, 2, 1.0), 3e-4);
  EXPECT_THROW(step_lr(1e-4, 0, 0, 0.1), ConfigError);
  EXPECT_THROW(step_lr(1e-4, 0, 15, 0.0), ConfigError);
  EXPECT_THROW(step_lr(1e-4, 0, 15, 1.5), ConfigError);
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config = "lr = 0.001\nseed = 3\n";
  c.epoch = 7;
  c.rng_state = "12 34 56";
  c.meta = {{"stage", "stage2"}, {"best", "0.1000000000000000055511151231257827"}};
  c.put("a", Tensor({2, 3}, {1, -2, 3.5, 1e-300, -0.0, 6}));
  c.put("b", Tensor::from({std::nextafter(1.0, 2.0)}));
  return c;
}

CheckpointError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return CheckpointError::Kind::kIo;
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CRCK");
  EXPECT_EQ(bytes[4], kCheckpointVersion & 0xFF);
  EXPECT_EQ(bytes[5], kCheckpointVersion >> 8);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_TRUE(back == c);
  EXPECT_TRUE(std::signbit(back.tensor("a")[4]));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto dir = testing::scratch_dir("ckpt_rt");
  save_checkpoint(dir / "x.ckpt", c);
  save_checkpoint(dir / "y.ckpt", load_checkpoint(dir / "x.ckpt"));
  std::ifstream x(dir / "x.ckpt", std::ios::binary), y(dir / "y.ckpt", std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(x), {}), std::string(std::istreambuf_iterator<char>(y), {}));
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ckpt.tmp"));
}

TEST(Checkpoint, DistinctErrors) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(decode_kind(magic), CheckpointError::Kind::kMagic);
  auto version = bytes;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), CheckpointError::Kind::kVersion);
  for (std::size_t cut : {std::size_t{3}, std::size_t{8}, std::size_t{40}, bytes.size() - 1}) {
    EXPECT_EQ(decode_kind(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(cut))),
              CheckpointError::Kind::kTruncated)
        << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(decode_kind(trailing), CheckpointError::Kind::kCorrupt);
  try {
    load_checkpoint(testing::scratch_dir("ckpt_missing") / "none.ckpt");
    ADD_FAILURE();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::kIo);
  }
  EXPECT_THROW(sample_checkpoint().tensor("nope"), CheckpointError);
}

TEST(TaskLoss, Resolution) {
  EXPECT_EQ(resolve_task_loss(TaskLoss::kAuto, data::Task::kRegression), TaskLoss::kL1);
  EXPECT_EQ(resolve_task_loss(TaskLoss::kAuto, data::Task::kClassification), TaskLoss::kBce);
  EXPECT_EQ(resolve_task_loss(TaskLoss::kMse, data::Task::kRegression), TaskLoss::kMse);
  EXPECT_THROW(resolve_task_loss(TaskLoss::kMse, data::Task::kClassification), ConfigError);
  EXPECT_THROW(resolve_task_loss(TaskLoss::kL1, data::Task::kClassification), ConfigError);
  EXPECT_THROW(resolve_task_loss(TaskLoss::kBce, data::Task::kRegression), ConfigError);
}

TEST(Stage1, OneEpochChangesEncoderAndHead) {
  const data::Dataset ds = tiny_dataset("stage1_four", 6, 2);
  ASSERT_EQ(ds.split(data::Split::kTrain).size(), 4u);
  Trainer t(tiny_config(), data::Task::kRegression);
  const auto enc = param_checksum(t.model().encoder.parameters());
  const auto head = head_params(t);
  const auto logs = t.run_stage1(ds, {}, 1);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(logs[0].steps, 1u);
  EXPECT_TRUE(logs[0].rnc.has_value());
  EXPECT_NEAR(logs[0].loss, *logs[0].rnc + *logs[0].l1, 1e-12);
  EXPECT_NE(param_checksum(t.model().encoder.parameters()), enc);
  EXPECT_NE(head_params(t), head);
}

TEST(Stage1, ZeroLearningRateLeavesParametersBitIdentical) {
  RunConfig cfg = tiny_config();
  cfg.train.lr = 0.0;
  Trainer t(cfg, data::Task::kRegression);
  const auto enc = param_checksum(t.model().encoder.parameters());
  const auto head = head_params(t);
  t.run(shared_dataset());
  EXPECT_EQ(param_checksum(t.model().encoder.parameters()), enc);
  EXPECT_EQ(head_params(t), head);
}

TEST(Stage1, SeededRunsReproduceBitwise) {
  RunConfig cfg = tiny_config();
  cfg.train.stage1_epochs = 5;
  std::vector<double> curves[2];
  std::uint64_t sums[2];
  for (int r = 0; r < 2; ++r) {
    Trainer t(cfg, data::Task::kRegression);
    for (const EpochLog& l : t.run_stage1(shared_dataset())) curves[r].push_back(l.loss);
    sums[r] = model::checksum(t.model().state());
  }
  ASSERT_EQ(curves[0].size(), 5u);
  EXPECT_EQ(curves[0], curves[1]);
  EXPECT_EQ(sums[0], sums[1]);
}

TEST(Stage1, WorkerCountDoesNotChangeResults) {
  std::uint64_t sums[2];
  for (int r = 0; r < 2; ++r) {
    RunConfig cfg = tiny_config();
    cfg.train.workers = r == 0 ? 1 : 3;
    Trainer t(cfg, data::Task::kRegression);
    t.run(shared_dataset());
    sums[r] = model::checksum(t.model().state());
  }
  EXPECT_EQ(sums[0], sums[1]);
}

TEST(Stage1, RejectsClassificationManifest) {
  const data::Dataset cls = tiny_dataset("stage1_cls", 10, 1, data::Task::kClassification);
  ASSERT_EQ(cls.task, data::Task::kClassification);
  Trainer t(tiny_config(), data::Task::kClassification);
  EXPECT_THROW(t.run_stage1(cls), ConfigError);
}

TEST(Stage2, EncoderInvariantHeadChanges) {
  RunConfig cfg = tiny_config();
  cfg.train.stage2_epochs = 3;
  Trainer t(cfg, data::Task::kRegression);
  t.run_stage1(shared_dataset());
  const auto enc = encoder_state(t);
  const auto head = head_params(t);
  std::size_t epochs = 0;
  t.run_stage2(shared_dataset(), [&](const EpochLog& l) {
    ++epochs;
    EXPECT_EQ(l.stage, Stage::kStage2);
    EXPECT_GT(l.loss, 0.0);
    EXPECT_EQ(encoder_state(t), enc);
  });
  EXPECT_EQ(epochs, 3u);
  EXPECT_TRUE(t.model().encoder.frozen());
  EXPECT_EQ(encoder_state(t), enc);
  EXPECT_NE(head_params(t), head);
}

TEST(Transfer, ProbeFreezesFinetuneUpdates) {
  Trainer base(tiny_config(), data::Task::kRegression);
  base.run(shared_dataset());
  const Checkpoint ckpt = base.checkpoint();
  const auto enc = encoder_state(base);

  RunConfig cfg = tiny_config();
  cfg.train.transfer_epochs = 2;
  Trainer probe = Trainer::transfer(ckpt, cfg, data::Task::kRegression, Stage::kProbe);
  EXPECT_EQ(encoder_state(probe), enc);
  EXPECT_NE(head_params(probe), head_params(base));
  probe.run_transfer(shared_dataset());
  EXPECT_EQ(encoder_state(probe), enc);

  Trainer ft = Trainer::transfer(ckpt, cfg, data::Task::kRegression, Stage::kFinetune);
  const auto ft_head = head_params(ft);
  ft.run_transfer(shared_dataset(), {}, 1);
  EXPECT_NE(param_checksum(ft.model().encoder.parameters()), param_checksum(base.model().encoder.parameters()));
  EXPECT_NE(head_params(ft), ft_head);

  cfg.train.lr = 0.0;
  Trainer frozen_lr = Trainer::transfer(ckpt, cfg, data::Task::kRegression, Stage::kFinetune);
  const auto p_enc = param_checksum(frozen_lr.model().encoder.parameters());
  const auto p_head = head_params(frozen_lr);
  frozen_lr.run_transfer(shared_dataset());
  EXPECT_EQ(param_checksum(frozen_lr.model().encoder.parameters()), p_enc);
  EXPECT_EQ(head_params(frozen_lr), p_head);

  EXPECT_THROW(Trainer::transfer(ckpt, tiny_config(), data::Task::kRegression, Stage::kStage2), UsageError);
}

TEST(Transfer, ClassificationMismatchAndBce) {
  Trainer base(tiny_config(), data::Task::kRegression);
  const Checkpoint ckpt = base.checkpoint();
  const data::Dataset cls = tiny_dataset("transfer_cls", 12, 3, data::Task::kClassification);
  RunConfig cfg = tiny_config();
  cfg.train.loss = TaskLoss::kMse;
  EXPECT_THROW(
      {
        Trainer t = Trainer::transfer(ckpt, cfg, data::Task::kClassification, Stage::kProbe);
        t.run_transfer(cls);
      },
      ConfigError);
  cfg.train.loss = TaskLoss::kAuto;
  Trainer t = Trainer::transfer(ckpt, cfg, data::Task::kClassification, Stage::kProbe);
  const auto logs = t.run_transfer(cls);
  ASSERT_EQ(logs.size(), 1u);
  EXPECT_EQ(logs[0].val_metric_name, "f1");
  EXPECT_THROW(t.run_transfer(shared_dataset()), ConfigError);
}

TEST(Resume, SplitRunMatchesUninterrupted) {
  RunConfig cfg = tiny_config();
  cfg.train.stage1_epochs = 3;
  cfg.train.stage2_epochs = 2;
  Trainer full(cfg, data::Task::kRegression);
  std::vector<double> full_losses;
  for (const EpochLog& l : full.run(shared_dataset())) full_losses.push_back(l.loss);
  const Checkpoint full_ckpt = full.checkpoint();

  for (std::size_t split : {1u, 3u, 4u}) {
    Trainer first(cfg, data::Task::kRegression);
    std::vector<double> losses;
    for (const EpochLog& l : first.run(shared_dataset(), {}, split)) losses.push_back(l.loss);
    const Checkpoint mid = decode_checkpoint(encode_checkpoint(first.checkpoint()));
    Trainer second = Trainer::resume(mid);
    for (const EpochLog& l : second.run(shared_dataset())) losses.push_back(l.loss);
    EXPECT_EQ(losses, full_losses) << "split " << split;
    const Checkpoint end = second.checkpoint();
    EXPECT_EQ(end.tensors, full_ckpt.tensors) << "split " << split;
    EXPECT_EQ(end.meta, full_ckpt.meta) << "split " << split;
  }
}

TEST(Resume, OptimizerMismatchRejected) {
  Trainer t(tiny_config(), data::Task::kRegression);
  const Checkpoint c = t.checkpoint();
  RunConfig other = tiny_config();
  other.train.optimizer = OptimizerKind::kSgdMomentum;
  EXPECT_THROW(Trainer::resume(c, other), ConfigError);
  Checkpoint broken = c;
  broken.meta.erase("stage");
  EXPECT_THROW(Trainer::resume(broken), CheckpointError);
}

TEST(Trainer, FrameSizeMismatchIsConfigError) {
  RunConfig cfg = tiny_config();
  config_set(cfg, "frame_height", "20");
  config_set(cfg, "frame_width", "20");
  Trainer t(cfg, data::Task::kRegression);
  EXPECT_THROW(t.run(shared_dataset()), ConfigError);
}

TEST(EpochLog, JsonFields) {
  EpochLog l;
  l.stage = Stage::kStage1;
  l.epoch = 2;
  l.loss = 1.5;
  l.rnc = 1.0;
  l.l1 = 0.5;
  l.val_metric = 3.25;
  l.val_metric_name = "mae";
  const std::string j = l.to_json();
  for (const char* key : {"\"stage\":\"stage1\"", "\"epoch\":2", "\"loss\":1.5", "\"val_mae\":3.25"}) {
    EXPECT_NE(j.find(key), std::string::npos) << j;
  }
}

}  // namespace
}  // namespace coreecho::train
