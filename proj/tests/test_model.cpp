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
#include <numeric>

#include <gtest/gtest.h>

#include "coreecho/errors.hpp"
#include "coreecho/grad_check.hpp"
#include "coreecho/model.hpp"
#include "support/suites.hpp"

namespace coreecho::model {
namespace {

using ad::Mode;
using ad::Tape;
using ad::Tensor;
using testing::normal_tensor;
using testing::random_tensor;

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.frames = 4;
  c.height = 8;
  c.width = 8;
  c.channels = 1;
  c.widths = {3, 4};
  c.embed_dim = 5;
  return c;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Tensor head_eval(RegressionHead& head, const Tensor& e) {
  Tape tape(ad::Precision::kF64, false);
  return head.forward(tape, tape.constant(e), Mode::kEval, nullptr).value();
}

TEST(Head, ErfOracle) {
  HeadConfig hc;
  hc.embed_dim = 2;
  RegressionHead head(hc, 0);
  head.w1().value = Tensor({2, 3}, {1, 0, 0, 0, 1, 0});
  head.w2().value = Tensor({1, 3}, {1, 1, 0});
  const Tensor e({1, 2}, {1, -1});
  // default statistics still divide by sqrt(1 + eps) in both BN layers
  const double s = 1.0 / (1.0 + 1e-5);
  EXPECT_NEAR(head_eval(head, e)[0], gelu_ref(s) + gelu_ref(-s), 1e-12);

  head.bn1_stats().var.fill(1.0 - 1e-5);
  head.bn2_stats().var.fill(1.0 - 1e-5);
  EXPECT_NEAR(head_eval(head, e)[0], 0.682690, 1e-6);
}

TEST(Head, ZeroWeightCollapse) {
  HeadConfig hc;
  hc.embed_dim = 4;
  RegressionHead head(hc, 3);
  head.w1().value.fill(0.0);
  head.w2().value = Tensor({1, 5}, {0.3, -0.7, 1.1, 2.0, 0.25});
  Rng rng(1);
  const Tensor y = head_eval(head, normal_tensor({6, 4}, rng));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Head, ClassificationSigmoidOfZero) {
  HeadConfig hc;
  hc.embed_dim = 3;
  hc.kind = HeadKind::kClassification;
  RegressionHead head(hc, 1);
  head.w2().value.fill(0.0);
  Rng rng(2);
  const Tensor p = head_eval(head, normal_tensor({3, 3}, rng));
  for (double v : p.data()) EXPECT_EQ(v, 0.5);
}

TEST(Head, MatchesIndependentFormula) {
  HeadConfig hc;
  hc.embed_dim = 7;
  RegressionHead head(hc, 11);
  Rng rng(5);
  const std::size_t d = 7;
  auto perturb = [&](Tensor& t, double lo, double hi) {
    for (double& v : t.data()) v = rng.uniform(lo, hi);
  };
  perturb(head.bn1_stats().mean, -1, 1);
  perturb(head.bn1_stats().var, 0.5, 2);
  perturb(head.bn2_stats().mean, -1, 1);
  perturb(head.bn2_stats().var, 0.5, 2);
  std::vector<ad::Parameter*> ps = head.parameters();
  for (ad::Parameter* p : ps) {
    if (p->name.find("scale") != std::string::npos) perturb(p->value, 0.5, 1.5);
    if (p->name.find("shift") != std::string::npos) perturb(p->value, -0.5, 0.5);
  }
  head.set_output_affine(3.0, 2.0);
  const Tensor e = normal_tensor({9, d}, rng);
  const Tensor y = head_eval(head, e);

  auto param = [&](const char* name) -> const Tensor& {
    for (ad::Parameter* p : ps) {
      if (p->name == name) return p->value;
    }
    throw std::runtime_error(name);
  };
  const Tensor& g1 = param("head.bn1.scale");
  const Tensor& b1 = param("head.bn1.shift");
  const Tensor& g2 = param("head.bn2.scale");
  const Tensor& b2 = param("head.bn2.shift");
  const Tensor& w1 = head.w1().value;
  const Tensor& w2 = head.w2().value;
  for (std::size_t n = 0; n < 9; ++n) {
    std::vector<double> h(d + 1, 1.0);
    for (std::size_t k = 0; k < d; ++k) {
      h[k] = g1[k] * (e.at(n, k) - head.bn1_stats().mean[k]) / std::sqrt(head.bn1_stats().var[k] + 1e-5) + b1[k];
    }
    std::vector<double> a(d + 1, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
      double z = 0.0;
      for (std::size_t k = 0; k <= d; ++k) z += w1.at(j, k) * h[k];
      z = g2[j] * (z - head.bn2_stats().mean[j]) / std::sqrt(head.bn2_stats().var[j] + 1e-5) + b2[j];
      a[j] = gelu_ref(z);
    }
    double out = 0.0;
    for (std::size_t j = 0; j <= d; ++j) out += w2[j] * a[j];
    EXPECT_NEAR(y[n], 3.0 + 2.0 * out, 1e-10);
  }
}

TEST(Head, EvalDeterministicAndTrainNeedsBatch) {
  HeadConfig hc;
  hc.embed_dim = 4;
  RegressionHead head(hc, 3);
  Rng rng(4);
  const Tensor e = normal_tensor({5, 4}, rng);
  EXPECT_EQ(head_eval(head, e), head_eval(head, e));
  Tape tape;
  Rng drop(1);
  EXPECT_THROW(head.forward(tape, tape.constant(normal_tensor({1, 4}, rng)), Mode::kTrain, &drop), UsageError);
  EXPECT_THROW(head.forward(tape, tape.constant(normal_tensor({2, 3}, rng)), Mode::kEval, nullptr), ShapeError);
  EXPECT_THROW(head.forward(tape, tape.constant(e), Mode::kTrain, nullptr), UsageError);
}

TEST(Head, TrainParametersExcludeOutputAffine) {
  HeadConfig hc;
  hc.embed_dim = 4;
  RegressionHead head(hc, 3);
  for (ad::Parameter* p : head.parameters()) EXPECT_NE(p->name, "head.output_affine");
  head.set_output_affine(40.0, 12.0);
  EXPECT_EQ(head.output_offset(), 40.0);
  EXPECT_EQ(head.output_scale(), 12.0);
  bool found = false;
  for (const NamedTensor& t : head.state()) found = found || t.first == "head.output_affine";
  EXPECT_TRUE(found);
}

TEST(Init, DeterministicPerSeed) {
  Model a(small_encoder(), HeadConfig{5, 0.4, HeadKind::kRegression}, 21);
  Model b(small_encoder(), HeadConfig{5, 0.4, HeadKind::kRegression}, 21);
  Model c(small_encoder(), HeadConfig{5, 0.4, HeadKind::kRegression}, 22);
  auto sa = a.state(), sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].first, sb[i].first);
    EXPECT_EQ(*sa[i].second, *sb[i].second);
  }
  EXPECT_EQ(checksum(a.state()), checksum(b.state()));
  EXPECT_NE(checksum(a.state()), checksum(c.state()));
}

TEST(Init, BatchNormScalesAreOnes) {
  Model m(small_encoder(), HeadConfig{5, 0.4, HeadKind::kRegression}, 1);
  std::size_t seen = 0;
  for (const NamedTensor& t : m.state()) {
    if (t.first.find("scale") == std::string::npos || t.first.find("bn") == std::string::npos) continue;
    ++seen;
    for (double v : t.second->data()) EXPECT_EQ(v, 1.0);
  }
  EXPECT_EQ(seen, 4u);
}

TEST(Init, UniformMomentOracle) {
  HeadConfig hc;
  hc.embed_dim = 316;
  RegressionHead head(hc, 9);
  const Tensor& w = head.w1().value;
  ASSERT_GE(w.size(), 100000u);
  const double bound = 1.0 / std::sqrt(317.0);
  double mean = 0.0;
  for (double v : w.data()) {
    EXPECT_LE(std::fabs(v), bound);
    mean += v;
  }
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(w.size()));
  EXPECT_NEAR(sd / (2.0 * bound / std::sqrt(12.0)), 1.0, 0.02);
}

TEST(Encoder, ShapesAndErrors) {
  TinyEncoder enc(small_encoder(), 2);
  Rng rng(3);
  EXPECT_EQ(enc.embed(random_tensor({3, 4, 8, 8, 1}, rng, 0, 1)).shape(), (ad::Shape{3, 5}));
  EXPECT_THROW(enc.embed(random_tensor({3, 4, 8, 6, 1}, rng, 0, 1)), ShapeError);
  EXPECT_THROW(enc.embed(random_tensor({3, 8, 8, 1}, rng, 0, 1)), ShapeError);
  EncoderConfig bad = small_encoder();
  bad.embed_dim = 0;
  EXPECT_THROW(TinyEncoder(bad, 0), ConfigError);
  bad = small_encoder();
  bad.widths = {3, 0};
  EXPECT_THROW(TinyEncoder(bad, 0), ConfigError);
}

TEST(Encoder, ZeroProjectionGivesZeroEmbeddings) {
  TinyEncoder enc(small_encoder(), 2);
  enc.projection().value.fill(0.0);
  Rng rng(3);
  const Tensor e = enc.embed(random_tensor({2, 4, 8, 8, 1}, rng, 0, 1));
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, DeterministicAndEquivariantInEval) {
  TinyEncoder enc(small_encoder(), 2);
  Rng rng(7);
  const Tensor clip = random_tensor({1, 4, 8, 8, 1}, rng, 0, 1);
  Tensor twin({2, 4, 8, 8, 1});
  std::copy(clip.data().begin(), clip.data().end(), twin.data().begin());
  std::copy(clip.data().begin(), clip.data().end(), twin.data().begin() + static_cast<std::ptrdiff_t>(clip.size()));
  const Tensor e = enc.embed(twin);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(e.at(0, k), e.at(1, k));

  const Tensor batch = random_tensor({4, 4, 8, 8, 1}, rng, 0, 1);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  const std::size_t per = 4 * 8 * 8;
  Tensor permuted(batch.shape());
  for (std::size_t i = 0; i < 4; ++i) {
    std::copy_n(batch.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * per), per,
                permuted.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  const Tensor a = enc.embed(batch), b = enc.embed(permuted);
  EXPECT_EQ(a, enc.embed(batch));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(b.at(i, k), a.at(perm[i], k));
  }
}

TEST(Encoder, GradCheckMicroBatch) {
  TinyEncoder enc(small_encoder(), 4);
  Rng rng(8);
  const Tensor clips = random_tensor({2, 4, 8, 8, 1}, rng, 0, 1);
  const Tensor w = random_tensor({2, 5}, rng, 0.5, 1.5);
  std::vector<ad::Parameter*> ps = enc.parameters();
  for (ad::Parameter* p : ps) p->grad = Tensor::zeros_like(p->value);
  auto build = [&](Tape& tape) {
    return ad::sum(ad::mul(enc.forward(tape, tape.constant(clips), Mode::kTrain), tape.constant(w)));
  };
  ad::GradCheckOptions opt;
  opt.max_entries_per_param = 40;
  const ad::GradCheckReport r = ad::grad_check(build, ps, opt);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
  for (const ad::GradCheckEntry& e : r.entries) EXPECT_GT(e.checked, 0u) << e.name;
}

TEST(Checksum, SensitiveToValuesAndNames) {
  Tensor a = Tensor::from({1, 2, 3});
  Tensor b = a;
  EXPECT_EQ(checksum({{"x", &a}}), checksum({{"x", &b}}));
  b[2] = std::nextafter(3.0, 4.0);
  EXPECT_NE(checksum({{"x", &a}}), checksum({{"x", &b}}));
  EXPECT_NE(checksum({{"x", &a}}), checksum({{"y", &a}}));
}

}  // namespace
}  // namespace coreecho::model
