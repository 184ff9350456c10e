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

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "coreecho/errors.hpp"
#include "coreecho/losses.hpp"
#include "support/suites.hpp"

namespace coreecho::losses {
namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using testing::naive_rnc;
using testing::normal_tensor;

double rnc_value(const Tensor& e, const std::vector<double>& y, double tau) {
  Tape tape(ad::Precision::kF64, false);
  return rnc_loss(tape.constant(e), y, tau).value().item();
}

TEST(NegativeSet, HandEnumeration) {
  const std::vector<double> y = {10, 10, 50, 50};
  // 1-based {3,4} and {2,3,4} from the definition, here zero-based
  EXPECT_EQ(negative_set(y, 0, 2).members, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(negative_set(y, 0, 1).members, (std::vector<std::size_t>{1, 2, 3}));
  const std::vector<double> two = {7, 7};
  EXPECT_EQ(negative_set(two, 0, 1).members, (std::vector<std::size_t>{1}));
  EXPECT_THROW(negative_set(y, 1, 1), UsageError);
  EXPECT_THROW(negative_set(y, 0, 4), UsageError);
}

TEST(NegativeSet, PositiveAlwaysMember) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> y(8);
    for (double& v : y) v = static_cast<double>(rng.index(5));
    const std::size_t n = rng.index(8);
    std::size_t m = rng.index(8);
    if (m == n) m = (m + 1) % 8;
    const NegativeSet s = negative_set(y, n, m);
    EXPECT_NE(std::find(s.members.begin(), s.members.end(), m), s.members.end());
    for (std::size_t l = 0; l < 8; ++l) {
      const bool in = std::find(s.members.begin(), s.members.end(), l) != s.members.end();
      EXPECT_EQ(in, l != n && std::fabs(y[n] - y[l]) >= std::fabs(y[n] - y[m]));
    }
  }
}

TEST(RncLoss, ClosedForms) {
  Rng rng(1);
  EXPECT_LE(std::fabs(rnc_value(normal_tensor({2, 5}, rng), {42, 42}, 1.0)), 1e-12);
  const double expected = (std::log(3.0) + 2.0 * std::log(2.0)) / 3.0;
  EXPECT_NEAR(rnc_value(Tensor({4, 3}, 0.25), {0, 0, 1, 1}, 1.0), expected, 1e-12);
  EXPECT_NEAR(expected, 0.82830, 5e-6);
}

TEST(RncLoss, MatchesNaiveOracle) {
  Rng rng(8);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 2 * (2 + rng.index(7));
    const std::size_t d = 2 + rng.index(15);
    const double tau = std::vector<double>{0.1, 1.0, 10.0}[rng.index(3)];
    Tensor e = normal_tensor({n, d}, rng);
    std::vector<double> y;
    for (std::size_t i = 0; i < n / 2; ++i) {
      const double v = std::round(rng.uniform(0, 100));
      y.push_back(v);
      y.push_back(v);
    }
    EXPECT_NEAR(rnc_value(e, y, tau), naive_rnc(e, y, tau), 1e-9) << "n=" << n << " d=" << d << " tau=" << tau;
  }
  Tensor e = normal_tensor({8, 4}, rng);
  const std::vector<double> y = {12, 12, 40, 40, 33, 33, 71, 71};
  EXPECT_NEAR(rnc_value(e, y, 1.0), naive_rnc(e, y, 1.0), 1e-9);
}

TEST(RncLoss, Invariances) {
  Rng rng(9);
  Tensor e = normal_tensor({10, 6}, rng);
  std::vector<double> y;
  for (int i = 0; i < 10; ++i) y.push_back(rng.uniform(0, 100));
  const double base = rnc_value(e, y, 0.7);

  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  Tensor ep({10, 6});
  std::vector<double> yp(10);
  for (std::size_t i = 0; i < 10; ++i) {
    yp[i] = y[perm[i]];
    for (std::size_t k = 0; k < 6; ++k) ep.at(i, k) = e.at(perm[i], k);
  }
  EXPECT_NEAR(rnc_value(ep, yp, 0.7), base, 1e-12);

  Tensor shifted = e;
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t k = 0; k < 6; ++k) shifted.at(i, k) += 0.125 * static_cast<double>(k + 1);
  }
  EXPECT_NEAR(rnc_value(shifted, y, 0.7), base, 1e-12);

  Tensor scaled = e;
  for (double& v : scaled.data()) v /= 0.7;
  EXPECT_NEAR(rnc_value(scaled, y, 1.0), base, 1e-10);
}

TEST(RncLoss, FiniteForExtremeDistances) {
  Tensor e({4, 1}, {0.0, 1e6, -1e6, 5e5});
  const double v = rnc_value(e, {1, 2, 3, 4}, 1e-3);
  EXPECT_TRUE(std::isfinite(v));
}

TEST(RncLoss, Errors) {
  Tensor e({4, 2}, 0.0);
  EXPECT_THROW(rnc_value(e, {1, 1, 2, 2}, 0.0), DomainError);
  EXPECT_THROW(rnc_value(e, {1, 1, 2, 2}, -1.0), DomainError);
  EXPECT_THROW(rnc_value(Tensor({1, 2}, 0.0), {1}, 1.0), ShapeError);
  EXPECT_THROW(rnc_value(e, {1, 1, 2}, 1.0), ShapeError);
}

TEST(PointLosses, Values) {
  Tape tape;
  EXPECT_EQ(l1_loss(tape.constant(Tensor::from({1, 3})), std::vector<double>{1, 3}).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(l1_loss(tape.constant(Tensor::from({1, 3})), std::vector<double>{2, 5}).value().item(), 1.5);
  EXPECT_EQ(mse_loss(tape.constant(Tensor::from({1, 3})), std::vector<double>{1, 3}).value().item(), 0.0);
  EXPECT_NEAR(bce_loss(tape.constant(Tensor::from({0.5})), std::vector<double>{1}).value().item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(tape.constant(Tensor::from({0.5})), std::vector<double>{0}).value().item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(tape.constant(Tensor::from({0.9})), std::vector<double>{1}).value().item(), 0.10536051565782628,
              1e-12);
  EXPECT_TRUE(std::isfinite(bce_loss(tape.constant(Tensor::from({0.0})), std::vector<double>{1}).value().item()));
  EXPECT_THROW(bce_loss(tape.constant(Tensor::from({0.5})), std::vector<double>{0.5}), DomainError);
  EXPECT_THROW(l1_loss(tape.constant(Tensor::from({1, 2})), std::vector<double>{1}), ShapeError);
}

TEST(PointLosses, L1GradientIsSignOverLength) {
  Tape tape;
  Var p = tape.leaf(Tensor::from({1.0, 5.0, -2.0, 3.0}));
  tape.backward(l1_loss(p, std::vector<double>{2.0, 4.0, -2.0, 0.0}));
  EXPECT_EQ(tape.grad(p), Tensor::from({-0.25, 0.25, 0.0, 0.25}));
}

struct Fixture {
  model::EncoderConfig ec;
  model::HeadConfig hc;
  Fixture() {
    ec.frames = 4;
    ec.height = 8;
    ec.width = 8;
    ec.channels = 1;
    ec.widths = {3, 4};
    ec.embed_dim = 6;
    hc.embed_dim = 6;
  }
};

TEST(Stage1Loss, TotalIsSumOfParts) {
  Fixture f;
  model::RegressionHead head(f.hc, 1);
  Rng rng(4);
  Tensor e = normal_tensor({6, 6}, rng);
  const std::vector<double> y = {20, 20, 45, 45, 70, 70};
  Tape tape;
  Rng d1(3);
  Stage1Loss l = stage1_loss(tape.constant(e), y, head, 1.0, ad::Mode::kTrain, &d1);
  Tape ref;
  Rng d2(3);
  const double r = rnc_loss(ref.constant(e), y, 1.0).value().item();
  const double a = l1_loss(head.forward(ref, ref.constant(e), ad::Mode::kTrain, &d2), y).value().item();
  EXPECT_NEAR(l.total.value().item(), r + a, 1e-12);
  EXPECT_EQ(l.predictions.shape(), (ad::Shape{6}));
}

TEST(Stage1Loss, GradientPartition) {
  Fixture f;
  model::Model m(f.ec, f.hc, 5);
  Rng rng(6);
  Tensor clips = testing::random_tensor({6, 4, 8, 8, 1}, rng, 0.0, 1.0);
  const std::vector<double> y = {20, 20, 45, 45, 70, 70};
  std::vector<ad::Parameter*> enc = m.encoder.parameters(), head = m.head.parameters();
  auto zero = [&] {
    for (auto* p : enc) p->grad = Tensor::zeros_like(p->value);
    for (auto* p : head) p->grad = Tensor::zeros_like(p->value);
  };
  auto norm = [](const std::vector<ad::Parameter*>& ps) {
    double s = 0.0;
    for (auto* p : ps) {
      for (double g : p->grad.data()) s += std::fabs(g);
    }
    return s;
  };
  for (int branch = 0; branch < 2; ++branch) {
    zero();
    Tape tape;
    Rng drop(1);
    Var e = m.encoder.forward(tape, tape.constant(clips), ad::Mode::kTrain);
    Stage1Loss l = stage1_loss(e, y, m.head, 1.0, ad::Mode::kTrain, &drop);
    tape.backward(branch == 0 ? l.l1 : l.rnc);
    if (branch == 0) {
      EXPECT_EQ(norm(enc), 0.0);
      EXPECT_GT(norm(head), 0.0);
    } else {
      EXPECT_EQ(norm(head), 0.0);
      EXPECT_GT(norm(enc), 0.0);
    }
  }
}

TEST(Stage2Loss, RequiresFrozenEncoderAndMatchesDecomposition) {
  Fixture f;
  model::Model m(f.ec, f.hc, 7);
  Rng rng(2);
  Tensor clips = testing::random_tensor({4, 4, 8, 8, 1}, rng, 0.0, 1.0);
  const std::vector<double> y = {10, 30, 50, 70};
  Tape t0;
  EXPECT_THROW(stage2_loss(t0, clips, y, m.encoder, m.head, ad::Mode::kEval, nullptr), ConfigError);
  m.encoder.set_trainable(false);
  const Tensor e = m.encoder.embed(clips);
  Tape t1;
  Stage2Loss l = stage2_loss(t1, clips, y, m.encoder, m.head, ad::Mode::kEval, nullptr);
  Tape t2;
  const double ref = l1_loss(m.head.forward(t2, t2.constant(e), ad::Mode::kEval, nullptr), y).value().item();
  EXPECT_NEAR(l.total.value().item(), ref, 1e-12);

  const std::uint64_t before = model::checksum(m.encoder.state());
  for (auto* p : m.head.parameters()) p->grad = Tensor::zeros_like(p->value);
  t1.backward(l.total);
  for (auto* p : m.encoder.parameters()) {
    for (double g : p->grad.data()) EXPECT_EQ(g, 0.0);
  }
  EXPECT_EQ(model::checksum(m.encoder.state()), before);
}

}  // namespace
}  // namespace coreecho::losses
