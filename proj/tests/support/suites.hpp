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

// Reference implementations and the gradient-check suite shared by the unit
// tests and the acceptance runner.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coreecho/autodiff.hpp"
#include "coreecho/grad_check.hpp"
#include "coreecho/losses.hpp"
#include "coreecho/model.hpp"
#include "coreecho/rng.hpp"

namespace coreecho::testing {

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline ad::Tensor normal_tensor(ad::Shape shape, Rng& rng) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Straight triple loop over the definition: no log-space evaluation.
inline double naive_rnc(const ad::Tensor& e, const std::vector<double>& y, double tau) {
  const std::size_t n = e.dim(0), d = e.dim(1);
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (e.at(i, k) - e.at(j, k)) * (e.at(i, k) - e.at(j, k));
    return std::exp(-std::sqrt(s) / tau);
  };
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t m = 0; m < n; ++m) {
      if (m == a) continue;
      double den = 0.0;
      for (std::size_t l = 0; l < n; ++l) {
        if (l != a && std::fabs(y[a] - y[l]) >= std::fabs(y[a] - y[m])) den += sim(a, l);
      }
      total += -std::log(sim(a, m) / den);
    }
  }
  return total / static_cast<double>(n * (n - 1));
}

struct GradCase {
  std::string name;
  std::function<ad::GradCheckReport(const ad::GradCheckOptions&)> run;
};

namespace detail {

using OpFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Scalarizes an op's output as sum(out * R) with fixed random R so every
// output entry contributes a distinct weight.
inline ad::GradCheckReport check_op(std::vector<ad::Parameter> inputs, OpFn op, const ad::GradCheckOptions& opt) {
  auto shared = std::make_shared<std::vector<ad::Parameter>>(std::move(inputs));
  std::vector<ad::Parameter*> ptrs;
  for (ad::Parameter& p : *shared) {
    p.grad = ad::Tensor::zeros_like(p.value);
    ptrs.push_back(&p);
  }
  auto build = [shared, op](ad::Tape& tape) {
    std::vector<ad::Var> vars;
    for (ad::Parameter& p : *shared) vars.push_back(tape.param(p));
    ad::Var out = op(tape, vars);
    Rng rng(4242);
    ad::Tensor w = random_tensor(out.shape(), rng, 0.5, 1.5);
    return ad::sum(ad::mul(out, tape.constant(std::move(w))));
  };
  return ad::grad_check(build, ptrs, opt);
}

inline ad::Parameter input(const char* name, ad::Tensor v) { return ad::Parameter(name, std::move(v)); }

// Uniform values kept at least `gap` away from every point in `kinks`.
inline ad::Tensor away_from(ad::Shape shape, Rng& rng, double lo, double hi, std::vector<double> kinks, double gap) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) {
    for (;;) {
      v = rng.uniform(lo, hi);
      bool ok = true;
      for (double k : kinks) ok = ok && std::fabs(v - k) > gap;
      if (ok) break;
    }
  }
  return t;
}

}  // namespace detail

// Every autodiff primitive, the head formula and the full stage-1 loss.
inline std::vector<GradCase> gradient_suite() {
  using namespace ad;
  using detail::check_op;
  using detail::input;
  std::vector<GradCase> cases;
  auto unary = [&](std::string name, std::function<Var(const Var&)> f, double lo = -1.0, double hi = 1.0,
                   Shape shape = {3, 4}) {
    cases.push_back({name, [=](const GradCheckOptions& o) {
                       Rng r(11);
                       return check_op({input("x", random_tensor(shape, r, lo, hi))},
                                       [f](Tape&, std::vector<Var>& v) { return f(v[0]); }, o);
                     }});
  };
  auto binary = [&](std::string name, std::function<Var(const Var&, const Var&)> f, Shape sa = {3, 4},
                    Shape sb = {3, 4}) {
    cases.push_back({name, [=](const GradCheckOptions& o) {
                       Rng r(12);
                       return check_op({input("a", random_tensor(sa, r)), input("b", random_tensor(sb, r))},
                                       [f](Tape&, std::vector<Var>& v) { return f(v[0], v[1]); }, o);
                     }});
  };

  binary("add", [](const Var& a, const Var& b) { return add(a, b); });
  binary("sub", [](const Var& a, const Var& b) { return sub(a, b); });
  binary("mul", [](const Var& a, const Var& b) { return mul(a, b); });
  binary("matmul", [](const Var& a, const Var& b) { return matmul(a, b); }, {3, 4}, {4, 2});
  binary("add_rowwise", [](const Var& a, const Var& b) { return add_rowwise(a, b); }, {3, 4}, {4});
  unary("scale", [](const Var& x) { return scale(x, -2.5); });
  unary("add_scalar", [](const Var& x) { return add_scalar(x, 0.75); });
  unary("exp", [](const Var& x) { return exp(x); });
  unary("log", [](const Var& x) { return log(x); }, 0.5, 2.0);
  unary("sigmoid", [](const Var& x) { return sigmoid(x); }, -3.0, 3.0);
  unary("gelu", [](const Var& x) { return gelu(x); }, -3.0, 3.0);
  unary("sum", [](const Var& x) { return sum(x); });
  unary("mean", [](const Var& x) { return mean(x); });
  unary("transpose", [](const Var& x) { return transpose(x); });
  unary("logsumexp_axis0", [](const Var& x) { return logsumexp(x, 0); }, -3.0, 3.0);
  unary("logsumexp_axis1", [](const Var& x) { return logsumexp(x, 1); }, -3.0, 3.0);
  unary("append_ones", [](const Var& x) { return append_ones(x); });
  unary("reshape", [](const Var& x) { return reshape(x, {2, 6}); });
  unary("mean_axis1", [](const Var& x) { return mean_axis1(x); }, -1.0, 1.0, {2, 3, 4});
  unary("stop_gradient_mixed", [](const Var& x) { return mul(stop_gradient(x), x); });
  unary("gelu_chain", [](const Var& x) { return gelu(scale(gelu(x), 1.7)); }, -2.0, 2.0);
  unary("shared_subexpression", [](const Var& x) {
    Var e = exp(x);
    return add(mul(e, x), e);
  });

  cases.push_back({"abs", [](const GradCheckOptions& o) {
                     Rng r(13);
                     return check_op({input("x", detail::away_from({3, 4}, r, -1.0, 1.0, {0.0}, 0.1))},
                                     [](Tape&, std::vector<Var>& v) { return abs(v[0]); }, o);
                   }});
  cases.push_back({"clamp", [](const GradCheckOptions& o) {
                     Rng r(14);
                     return check_op({input("x", detail::away_from({3, 4}, r, -1.0, 1.0, {-0.5, 0.5}, 0.05))},
                                     [](Tape&, std::vector<Var>& v) { return clamp(v[0], -0.5, 0.5); }, o);
                   }});
  cases.push_back({"masked_logsumexp", [](const GradCheckOptions& o) {
                     Rng r(15);
                     return check_op({input("x", random_tensor({3, 4}, r, -2.0, 2.0))},
                                     [](Tape&, std::vector<Var>& v) {
                                       return masked_logsumexp(v[0], {1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 1});
                                     },
                                     o);
                   }});
  cases.push_back({"gather", [](const GradCheckOptions& o) {
                     Rng r(16);
                     return check_op({input("x", random_tensor({3, 4}, r))},
                                     [](Tape&, std::vector<Var>& v) {
                                       return gather(v[0], {0, 2, 2, 1, 0}, {3, 1, 1, 0, 3});
                                     },
                                     o);
                   }});
  cases.push_back({"pairwise_l2", [](const GradCheckOptions& o) {
                     Rng r(17);
                     return check_op({input("e", random_tensor({5, 3}, r))},
                                     [](Tape&, std::vector<Var>& v) { return pairwise_l2(v[0]); }, o);
                   }});
  cases.push_back({"batch_norm_train", [](const GradCheckOptions& o) {
                     Rng r(18);
                     return check_op({input("x", random_tensor({5, 3}, r)), input("scale", random_tensor({3}, r, 0.5, 1.5)),
                                      input("shift", random_tensor({3}, r))},
                                     [](Tape&, std::vector<Var>& v) {
                                       BatchNormStats stats(3);
                                       return batch_norm(v[0], v[1], v[2], &stats, Mode::kTrain);
                                     },
                                     o);
                   }});
  cases.push_back({"batch_norm_eval", [](const GradCheckOptions& o) {
                     Rng r(19);
                     return check_op({input("x", random_tensor({4, 3}, r)), input("scale", random_tensor({3}, r, 0.5, 1.5)),
                                      input("shift", random_tensor({3}, r))},
                                     [](Tape&, std::vector<Var>& v) {
                                       BatchNormStats stats(3);
                                       stats.mean = Tensor::from({0.1, -0.2, 0.3});
                                       stats.var = Tensor::from({0.5, 1.5, 2.0});
                                       return batch_norm(v[0], v[1], v[2], &stats, Mode::kEval);
                                     },
                                     o);
                   }});
  cases.push_back({"dropout", [](const GradCheckOptions& o) {
                     Rng r(20);
                     return check_op({input("x", random_tensor({4, 5}, r))},
                                     [](Tape&, std::vector<Var>& v) {
                                       Rng mask(77);
                                       return dropout(v[0], 0.4, mask, Mode::kTrain);
                                     },
                                     o);
                   }});
  cases.push_back({"conv3d", [](const GradCheckOptions& o) {
                     Rng r(21);
                     return check_op({input("x", random_tensor({2, 4, 5, 5, 2}, r)),
                                      input("w", random_tensor({3, 3, 3, 2, 3}, r, -0.5, 0.5)),
                                      input("b", random_tensor({3}, r))},
                                     [](Tape&, std::vector<Var>& v) {
                                       Conv3dOptions c;
                                       c.stride = {1, 2, 2};
                                       c.padding = {1, 1, 1};
                                       return conv3d(v[0], v[1], v[2], c);
                                     },
                                     o);
                   }});
  cases.push_back({"rnc_loss", [](const GradCheckOptions& o) {
                     Rng r(22);
                     std::vector<double> y = {10, 10, 35, 35, 60, 60, 20, 20};
                     return check_op({input("e", random_tensor({8, 4}, r))},
                                     [y](Tape&, std::vector<Var>& v) { return losses::rnc_loss(v[0], y, 1.0); }, o);
                   }});
  cases.push_back({"l1_mse_bce", [](const GradCheckOptions& o) {
                     Rng r(23);
                     return check_op({input("p", random_tensor({6}, r, 0.05, 0.95))},
                                     [](Tape&, std::vector<Var>& v) {
                                       const std::vector<double> t = {0, 1, 1, 0, 1, 0};
                                       const std::vector<double> u = {2.0, -2.0, 2.0, -2.0, 2.0, -2.0};
                                       return add(add(losses::l1_loss(v[0], u), losses::mse_loss(v[0], u)),
                                                  losses::bce_loss(v[0], t));
                                     },
                                     o);
                   }});

  auto head_case = [&](std::string name, model::HeadKind kind) {
    cases.push_back({name, [kind](const GradCheckOptions& o) {
                       model::HeadConfig hc;
                       hc.embed_dim = 5;
                       hc.kind = kind;
                       auto head = std::make_shared<model::RegressionHead>(hc, 3);
                       head->set_output_affine(40.0, 15.0);
                       Rng r(24);
                       auto e = std::make_shared<Parameter>("embeddings", random_tensor({6, 5}, r));
                       std::vector<Parameter*> params = head->parameters();
                       params.push_back(e.get());
                       for (Parameter* p : params) p->grad = Tensor::zeros_like(p->value);
                       auto build = [head, e](Tape& tape) {
                         Rng drop(5);
                         Var y = head->forward(tape, tape.param(*e), Mode::kTrain, &drop);
                         Rng wr(6);
                         return sum(mul(y, tape.constant(random_tensor(y.shape(), wr, 0.5, 1.5))));
                       };
                       return grad_check(build, params, o);
                     }});
  };
  head_case("head_regression", model::HeadKind::kRegression);
  head_case("head_classification", model::HeadKind::kClassification);

  cases.push_back({"stage1_loss", [](const GradCheckOptions& o) {
                     model::EncoderConfig ec;
                     ec.frames = 4;
                     ec.height = 8;
                     ec.width = 8;
                     ec.channels = 2;
                     ec.widths = {3, 4};
                     ec.embed_dim = 6;
                     ec.temporal_stride = 2;
                     model::HeadConfig hc;
                     hc.embed_dim = 6;
                     auto m = std::make_shared<model::Model>(ec, hc, 9);
                     m->head.set_output_affine(45.0, 20.0);
                     Rng r(25);
                     auto clips = std::make_shared<Tensor>(random_tensor({6, 4, 8, 8, 2}, r, 0.0, 1.0));
                     std::vector<double> y = {30, 30, 55, 55, 70, 70};
                     std::vector<Parameter*> params = m->encoder.parameters();
                     for (Parameter* p : m->head.parameters()) params.push_back(p);
                     for (Parameter* p : params) p->grad = Tensor::zeros_like(p->value);
                     auto build = [m, clips, y](Tape& tape) {
                       Rng drop(8);
                       Var e = m->encoder.forward(tape, tape.constant(*clips), Mode::kTrain);
                       return losses::stage1_loss(e, y, m->head, 1.0, Mode::kTrain, &drop).total;
                     };
                     GradCheckOptions limited = o;
                     if (limited.max_entries_per_param == 0) limited.max_entries_per_param = 40;
                     return grad_check(build, params, limited);
                   }});
  return cases;
}

}  // namespace coreecho::testing
