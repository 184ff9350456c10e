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

#include "coreecho/losses.hpp"

#include <cmath>
#include <string>

#include "coreecho/errors.hpp"

namespace coreecho::losses {

using ad::Tape;
using ad::Tensor;
using ad::Var;

NegativeSet negative_set(std::span<const double> labels, std::size_t anchor,
                         std::size_t positive) {
  if (anchor >= labels.size() || positive >= labels.size()) {
    throw UsageError("negative_set: index out of range");
  }
  if (anchor == positive) throw UsageError("negative_set: anchor and positive must differ");
  NegativeSet s{anchor, positive, {}};
  const double radius = std::fabs(labels[anchor] - labels[positive]);
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (l != anchor && std::fabs(labels[anchor] - labels[l]) >= radius) s.members.push_back(l);
  }
  return s;
}

Var rnc_loss(const Var& embeddings, std::span<const double> labels, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("rnc_loss: temperature must be positive");
  if (embeddings.shape().size() != 2) throw ShapeError("rnc_loss: embeddings must be 2-D");
  const std::size_t n = embeddings.shape()[0];
  if (n < 2) throw ShapeError("rnc_loss: need at least 2 embeddings");
  if (labels.size() != n) {
    throw ShapeError("rnc_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " embeddings");
  }
  for (double y : labels) {
    if (!std::isfinite(y)) throw DomainError("rnc_loss: non-finite label");
  }

  // logits[i][j] = -||E_i - E_j|| / tau
  Var logits = ad::scale(ad::pairwise_l2(embeddings), -1.0 / temperature);

  const std::size_t pairs = n * (n - 1);
  std::vector<std::size_t> anchor_idx, positive_idx;
  std::vector<std::size_t> row_idx, col_idx;
  std::vector<std::uint8_t> mask;
  anchor_idx.reserve(pairs);
  positive_idx.reserve(pairs);
  row_idx.reserve(pairs * n);
  col_idx.reserve(pairs * n);
  mask.reserve(pairs * n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a) continue;
      anchor_idx.push_back(a);
      positive_idx.push_back(p);
      const double radius = std::fabs(labels[a] - labels[p]);
      for (std::size_t l = 0; l < n; ++l) {
        row_idx.push_back(a);
        col_idx.push_back(l);
        mask.push_back(l != a && std::fabs(labels[a] - labels[l]) >= radius ? 1 : 0);
      }
    }
  }

  Var positive_logit = ad::gather(logits, std::move(anchor_idx), std::move(positive_idx));
  Var rows = ad::reshape(ad::gather(logits, std::move(row_idx), std::move(col_idx)), {pairs, n});
  Var log_denominator = ad::masked_logsumexp(rows, std::move(mask));
  // -log(s_nm / sum_l s_nl) = logsumexp_l(logit_nl) - logit_nm
  return ad::mean(ad::sub(log_denominator, positive_logit));
}

namespace {

Var target_like(const Var& pred, std::span<const double> target, const char* op) {
  if (pred.value().size() != target.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(pred.value().size()) +
                     " predictions vs " + std::to_string(target.size()) + " targets");
  }
  return pred.tape().constant(Tensor(pred.shape(), std::vector<double>(target.begin(), target.end())));
}

}  // namespace

Var l1_loss(const Var& pred, std::span<const double> target) {
  Var t = target_like(pred, target, "l1_loss");
  return ad::mean(ad::abs(ad::sub(pred, t)));
}

Var mse_loss(const Var& pred, std::span<const double> target) {
  Var t = target_like(pred, target, "mse_loss");
  Var diff = ad::sub(pred, t);
  return ad::mean(ad::mul(diff, diff));
}

Var bce_loss(const Var& prob, std::span<const double> target, double eps) {
  for (double y : target) {
    if (y != 0.0 && y != 1.0) throw DomainError("bce_loss: targets must be 0 or 1");
  }
  Var t = target_like(prob, target, "bce_loss");
  Tape& tape = prob.tape();
  Var p = ad::clamp(prob, eps, 1.0 - eps);
  Var one_minus_t = tape.constant([&] {
    Tensor v = t.value();
    for (double& x : v.data()) x = 1.0 - x;
    return v;
  }());
  Var log_p = ad::log(p);
  Var log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  Var ll = ad::add(ad::mul(t, log_p), ad::mul(one_minus_t, log_q));
  return ad::scale(ad::mean(ll), -1.0);
}

Stage1Loss stage1_loss(const Var& embeddings, std::span<const double> labels,
                       model::RegressionHead& head, double temperature, ad::Mode head_mode,
                       Rng* dropout_rng) {
  Stage1Loss out;
  out.rnc = rnc_loss(embeddings, labels, temperature);
  out.predictions =
      head.forward(embeddings.tape(), ad::stop_gradient(embeddings), head_mode, dropout_rng);
  out.l1 = l1_loss(out.predictions, labels);
  out.total = ad::add(out.rnc, out.l1);
  return out;
}

Stage2Loss stage2_loss(Tape& tape, const Tensor& clips, std::span<const double> labels,
                       model::TinyEncoder& encoder, model::RegressionHead& head,
                       ad::Mode head_mode, Rng* dropout_rng) {
  if (!encoder.frozen()) {
    throw ConfigError("stage2_loss: encoder parameters must be frozen");
  }
  Var e = encoder.forward(tape, tape.constant(clips), ad::Mode::kEval);
  Stage2Loss out;
  out.predictions = head.forward(tape, ad::stop_gradient(e), head_mode, dropout_rng);
  out.total = l1_loss(out.predictions, labels);
  return out;
}

}  // namespace coreecho::losses
