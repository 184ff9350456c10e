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

#include <span>
#include <vector>

#include "coreecho/autodiff.hpp"
#include "coreecho/model.hpp"

namespace coreecho::losses {

// Members of S^{n,m}: every l != anchor whose label distance to the anchor is
// at least the positive's label distance (ties included). Indices are
// zero-based.
struct NegativeSet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> members;
};

NegativeSet negative_set(std::span<const double> labels, std::size_t anchor, std::size_t positive);

// Rank-N-Contrast loss over a batch of 2N embeddings [2N x C_E] with
// similarity exp(-||E_n - E_m|| / temperature). Evaluated in log space.
ad::Var rnc_loss(const ad::Var& embeddings, std::span<const double> labels, double temperature);

// Mean absolute error; subgradient 0 at pred == target.
ad::Var l1_loss(const ad::Var& pred, std::span<const double> target);
ad::Var mse_loss(const ad::Var& pred, std::span<const double> target);
// Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps].
ad::Var bce_loss(const ad::Var& prob, std::span<const double> target, double eps = 1e-7);

struct Stage1Loss {
  ad::Var total;
  ad::Var rnc;
  ad::Var l1;
  ad::Var predictions;
};

// L = L_RnC(E) + L1(head(SG(E)), y). RnC gradients reach only the encoder
// and L1 gradients only the head.
Stage1Loss stage1_loss(const ad::Var& embeddings, std::span<const double> labels,
                       model::RegressionHead& head, double temperature, ad::Mode head_mode,
                       Rng* dropout_rng);

struct Stage2Loss {
  ad::Var total;
  ad::Var predictions;
};

// L1 over single-clip predictions of a frozen encoder. The encoder runs in
// eval mode; throws ConfigError if any encoder parameter is trainable.
Stage2Loss stage2_loss(ad::Tape& tape, const ad::Tensor& clips, std::span<const double> labels,
                       model::TinyEncoder& encoder, model::RegressionHead& head,
                       ad::Mode head_mode, Rng* dropout_rng);

}  // namespace coreecho::losses
