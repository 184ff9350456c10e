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
#include <span>
#include <string>
#include <vector>

#include "coreecho/autodiff.hpp"

namespace coreecho::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Relative error is |a - n| / max(|a|, |n|, denominator_floor), so entries
  // whose true gradient is ~0 are judged on absolute error.
  double denominator_floor = 1e-3;
  // 0 checks every entry; otherwise a seeded random subset per parameter.
  std::size_t max_entries_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

// Builds the scalar loss on a fresh tape. Must be deterministic: dropout
// masks and other random draws have to come from a freshly seeded Rng on
// every call.
using LossBuilder = std::function<Var(Tape&)>;

// Compares backward() against central differences for every trainable
// parameter in `params`. Stop-gradient outputs are held at their unperturbed
// values during the perturbed evaluations, matching their constant semantics.
// Parameter gradients are restored to their prior contents afterwards.
GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace coreecho::ad
