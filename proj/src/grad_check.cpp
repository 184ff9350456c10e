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

#include "coreecho/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coreecho/errors.hpp"

namespace coreecho::ad {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>* replay,
                std::vector<Tensor>* record) {
  Tape tape(Precision::kF64, /*grad_enabled=*/false);
  tape.replay_stop_gradients(replay);
  tape.record_stop_gradients(record);
  return build(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw UsageError("grad_check: step must be positive");

  std::vector<Tensor> saved_grads;
  saved_grads.reserve(params.size());
  for (Parameter* p : params) {
    saved_grads.push_back(p->grad);
    p->grad = Tensor::zeros_like(p->value);
  }

  std::vector<Tensor> frozen;
  double base = 0.0;
  {
    Tape tape;
    tape.record_stop_gradients(&frozen);
    Var loss = build(tape);
    base = loss.value().item();
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  {
    std::vector<Tensor> again;
    const double second = evaluate(build, nullptr, &again);
    if (second != base || again != frozen) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved_grads[i];
      throw CheckFailure("grad_check: loss builder is not deterministic (" +
                         std::to_string(base) + " vs " + std::to_string(second) + ")");
    }
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  Rng sampler(options.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    if (!p.trainable) continue;
    GradCheckEntry entry;
    entry.name = p.name;

    std::vector<std::size_t> indices(p.value.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_param != 0 && indices.size() > options.max_entries_per_param) {
      std::shuffle(indices.begin(), indices.end(), sampler.engine());
      indices.resize(options.max_entries_per_param);
      std::sort(indices.begin(), indices.end());
    }

    for (std::size_t k : indices) {
      const double original = p.value[k];
      p.value[k] = original + options.step;
      const double plus = evaluate(build, &frozen, nullptr);
      p.value[k] = original - options.step;
      const double minus = evaluate(build, &frozen, nullptr);
      p.value[k] = original;

      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi][k];
      const double abs_err = std::fabs(a - numeric);
      const double denom = std::max({std::fabs(a), std::fabs(numeric), options.denominator_floor});
      const double rel = abs_err / denom;
      ++entry.checked;
      if (rel > options.tolerance) ++entry.failures;
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      if (rel > entry.max_rel_error || entry.checked == 1) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel);
        if (rel >= entry.max_rel_error) {
          entry.worst_index = k;
          entry.analytic_at_worst = a;
          entry.numeric_at_worst = numeric;
        }
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved_grads[i];
  return report;
}

}  // namespace coreecho::ad
