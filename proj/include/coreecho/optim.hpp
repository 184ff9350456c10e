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
#include <memory>
#include <string>
#include <vector>

#include "coreecho/autodiff.hpp"

namespace coreecho::train {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// One decoupled-weight-decay Adam update of a single tensor. `step` is the
// 1-based step count after this update.
void adamw_step(ad::Tensor& param, const ad::Tensor& grad, ad::Tensor& m, ad::Tensor& v,
                std::uint64_t step, double lr, const AdamWOptions& opt);

// lr = base * gamma^floor(epoch / step_size)
double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma);

// Owns per-parameter state for a fixed list of parameters. Frozen parameters
// are skipped and never change.
class Optimizer {
 public:
  explicit Optimizer(std::vector<ad::Parameter*> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  virtual void step(double lr) = 0;
  virtual std::string kind() const = 0;
  // Named state tensors, for checkpointing. Stable order.
  virtual std::vector<std::pair<std::string, ad::Tensor*>> state() = 0;

  void zero_grad();
  std::uint64_t steps() const noexcept { return steps_; }
  void set_steps(std::uint64_t s) noexcept { steps_ = s; }
  const std::vector<ad::Parameter*>& parameters() const noexcept { return params_; }

 protected:
  std::vector<ad::Parameter*> params_;
  std::uint64_t steps_ = 0;
};

class AdamW final : public Optimizer {
 public:
  AdamW(std::vector<ad::Parameter*> params, AdamWOptions options);

  void step(double lr) override;
  std::string kind() const override { return "adamw"; }
  std::vector<std::pair<std::string, ad::Tensor*>> state() override;

 private:
  AdamWOptions options_;
  std::vector<ad::Tensor> m_, v_;
};

// Heavy-ball SGD with L2 weight decay folded into the gradient.
class SgdMomentum final : public Optimizer {
 public:
  SgdMomentum(std::vector<ad::Parameter*> params, double momentum, double weight_decay);

  void step(double lr) override;
  std::string kind() const override { return "sgd-momentum"; }
  std::vector<std::pair<std::string, ad::Tensor*>> state() override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<ad::Tensor> velocity_;
};

}  // namespace coreecho::train
