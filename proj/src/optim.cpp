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

#include "coreecho/optim.hpp"

#include <cmath>

#include "coreecho/errors.hpp"

namespace coreecho::train {

void adamw_step(ad::Tensor& param, const ad::Tensor& grad, ad::Tensor& m, ad::Tensor& v,
                std::uint64_t step, double lr, const AdamWOptions& opt) {
  if (!(opt.eps > 0.0)) throw ConfigError("adamw: eps must be positive");
  if (step == 0) throw UsageError("adamw: step count is 1-based");
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape()) {
    throw ShapeError("adamw: parameter, gradient and moment shapes differ");
  }
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * opt.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    param[i] *= decay;
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

double step_lr(double base_lr, std::size_t epoch, std::size_t step_size, double gamma) {
  if (step_size < 1) throw ConfigError("step_lr: step_size must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("step_lr: gamma must be in (0, 1]");
  return base_lr * std::pow(gamma, static_cast<double>(epoch / step_size));
}

void Optimizer::zero_grad() {
  for (ad::Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape()) p->grad = ad::Tensor::zeros_like(p->value);
    p->zero_grad();
  }
}

AdamW::AdamW(std::vector<ad::Parameter*> params, AdamWOptions options)
    : Optimizer(std::move(params)), options_(options) {
  if (!(options_.eps > 0.0)) throw ConfigError("adamw: eps must be positive");
  for (ad::Parameter* p : params_) {
    m_.push_back(ad::Tensor::zeros_like(p->value));
    v_.push_back(ad::Tensor::zeros_like(p->value));
  }
}

void AdamW::step(double lr) {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    adamw_step(p.value, p.grad, m_[i], v_[i], steps_, lr, options_);
  }
}

std::vector<std::pair<std::string, ad::Tensor*>> AdamW::state() {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("m." + params_[i]->name, &m_[i]);
    out.emplace_back("v." + params_[i]->name, &v_[i]);
  }
  return out;
}

SgdMomentum::SgdMomentum(std::vector<ad::Parameter*> params, double momentum, double weight_decay)
    : Optimizer(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(momentum_ >= 0.0 && momentum_ < 1.0)) throw ConfigError("sgd: momentum must be in [0, 1)");
  for (ad::Parameter* p : params_) velocity_.push_back(ad::Tensor::zeros_like(p->value));
}

void SgdMomentum::step(double lr) {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    ad::Tensor& vel = velocity_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] + weight_decay_ * p.value[k];
      vel[k] = momentum_ * vel[k] + g;
      p.value[k] -= lr * vel[k];
    }
  }
}

std::vector<std::pair<std::string, ad::Tensor*>> SgdMomentum::state() {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("velocity." + params_[i]->name, &velocity_[i]);
  }
  return out;
}

}  // namespace coreecho::train
