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
#include <string>
#include <utility>
#include <vector>

#include "coreecho/autodiff.hpp"

namespace coreecho::model {

struct EncoderConfig {
  std::size_t frames = 36;
  std::size_t height = 112;
  std::size_t width = 112;
  std::size_t channels = 3;
  std::vector<std::size_t> widths{8, 16, 32};
  std::size_t embed_dim = 512;
  // Temporal stride of each conv block; spatial stride is always 2.
  std::size_t temporal_stride = 2;

  void validate() const;
};

using NamedTensor = std::pair<std::string, ad::Tensor*>;

// Small spatiotemporal encoder: blocks of {3x3x3 conv, batch norm, GELU},
// global average pooling, then a linear map to the embedding width.
class TinyEncoder {
 public:
  TinyEncoder(EncoderConfig config, std::uint64_t seed);

  // clips: [B x F x H x W x C] -> [B x embed_dim].
  ad::Var forward(ad::Tape& tape, const ad::Var& clips, ad::Mode mode);
  // Eval-mode embeddings without recording gradients.
  ad::Tensor embed(const ad::Tensor& clips);

  std::vector<ad::Parameter*> parameters();
  // Parameters followed by batch-norm running statistics.
  std::vector<NamedTensor> state();

  void set_trainable(bool trainable);
  bool frozen() const;

  const EncoderConfig& config() const noexcept { return config_; }
  ad::Parameter& projection() { return proj_; }

 private:
  struct Block {
    ad::Parameter kernel, bias, bn_scale, bn_shift;
    ad::BatchNormStats stats;
  };

  EncoderConfig config_;
  std::vector<Block> blocks_;
  ad::Parameter proj_;
};

enum class HeadKind { kRegression, kClassification };

struct HeadConfig {
  std::size_t embed_dim = 512;
  double dropout = 0.4;
  HeadKind kind = HeadKind::kRegression;
};

// Two-layer head  y = W2 [ g(BN2(W1 [BN1(E); 1])); 1 ]  with dropout before
// each linear map. Regression output passes through a fixed affine map
// (offset, scale) that defaults to the identity; the trainer sets it to the
// training-label mean and standard deviation. Classification appends a
// sigmoid.
class RegressionHead {
 public:
  RegressionHead(HeadConfig config, std::uint64_t seed);

  // E: [B x embed_dim] -> [B].
  ad::Var forward(ad::Tape& tape, const ad::Var& embeddings, ad::Mode mode, Rng* rng);

  std::vector<ad::Parameter*> parameters();
  std::vector<NamedTensor> state();

  void set_output_affine(double offset, double scale);
  double output_offset() const { return affine_.value[0]; }
  double output_scale() const { return affine_.value[1]; }

  const HeadConfig& config() const noexcept { return config_; }
  ad::Parameter& w1() { return w1_; }
  ad::Parameter& w2() { return w2_; }
  ad::BatchNormStats& bn1_stats() { return bn1_stats_; }
  ad::BatchNormStats& bn2_stats() { return bn2_stats_; }

 private:
  HeadConfig config_;
  ad::Parameter bn1_scale_, bn1_shift_, w1_, bn2_scale_, bn2_shift_, w2_;
  ad::Parameter affine_;
  ad::BatchNormStats bn1_stats_, bn2_stats_;
};

struct Model {
  Model(EncoderConfig encoder_config, HeadConfig head_config, std::uint64_t seed);

  std::vector<NamedTensor> state();

  TinyEncoder encoder;
  RegressionHead head;
};

// FNV-1a over the raw bytes of the tensors, in order.
std::uint64_t checksum(const std::vector<NamedTensor>& tensors);

}  // namespace coreecho::model
