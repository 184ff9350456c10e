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

#include "coreecho/model.hpp"

#include <cmath>
#include <cstring>

#include "coreecho/errors.hpp"

namespace coreecho::model {

using ad::Mode;
using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr std::uint64_t kEncoderTag = 0;
constexpr std::uint64_t kHeadTag = 1;

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

void EncoderConfig::validate() const {
  if (frames == 0 || height == 0 || width == 0 || channels == 0) {
    throw ConfigError("encoder: clip extents must be positive");
  }
  if (widths.empty()) throw ConfigError("encoder: need at least one conv block");
  for (auto w : widths) {
    if (w == 0) throw ConfigError("encoder: block widths must be positive");
  }
  if (embed_dim == 0) throw ConfigError("encoder: embed_dim must be >= 1");
  if (temporal_stride == 0) throw ConfigError("encoder: temporal_stride must be >= 1");
}

TinyEncoder::TinyEncoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng::derive(seed, {stream::kInit, kEncoderTag});
  std::size_t cin = config_.channels;
  blocks_.reserve(config_.widths.size());
  for (std::size_t i = 0; i < config_.widths.size(); ++i) {
    const std::size_t cout = config_.widths[i];
    const std::string prefix = "encoder.block" + std::to_string(i);
    const std::size_t fan_in = 27 * cin;
    Block b;
    b.kernel = Parameter(prefix + ".kernel", uniform_init({3, 3, 3, cin, cout}, fan_in, rng));
    b.bias = Parameter(prefix + ".bias", uniform_init({cout}, fan_in, rng));
    b.bn_scale = Parameter(prefix + ".bn.scale", Tensor({cout}, 1.0));
    b.bn_shift = Parameter(prefix + ".bn.shift", Tensor({cout}, 0.0));
    b.stats = ad::BatchNormStats(cout);
    blocks_.push_back(std::move(b));
    cin = cout;
  }
  proj_ = Parameter("encoder.proj.weight",
                    uniform_init({config_.embed_dim, cin + 1}, cin + 1, rng));
}

Var TinyEncoder::forward(Tape& tape, const Var& clips, Mode mode) {
  const Shape expected{clips.shape().empty() ? 0 : clips.shape()[0], config_.frames,
                       config_.height, config_.width, config_.channels};
  if (clips.shape() != expected) {
    throw ShapeError("encoder: clip batch shape " + ad::shape_str(clips.shape()) +
                     " does not match config " + ad::shape_str(expected));
  }
  const std::size_t batch = expected[0];
  Var x = clips;
  ad::Conv3dOptions opt;
  opt.stride = {config_.temporal_stride, 2, 2};
  opt.padding = {1, 1, 1};
  for (Block& b : blocks_) {
    x = ad::conv3d(x, tape.param(b.kernel), tape.param(b.bias), opt);
    const Shape s = x.shape();
    const std::size_t c = s[4];
    const std::size_t positions = ad::shape_size(s) / c;
    Var flat = ad::reshape(x, {positions, c});
    flat = ad::batch_norm(flat, tape.param(b.bn_scale), tape.param(b.bn_shift), &b.stats, mode);
    flat = ad::gelu(flat);
    x = ad::reshape(flat, s);
  }
  const Shape s = x.shape();
  const std::size_t c = s[4];
  Var pooled = ad::mean_axis1(ad::reshape(x, {batch, ad::shape_size(s) / (batch * c), c}));
  return ad::matmul(ad::append_ones(pooled), ad::transpose(tape.param(proj_)));
}

Tensor TinyEncoder::embed(const Tensor& clips) {
  Tape tape(ad::Precision::kF64, /*grad_enabled=*/false);
  return forward(tape, tape.constant(clips), Mode::kEval).value();
}

std::vector<Parameter*> TinyEncoder::parameters() {
  std::vector<Parameter*> out;
  for (Block& b : blocks_) {
    out.insert(out.end(), {&b.kernel, &b.bias, &b.bn_scale, &b.bn_shift});
  }
  out.push_back(&proj_);
  return out;
}

std::vector<NamedTensor> TinyEncoder::state() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.emplace_back(p->name, &p->value);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "encoder.block" + std::to_string(i) + ".bn.";
    out.emplace_back(prefix + "running_mean", &blocks_[i].stats.mean);
    out.emplace_back(prefix + "running_var", &blocks_[i].stats.var);
  }
  return out;
}

void TinyEncoder::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->trainable = trainable;
}

bool TinyEncoder::frozen() const {
  for (const Block& b : blocks_) {
    if (b.kernel.trainable || b.bias.trainable || b.bn_scale.trainable || b.bn_shift.trainable) {
      return false;
    }
  }
  return !proj_.trainable;
}

// ---------------------------------------------------------------------------

RegressionHead::RegressionHead(HeadConfig config, std::uint64_t seed) : config_(config) {
  if (config_.embed_dim == 0) throw ConfigError("head: embed_dim must be >= 1");
  if (!(config_.dropout >= 0.0 && config_.dropout < 1.0)) {
    throw ConfigError("head: dropout must be in [0, 1)");
  }
  const std::size_t d = config_.embed_dim;
  Rng rng = Rng::derive(seed, {stream::kInit, kHeadTag});
  bn1_scale_ = Parameter("head.bn1.scale", Tensor({d}, 1.0));
  bn1_shift_ = Parameter("head.bn1.shift", Tensor({d}, 0.0));
  w1_ = Parameter("head.w1", uniform_init({d, d + 1}, d + 1, rng));
  bn2_scale_ = Parameter("head.bn2.scale", Tensor({d}, 1.0));
  bn2_shift_ = Parameter("head.bn2.shift", Tensor({d}, 0.0));
  w2_ = Parameter("head.w2", uniform_init({1, d + 1}, d + 1, rng));
  affine_ = Parameter("head.output_affine", Tensor::from({0.0, 1.0}), /*trainable=*/false);
  bn1_stats_ = ad::BatchNormStats(d);
  bn2_stats_ = ad::BatchNormStats(d);
}

Var RegressionHead::forward(Tape& tape, const Var& embeddings, Mode mode, Rng* rng) {
  if (embeddings.shape().size() != 2 || embeddings.shape()[1] != config_.embed_dim) {
    throw ShapeError("head: expected [B x " + std::to_string(config_.embed_dim) + "], got " +
                     ad::shape_str(embeddings.shape()));
  }
  if (mode == Mode::kTrain && config_.dropout > 0.0 && rng == nullptr) {
    throw UsageError("head: train mode with dropout needs an rng");
  }
  const std::size_t batch = embeddings.shape()[0];
  Rng unused(0);
  Rng& r = rng != nullptr ? *rng : unused;

  Var h = ad::batch_norm(embeddings, tape.param(bn1_scale_), tape.param(bn1_shift_), &bn1_stats_,
                         mode);
  h = ad::dropout(h, config_.dropout, r, mode);
  Var z = ad::matmul(ad::append_ones(h), ad::transpose(tape.param(w1_)));
  z = ad::batch_norm(z, tape.param(bn2_scale_), tape.param(bn2_shift_), &bn2_stats_, mode);
  Var a = ad::gelu(z);
  a = ad::dropout(a, config_.dropout, r, mode);
  Var out = ad::reshape(ad::matmul(ad::append_ones(a), ad::transpose(tape.param(w2_))), {batch});

  if (config_.kind == HeadKind::kClassification) return ad::sigmoid(out);
  const double offset = affine_.value[0], scale = affine_.value[1];
  if (scale != 1.0) out = ad::scale(out, scale);
  if (offset != 0.0) out = ad::add_scalar(out, offset);
  return out;
}

std::vector<Parameter*> RegressionHead::parameters() {
  return {&bn1_scale_, &bn1_shift_, &w1_, &bn2_scale_, &bn2_shift_, &w2_};
}

std::vector<NamedTensor> RegressionHead::state() {
  std::vector<NamedTensor> out;
  for (Parameter* p : parameters()) out.emplace_back(p->name, &p->value);
  out.emplace_back(affine_.name, &affine_.value);
  out.emplace_back("head.bn1.running_mean", &bn1_stats_.mean);
  out.emplace_back("head.bn1.running_var", &bn1_stats_.var);
  out.emplace_back("head.bn2.running_mean", &bn2_stats_.mean);
  out.emplace_back("head.bn2.running_var", &bn2_stats_.var);
  return out;
}

void RegressionHead::set_output_affine(double offset, double scale) {
  if (!(scale > 0.0) || !std::isfinite(offset)) {
    throw ConfigError("head: output scale must be positive and offset finite");
  }
  affine_.value[0] = offset;
  affine_.value[1] = scale;
}

// ---------------------------------------------------------------------------

Model::Model(EncoderConfig encoder_config, HeadConfig head_config, std::uint64_t seed)
    : encoder(std::move(encoder_config), seed), head(head_config, seed) {
  if (head.config().embed_dim != encoder.config().embed_dim) {
    throw ConfigError("model: head embed_dim differs from encoder embed_dim");
  }
}

std::vector<NamedTensor> Model::state() {
  auto out = encoder.state();
  auto h = head.state();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::uint64_t checksum(const std::vector<NamedTensor>& tensors) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&hash](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    mix(name.data(), name.size() + 1);
    for (std::size_t d : t->shape()) {
      const std::uint64_t d64 = d;
      mix(&d64, sizeof d64);
    }
    for (double v : t->data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      mix(bytes, sizeof bytes);
    }
  }
  return hash;
}

}  // namespace coreecho::model
