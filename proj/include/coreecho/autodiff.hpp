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

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coreecho/rng.hpp"
#include "coreecho/tensor.hpp"

namespace coreecho::ad {

enum class Mode { kTrain, kEval };

// kF32 rounds every forward value to single precision after each op.
enum class Precision { kF64, kF32 };

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable = true);

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

// Running statistics of one batch-norm layer. Not trainable; updated as a
// side effect of train-mode forward passes.
struct BatchNormStats {
  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t features)
      : mean(Shape{features}, 0.0), var(Shape{features}, 1.0) {}
  Tensor mean;
  Tensor var;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Dynamic computation record. Nodes are appended in execution order, so the
// tape order is a topological order and backward walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(Precision precision = Precision::kF64, bool grad_enabled = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Input that receives a gradient, read back with grad().
  Var leaf(Tensor value);
  // Binds a parameter. Frozen parameters enter as constants. A parameter bound
  // twice maps to the same node.
  Var param(Parameter& p);

  // Accumulates d(root)/d(node) for every node and adds parameter gradients
  // into Parameter::grad. A second call without zero_grad() throws.
  void backward(const Var& root);
  void zero_grad();
  bool backward_done() const noexcept { return backward_done_; }

  // Gradient of a node after backward; all zeros if nothing reached it.
  Tensor grad(const Var& v) const;

  // Stop-gradient values captured on one pass can be replayed on later passes
  // so that finite differences treat them as constants.
  void record_stop_gradients(std::vector<Tensor>* sink) { sg_sink_ = sink; }
  void replay_stop_gradients(const std::vector<Tensor>* source) {
    sg_source_ = source;
    sg_cursor_ = 0;
  }

  Precision precision() const noexcept { return precision_; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::string_view op_of(std::size_t id) const { return nodes_.at(id).op; }

  // Op-author interface.
  Var record(const char* op, Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a parent, allocated on first use; nullptr when the
  // parent does not take gradients.
  Tensor* grad_sink(std::size_t id);
  Var stop_gradient_node(const Var& x);

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);
  void finalize_value(const char* op, Tensor& value) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  Precision precision_;
  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Tensor>* sg_sink_ = nullptr;
  const std::vector<Tensor>* sg_source_ = nullptr;
  std::size_t sg_cursor_ = 0;
};

// Elementwise and reduction primitives.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var sigmoid(const Var& a);
Var clamp(const Var& a, double lo, double hi);
// Exact x * Phi(x) with Phi from erf.
Var gelu(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);

// Rank-2 primitives.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// Max-shifted log-sum-exp over `axis` (0 or 1) of a matrix.
Var logsumexp(const Var& a, std::size_t axis);
// Row-wise log-sum-exp restricted to entries with mask != 0. Every row must
// select at least one entry.
Var masked_logsumexp(const Var& a, std::vector<std::uint8_t> mask);
// out[k] = a[rows[k], cols[k]].
Var gather(const Var& a, std::vector<std::size_t> rows, std::vector<std::size_t> cols);
// [B x F] -> [B x (F+1)] with a trailing column of ones.
Var append_ones(const Var& a);
// [B x F] + [F] broadcast over rows.
Var add_rowwise(const Var& a, const Var& row);
Var reshape(const Var& a, Shape shape);
// [B x P x C] -> [B x C], mean over the middle axis.
Var mean_axis1(const Var& a);

// Euclidean distance between every pair of rows of E. Gradient of the
// diagonal (and of coincident rows) is defined as zero.
Var pairwise_l2(const Var& e);

// x: [B x F]. Train mode normalizes with the batch mean and population
// variance and updates `stats` (unbiased variance) with `momentum`; eval mode
// uses `stats` only.
Var batch_norm(const Var& x, const Var& scale, const Var& shift, BatchNormStats* stats, Mode mode,
               double momentum = 0.1, double eps = 1e-5);

// Inverted dropout. The mask is drawn from `rng` in train mode.
Var dropout(const Var& x, double rate, Rng& rng, Mode mode);

// Forward identity; contributes no gradient to anything upstream.
Var stop_gradient(const Var& x);

struct Conv3dOptions {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{1, 1, 1};
};

// x: [B x T x H x W x Cin], w: [kt x kh x kw x Cin x Cout], b: [Cout].
Var conv3d(const Var& x, const Var& w, const Var& b, const Conv3dOptions& opt);

// Dispatch by op tag for the generic primitive set: add, sub, mul, matmul,
// scale, exp, log, sum, mean, abs, sigmoid, logsumexp. `arg` carries the
// scale factor or the logsumexp axis.
Var eval_primitive(std::string_view op, std::span<const Var> inputs, double arg = 0.0);

// Standard normal CDF.
double normal_cdf(double x);
double gelu_value(double x);

}  // namespace coreecho::ad
