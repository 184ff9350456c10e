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

#include "coreecho/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "coreecho/errors.hpp"

namespace coreecho::ad {

Parameter::Parameter(std::string n, Tensor v, bool t)
    : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), trainable(t) {}

const Tensor& Var::value() const { return tape_->value_of(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Tape::Tape(Precision precision, bool grad_enabled)
    : precision_(precision), grad_enabled_(grad_enabled) {}

void Tape::finalize_value(const char* op, Tensor& value) const {
  if (precision_ == Precision::kF32) {
    for (double& v : value.data()) v = static_cast<double>(static_cast<float>(v));
  }
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  finalize_value("constant", value);
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  finalize_value("leaf", value);
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.op = "param";
  n.value = p.value;
  finalize_value("param", n.value);
  n.requires_grad = grad_enabled_ && p.trainable;
  if (n.requires_grad) n.param = &p;
  Var v = push(std::move(n));
  bound_.emplace(&p, v.id());
  return v;
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  finalize_value(op, value);
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [this](std::size_t id) { return nodes_[id].requires_grad; });
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor* Tape::grad_sink(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return &n.grad;
}

Var Tape::stop_gradient_node(const Var& x) {
  Tensor value = x.value();
  if (sg_source_ != nullptr) {
    if (sg_cursor_ >= sg_source_->size()) {
      throw UsageError("stop_gradient replay: more stop-gradient nodes than recorded");
    }
    const Tensor& replay = (*sg_source_)[sg_cursor_++];
    if (replay.shape() != value.shape()) {
      throw ShapeError("stop_gradient replay: shape " + shape_str(replay.shape()) + " vs " +
                       shape_str(value.shape()));
    }
    value = replay;
  }
  if (sg_sink_ != nullptr) sg_sink_->push_back(value);
  Node n;
  n.op = "stop_gradient";
  n.value = std::move(value);
  return push(std::move(n));
}

void Tape::backward(const Var& root) {
  if (&root.tape() != this) throw UsageError("backward: root belongs to another tape");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
  }
  if (backward_done_) throw UsageError("backward: called twice without zero_grad()");
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;

  nodes_[root.id()].grad = Tensor(root.shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    Parameter& p = *n.param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor::zeros_like(p.value);
    auto dst = p.grad.data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor::zeros_like(n.value);
  return n.grad;
}

// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

void require_same_tape(const char* op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw UsageError(std::string(op) + ": operands on different tapes");
}

// Unary elementwise op with derivative computed from (input, output).
template <typename F, typename D>
Var unary(const char* op, const Var& a, F f, D df) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return t.record(op, std::move(y), {ia}, [ia, df](Tape& tape, std::size_t self) {
    const Tensor& g = tape.grad_of(self);
    const Tensor& xv = tape.value_of(ia);
    const Tensor& yv = tape.value_of(self);
    Tensor* ga = tape.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gelu_value(double x) { return x * normal_cdf(x); }

Var add(const Var& a, const Var& b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    for (std::size_t id : {ia, ib}) {
      if (Tensor* s = t.grad_sink(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (Tensor* s = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    }
    if (Tensor* s = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& av = t.value_of(ia);
    const Tensor& bv2 = t.value_of(ib);
    if (Tensor* s = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * bv2[i];
    }
    if (Tensor* s = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var abs(const Var& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sigmoid(const Var& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo > hi");
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  return unary("gelu", a, [](double x) { return gelu_value(x); },
               [](double x, double) {
                 const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
                 return normal_cdf(x) + x * pdf;
               });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    Tensor* s2 = t.grad_sink(ia);
    for (double& v : s2->data()) v += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("mean", Tensor::scalar(s / n), {ia}, [ia, n](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0] / n;
    Tensor* s2 = t.grad_sink(ia);
    for (double& v : s2->data()) v += g;
  });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape("matmul", a, b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* yr = &y[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* br = bv.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += aip * br[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(y), {ia, ib},
                         [ia, ib, m, k, n](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& av2 = t.value_of(ia);
                           const Tensor& bv2 = t.value_of(ib);
                           if (Tensor* ga = t.grad_sink(ia)) {
                             // dA = G * B^T
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t p = 0; p < k; ++p) {
                                 double acc = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) {
                                   acc += g[i * n + j] * bv2[p * n + j];
                                 }
                                 (*ga)[i * k + p] += acc;
                               }
                             }
                           }
                           if (Tensor* gb = t.grad_sink(ib)) {
                             // dB = A^T * G
                             for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double aip = av2[i * k + p];
                                 for (std::size_t j = 0; j < n; ++j) {
                                   (*gb)[p * n + j] += aip * g[i * n + j];
                                 }
                               }
                             }
                           }
                         });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const Tensor& av = a.value();
  Tensor y({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = av[i * c + j];
  }
  const std::size_t ia = a.id();
  return a.tape().record("transpose", std::move(y), {ia}, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor* ga = t.grad_sink(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[j * r + i];
    }
  });
}

Var logsumexp(const Var& a, std::size_t axis) {
  require_rank("logsumexp", a, 2);
  if (axis > 1) throw ShapeError("logsumexp: axis must be 0 or 1");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  const std::size_t outer = axis == 1 ? rows : cols;
  const std::size_t inner = axis == 1 ? cols : rows;
  auto index = [=](std::size_t o, std::size_t i) { return axis == 1 ? o * cols + i : i * cols + o; };
  const Tensor& x = a.value();
  Tensor y({outer});
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, x[index(o, i)]);
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += std::exp(x[index(o, i)] - mx);
    y[o] = mx + std::log(s);
  }
  const std::size_t ia = a.id();
  return a.tape().record("logsumexp", std::move(y), {ia},
                         [ia, outer, inner, index](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& xv = t.value_of(ia);
                           const Tensor& yv = t.value_of(self);
                           Tensor* ga = t.grad_sink(ia);
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t k = index(o, i);
                               (*ga)[k] += g[o] * std::exp(xv[k] - yv[o]);
                             }
                           }
                         });
}

Var masked_logsumexp(const Var& a, std::vector<std::uint8_t> mask) {
  require_rank("masked_logsumexp", a, 2);
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (mask.size() != rows * cols) {
    throw ShapeError("masked_logsumexp: mask length " + std::to_string(mask.size()) +
                     " does not match " + shape_str(a.shape()));
  }
  const Tensor& x = a.value();
  Tensor y({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[r * cols + c]) mx = std::max(mx, x[r * cols + c]);
    }
    if (!std::isfinite(mx)) throw DomainError("masked_logsumexp: row selects no entries");
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask[r * cols + c]) s += std::exp(x[r * cols + c] - mx);
    }
    y[r] = mx + std::log(s);
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      "masked_logsumexp", std::move(y), {ia},
      [ia, rows, cols, mask = std::move(mask)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& xv = t.value_of(ia);
        const Tensor& yv = t.value_of(self);
        Tensor* ga = t.grad_sink(ia);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t k = r * cols + c;
            if (mask[k]) (*ga)[k] += g[r] * std::exp(xv[k] - yv[r]);
          }
        }
      });
}

Var gather(const Var& a, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  require_rank("gather", a, 2);
  if (rows.size() != cols.size() || rows.empty()) {
    throw ShapeError("gather: row and column index lists must be non-empty and equal length");
  }
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor y({rows.size()});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= r || cols[k] >= c) throw ShapeError("gather: index out of range");
    y[k] = a.value()[rows[k] * c + cols[k]];
  }
  const std::size_t ia = a.id();
  return a.tape().record("gather", std::move(y), {ia},
                         [ia, c, rows = std::move(rows), cols = std::move(cols)](
                             Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor* ga = t.grad_sink(ia);
                           for (std::size_t k = 0; k < rows.size(); ++k) {
                             (*ga)[rows[k] * c + cols[k]] += g[k];
                           }
                         });
}

Var append_ones(const Var& a) {
  require_rank("append_ones", a, 2);
  const std::size_t b = a.shape()[0], f = a.shape()[1];
  const Tensor& x = a.value();
  Tensor y({b, f + 1});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(x.data().data() + i * f, f, &y[i * (f + 1)]);
    y[i * (f + 1) + f] = 1.0;
  }
  const std::size_t ia = a.id();
  return a.tape().record("append_ones", std::move(y), {ia}, [ia, b, f](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor* ga = t.grad_sink(ia);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) (*ga)[i * f + j] += g[i * (f + 1) + j];
    }
  });
}

Var add_rowwise(const Var& a, const Var& row) {
  require_same_tape("add_rowwise", a, row);
  require_rank("add_rowwise", a, 2);
  const std::size_t b = a.shape()[0], f = a.shape()[1];
  if (row.shape() != Shape{f}) {
    throw ShapeError("add_rowwise: row shape " + shape_str(row.shape()) + " vs matrix " +
                     shape_str(a.shape()));
  }
  Tensor y = a.value();
  const Tensor& rv = row.value();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < f; ++j) y[i * f + j] += rv[j];
  }
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record("add_rowwise", std::move(y), {ia, ir},
                         [ia, ir, b, f](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           if (Tensor* ga = t.grad_sink(ia)) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                           }
                           if (Tensor* gr = t.grad_sink(ir)) {
                             for (std::size_t i = 0; i < b; ++i) {
                               for (std::size_t j = 0; j < f; ++j) (*gr)[j] += g[i * f + j];
                             }
                           }
                         });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record("reshape", std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor* ga = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var mean_axis1(const Var& a) {
  require_rank("mean_axis1", a, 3);
  const std::size_t b = a.shape()[0], p = a.shape()[1], c = a.shape()[2];
  const Tensor& x = a.value();
  Tensor y({b, c});
  const double inv = 1.0 / static_cast<double>(p);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      const double* xr = x.data().data() + (i * p + k) * c;
      for (std::size_t j = 0; j < c; ++j) y[i * c + j] += xr[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] *= inv;
  }
  const std::size_t ia = a.id();
  return a.tape().record("mean_axis1", std::move(y), {ia},
                         [ia, b, p, c, inv](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor* ga = t.grad_sink(ia);
                           for (std::size_t i = 0; i < b; ++i) {
                             for (std::size_t k = 0; k < p; ++k) {
                               double* gr = &(*ga)[(i * p + k) * c];
                               for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j] * inv;
                             }
                           }
                         });
}

Var pairwise_l2(const Var& e) {
  require_rank("pairwise_l2", e, 2);
  const std::size_t n = e.shape()[0], d = e.shape()[1];
  if (n < 2) throw ShapeError("pairwise_l2: need at least 2 rows");
  const Tensor& x = e.value();
  Tensor y({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      const double dist = std::sqrt(std::max(s, 0.0));
      y[i * n + j] = dist;
      y[j * n + i] = dist;
    }
  }
  const std::size_t ie = e.id();
  return e.tape().record("pairwise_l2", std::move(y), {ie}, [ie, n, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& xv = t.value_of(ie);
    const Tensor& dv = t.value_of(self);
    Tensor* ge = t.grad_sink(ie);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dist = dv[i * n + j];
        if (dist <= 0.0) continue;
        const double coef = (g[i * n + j] + g[j * n + i]) / dist;
        if (coef == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = xv[i * d + k] - xv[j * d + k];
          (*ge)[i * d + k] += coef * diff;
          (*ge)[j * d + k] -= coef * diff;
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& scale_v, const Var& shift_v, BatchNormStats* stats,
               Mode mode, double momentum, double eps) {
  require_rank("batch_norm", x, 2);
  const std::size_t b = x.shape()[0], f = x.shape()[1];
  if (scale_v.shape() != Shape{f} || shift_v.shape() != Shape{f}) {
    throw ShapeError("batch_norm: scale/shift must have shape [" + std::to_string(f) + "]");
  }
  if (!(eps > 0.0)) throw DomainError("batch_norm: eps must be positive");
  if (stats != nullptr && (stats->mean.shape() != Shape{f} || stats->var.shape() != Shape{f})) {
    throw ShapeError("batch_norm: running stats shape mismatch");
  }
  const Tensor& xv = x.value();
  const Tensor& gamma = scale_v.value();
  const Tensor& beta = shift_v.value();

  Tensor mu({f}), inv({f});
  if (mode == Mode::kTrain) {
    if (b < 2) throw UsageError("batch_norm: train mode needs a batch of at least 2");
    Tensor var({f});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) mu[j] += xv[i * f + j];
    }
    for (std::size_t j = 0; j < f; ++j) mu[j] /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double c = xv[i * f + j] - mu[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < f; ++j) {
      var[j] /= static_cast<double>(b);
      inv[j] = 1.0 / std::sqrt(var[j] + eps);
    }
    if (stats != nullptr) {
      const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
      for (std::size_t j = 0; j < f; ++j) {
        stats->mean[j] = (1.0 - momentum) * stats->mean[j] + momentum * mu[j];
        stats->var[j] = (1.0 - momentum) * stats->var[j] + momentum * var[j] * unbias;
      }
    }
  } else {
    if (stats == nullptr) throw UsageError("batch_norm: eval mode needs running stats");
    for (std::size_t j = 0; j < f; ++j) {
      mu[j] = stats->mean[j];
      inv[j] = 1.0 / std::sqrt(stats->var[j] + eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const std::size_t k = i * f + j;
      xhat[k] = (xv[k] - mu[j]) * inv[j];
      y[k] = gamma[j] * xhat[k] + beta[j];
    }
  }
  const std::size_t ix = x.id(), is = scale_v.id(), ib = shift_v.id();
  const bool train = mode == Mode::kTrain;
  return x.tape().record(
      "batch_norm", std::move(y), {ix, is, ib},
      [ix, is, ib, b, f, train, xhat = std::move(xhat), inv = std::move(inv)](Tape& t,
                                                                              std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& gamma2 = t.value_of(is);
        if (Tensor* gs = t.grad_sink(is)) {
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < f; ++j) (*gs)[j] += g[i * f + j] * xhat[i * f + j];
          }
        }
        if (Tensor* gb = t.grad_sink(ib)) {
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < f; ++j) (*gb)[j] += g[i * f + j];
          }
        }
        Tensor* gx = t.grad_sink(ix);
        if (gx == nullptr) return;
        if (!train) {
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < f; ++j) {
              (*gx)[i * f + j] += g[i * f + j] * gamma2[j] * inv[j];
            }
          }
          return;
        }
        std::vector<double> sum_g(f, 0.0), sum_gx(f, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < f; ++j) {
            const double gh = g[i * f + j] * gamma2[j];
            sum_g[j] += gh;
            sum_gx[j] += gh * xhat[i * f + j];
          }
        }
        const double nb = static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < f; ++j) {
            const std::size_t k = i * f + j;
            const double gh = g[k] * gamma2[j];
            (*gx)[k] += inv[j] / nb * (nb * gh - sum_g[j] - xhat[k] * sum_gx[j]);
          }
        }
      });
}

Var dropout(const Var& x, double rate, Rng& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  const Tensor& xv = x.value();
  Tensor mask(xv.shape());
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    y[i] = xv[i] * mask[i];
  }
  const std::size_t ix = x.id();
  return x.tape().record("dropout", std::move(y), {ix},
                         [ix, mask = std::move(mask)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor* gx = t.grad_sink(ix);
                           for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
                         });
}

Var stop_gradient(const Var& x) { return x.tape().stop_gradient_node(x); }

Var eval_primitive(std::string_view op, std::span<const Var> in, double arg) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw UsageError(std::string(op) + ": expected " + std::to_string(n) + " inputs");
    }
  };
  if (op == "add") { need(2); return add(in[0], in[1]); }
  if (op == "sub") { need(2); return sub(in[0], in[1]); }
  if (op == "mul") { need(2); return mul(in[0], in[1]); }
  if (op == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (op == "scale") { need(1); return scale(in[0], arg); }
  if (op == "exp") { need(1); return exp(in[0]); }
  if (op == "log") { need(1); return log(in[0]); }
  if (op == "sum") { need(1); return sum(in[0]); }
  if (op == "mean") { need(1); return mean(in[0]); }
  if (op == "abs") { need(1); return abs(in[0]); }
  if (op == "sigmoid") { need(1); return sigmoid(in[0]); }
  if (op == "logsumexp") { need(1); return logsumexp(in[0], static_cast<std::size_t>(arg)); }
  throw UsageError("unknown primitive '" + std::string(op) + "'");
}

}  // namespace coreecho::ad
