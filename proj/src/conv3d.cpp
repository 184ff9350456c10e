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

#include <string>

#include "coreecho/autodiff.hpp"
#include "coreecho/errors.hpp"

namespace coreecho::ad {

namespace {

struct ConvGeometry {
  std::size_t batch, t, h, w, cin;
  std::size_t kt, kh, kw, cout;
  std::size_t ot, oh, ow;
  std::array<std::size_t, 3> stride, pad;
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                       const char* axis) {
  if (s == 0) throw ShapeError(std::string("conv3d: zero stride on ") + axis);
  if (in + 2 * p < k) throw ShapeError(std::string("conv3d: kernel larger than input on ") + axis);
  return (in + 2 * p - k) / s + 1;
}

// Calls f(out_offset, in_offset, tap_offset) for every valid (output, tap)
// pair. Offsets are in units of channels (multiply by cin/cout as needed).
template <typename F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t ot = 0; ot < g.ot; ++ot) {
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow) {
          const std::size_t out_pos = ((b * g.ot + ot) * g.oh + oh) * g.ow + ow;
          for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const long long it = static_cast<long long>(ot * g.stride[0] + dt) -
                                 static_cast<long long>(g.pad[0]);
            if (it < 0 || it >= static_cast<long long>(g.t)) continue;
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
              const long long ih = static_cast<long long>(oh * g.stride[1] + dh) -
                                   static_cast<long long>(g.pad[1]);
              if (ih < 0 || ih >= static_cast<long long>(g.h)) continue;
              for (std::size_t dw = 0; dw < g.kw; ++dw) {
                const long long iw = static_cast<long long>(ow * g.stride[2] + dw) -
                                     static_cast<long long>(g.pad[2]);
                if (iw < 0 || iw >= static_cast<long long>(g.w)) continue;
                const std::size_t in_pos =
                    ((b * g.t + static_cast<std::size_t>(it)) * g.h + static_cast<std::size_t>(ih)) *
                        g.w +
                    static_cast<std::size_t>(iw);
                const std::size_t tap = (dt * g.kh + dh) * g.kw + dw;
                f(out_pos, in_pos, tap);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& bias, const Conv3dOptions& opt) {
  if (x.shape().size() != 5) throw ShapeError("conv3d: input must be [B x T x H x W x C], got " + shape_str(x.shape()));
  if (w.shape().size() != 5) throw ShapeError("conv3d: kernel must be [kt x kh x kw x Cin x Cout], got " + shape_str(w.shape()));
  ConvGeometry g{};
  g.batch = x.shape()[0];
  g.t = x.shape()[1];
  g.h = x.shape()[2];
  g.w = x.shape()[3];
  g.cin = x.shape()[4];
  g.kt = w.shape()[0];
  g.kh = w.shape()[1];
  g.kw = w.shape()[2];
  g.cout = w.shape()[4];
  if (w.shape()[3] != g.cin) {
    throw ShapeError("conv3d: input channels " + std::to_string(g.cin) + " vs kernel " +
                     shape_str(w.shape()));
  }
  if (bias.shape() != Shape{g.cout}) throw ShapeError("conv3d: bias must be [Cout]");
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.ot = out_extent(g.t, g.kt, g.stride[0], g.pad[0], "time");
  g.oh = out_extent(g.h, g.kh, g.stride[1], g.pad[1], "height");
  g.ow = out_extent(g.w, g.kw, g.stride[2], g.pad[2], "width");

  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  Tensor y({g.batch, g.ot, g.oh, g.ow, g.cout});
  const std::size_t n_out = g.batch * g.ot * g.oh * g.ow;
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t c = 0; c < g.cout; ++c) y[o * g.cout + c] = bv[c];
  }
  {
    double* yp = y.data().data();
    const double* xp = xv.data().data();
    const double* wp = wv.data().data();
    const std::size_t cin = g.cin, cout = g.cout;
    for_each_tap(g, [&](std::size_t op, std::size_t ip, std::size_t tap) {
      double* yr = yp + op * cout;
      const double* xr = xp + ip * cin;
      const double* wt = wp + tap * cin * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double v = xr[ci];
        const double* wr = wt + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) yr[co] += v * wr[co];
      }
    });
  }

  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  return x.tape().record("conv3d", std::move(y), {ix, iw, ib},
                         [ix, iw, ib, g, n_out](Tape& t, std::size_t self) {
                           const double* gy = t.grad_of(self).data().data();
                           const double* xp = t.value_of(ix).data().data();
                           const double* wp = t.value_of(iw).data().data();
                           Tensor* gx = t.grad_sink(ix);
                           Tensor* gw = t.grad_sink(iw);
                           Tensor* gb = t.grad_sink(ib);
                           const std::size_t cin = g.cin, cout = g.cout;
                           if (gb != nullptr) {
                             for (std::size_t o = 0; o < n_out; ++o) {
                               for (std::size_t c = 0; c < cout; ++c) (*gb)[c] += gy[o * cout + c];
                             }
                           }
                           double* gxp = gx ? gx->data().data() : nullptr;
                           double* gwp = gw ? gw->data().data() : nullptr;
                           if (gxp == nullptr && gwp == nullptr) return;
                           for_each_tap(g, [&](std::size_t op, std::size_t ip, std::size_t tap) {
                             const double* gr = gy + op * cout;
                             const double* wt = wp + tap * cin * cout;
                             for (std::size_t ci = 0; ci < cin; ++ci) {
                               const double* wr = wt + ci * cout;
                               if (gxp != nullptr) {
                                 double acc = 0.0;
                                 for (std::size_t co = 0; co < cout; ++co) acc += gr[co] * wr[co];
                                 gxp[ip * cin + ci] += acc;
                               }
                               if (gwp != nullptr) {
                                 const double v = xp[ip * cin + ci];
                                 double* gwr = gwp + tap * cin * cout + ci * cout;
                                 for (std::size_t co = 0; co < cout; ++co) gwr[co] += v * gr[co];
                               }
                             }
                           });
                         });
}

}  // namespace coreecho::ad
