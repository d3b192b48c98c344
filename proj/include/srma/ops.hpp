#pragma once

#include <algorithm>
#include <array>
#include <memory>

#include "srma/kernels.hpp"
#include "srma/tape.hpp"

// Differentiable tensor operations. Conventions shared by every op:
//  - no implicit broadcasting; binary ops require identical shapes and the
//    scalar forms (scale, add_scalar) are explicit,
//  - reductions accumulate in a fixed order (innermost axis, left to right),
//    so results do not depend on thread count or kernel variant,
//  - outputs are checked for NaN/Inf and non-finite values raise,
//  - a backward rule is recorded iff a tape is given and an input requires
//    gradients.

namespace srma {

namespace detail {

template <typename S>
Tensor<S> make_out(Shape shape) {
  return Tensor<S>::zeros(std::move(shape));
}

inline int64_t ceil_div(int64_t a, int64_t b) {  // b > 0
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

inline int64_t floor_div(int64_t a, int64_t b) {  // b > 0
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) {
    S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
S stable_softplus(S x) {
  // max(x,0) + log1p(exp(-|x|)): safe for large |x|
  S m = x > S(0) ? x : S(0);
  return m + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

enum class Pointwise { Sigmoid, Silu, Softplus, Exp, Neg };

template <typename S>
Tensor<S> pointwise(Tape<S>* tape, const Tensor<S>& x, Pointwise fn) {
  const int64_t n = x.numel();
  Tensor<S> out = detail::make_out<S>(x.shape());
  const S* xd = x.data();
  S* od = out.mutable_data();
  switch (fn) {
    case Pointwise::Sigmoid:
      parallel_for(0, n, 4096, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) od[i] = detail::stable_sigmoid(xd[i]);
      });
      break;
    case Pointwise::Silu:
      parallel_for(0, n, 4096, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) od[i] = xd[i] * detail::stable_sigmoid(xd[i]);
      });
      break;
    case Pointwise::Softplus:
      parallel_for(0, n, 4096, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) od[i] = detail::stable_softplus(xd[i]);
      });
      break;
    case Pointwise::Exp:
      parallel_for(0, n, 4096, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) od[i] = std::exp(xd[i]);
      });
      break;
    case Pointwise::Neg:
      kern::active<S>().neg(xd, od, n);
      break;
  }
  check_finite(out, "pointwise");
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, oi, fn, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S* g = oi->grad.data();
      const S* xv = xi->data.data();
      const S* yv = oi->data.data();
      S* gx = xi->grad.data();
      parallel_for(0, n, 4096, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
          S d;
          switch (fn) {
            case Pointwise::Sigmoid:
              d = yv[i] * (S(1) - yv[i]);
              break;
            case Pointwise::Silu: {
              S s = detail::stable_sigmoid(xv[i]);
              d = s * (S(1) + xv[i] * (S(1) - s));
              break;
            }
            case Pointwise::Softplus:
              d = detail::stable_sigmoid(xv[i]);
              break;
            case Pointwise::Exp:
              d = yv[i];
              break;
            case Pointwise::Neg:
              d = S(-1);
              break;
          }
          gx[i] += g[i] * d;
        }
      });
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(Tape<S>* t, const Tensor<S>& x) {
  return pointwise(t, x, Pointwise::Sigmoid);
}
template <typename S>
Tensor<S> silu(Tape<S>* t, const Tensor<S>& x) {
  return pointwise(t, x, Pointwise::Silu);
}
template <typename S>
Tensor<S> softplus(Tape<S>* t, const Tensor<S>& x) {
  return pointwise(t, x, Pointwise::Softplus);
}
template <typename S>
Tensor<S> exp(Tape<S>* t, const Tensor<S>& x) {
  return pointwise(t, x, Pointwise::Exp);
}
template <typename S>
Tensor<S> neg(Tape<S>* t, const Tensor<S>& x) {
  return pointwise(t, x, Pointwise::Neg);
}

// ---------------------------------------------------------------------------
// binary elementwise + scalar forms
// ---------------------------------------------------------------------------

enum class Binary { Add, Mul, Div };

template <typename S>
Tensor<S> binary(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b, Binary fn) {
  require(a.shape() == b.shape(), "binary op shape mismatch: " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  const int64_t n = a.numel();
  Tensor<S> out = detail::make_out<S>(a.shape());
  const S* ad = a.data();
  const S* bd = b.data();
  S* od = out.mutable_data();
  switch (fn) {
    case Binary::Add:
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        kern::active<S>().add(ad + lo, bd + lo, od + lo, hi - lo);
      });
      break;
    case Binary::Mul:
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        kern::active<S>().mul(ad + lo, bd + lo, od + lo, hi - lo);
      });
      break;
    case Binary::Div:
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) od[i] = ad[i] / bd[i];
      });
      break;
  }
  check_finite(out, "binary");
  if (tracing(tape, a, b)) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [ai, bi, oi, fn, n]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      const S* av = ai->data.data();
      const S* bv = bi->data.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        S* ga = ai->grad.data();
        parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
          switch (fn) {
            case Binary::Add:
              kern::active<S>().axpy(S(1), g + lo, ga + lo, hi - lo);
              break;
            case Binary::Mul:
              kern::active<S>().mul_acc(g + lo, bv + lo, ga + lo, hi - lo);
              break;
            case Binary::Div:
              for (int64_t i = lo; i < hi; ++i) ga[i] += g[i] / bv[i];
              break;
          }
        });
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        S* gb = bi->grad.data();
        parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
          switch (fn) {
            case Binary::Add:
              kern::active<S>().axpy(S(1), g + lo, gb + lo, hi - lo);
              break;
            case Binary::Mul:
              kern::active<S>().mul_acc(g + lo, av + lo, gb + lo, hi - lo);
              break;
            case Binary::Div:
              for (int64_t i = lo; i < hi; ++i)
                gb[i] += -g[i] * av[i] / (bv[i] * bv[i]);
              break;
          }
        });
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(Tape<S>* t, const Tensor<S>& a, const Tensor<S>& b) {
  return binary(t, a, b, Binary::Add);
}
template <typename S>
Tensor<S> mul(Tape<S>* t, const Tensor<S>& a, const Tensor<S>& b) {
  return binary(t, a, b, Binary::Mul);
}
template <typename S>
Tensor<S> div(Tape<S>* t, const Tensor<S>& a, const Tensor<S>& b) {
  return binary(t, a, b, Binary::Div);
}

/// out = c * x  (scalar-by-tensor, the one permitted broadcast)
template <typename S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& x, S c) {
  const int64_t n = x.numel();
  Tensor<S> out = detail::make_out<S>(x.shape());
  const S* xd = x.data();
  S* od = out.mutable_data();
  parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
    kern::active<S>().scale(xd + lo, c, od + lo, hi - lo);
  });
  check_finite(out, "scale");
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, oi, c, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S* g = oi->grad.data();
      S* gx = xi->grad.data();
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        kern::active<S>().axpy(c, g + lo, gx + lo, hi - lo);
      });
    });
  }
  return out;
}

/// out = x + c
template <typename S>
Tensor<S> add_scalar(Tape<S>* tape, const Tensor<S>& x, S c) {
  const int64_t n = x.numel();
  Tensor<S> out = detail::make_out<S>(x.shape());
  const S* xd = x.data();
  S* od = out.mutable_data();
  parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
    kern::active<S>().affine(xd + lo, S(1), c, od + lo, hi - lo);
  });
  check_finite(out, "add_scalar");
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, oi, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S* g = oi->grad.data();
      S* gx = xi->grad.data();
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        kern::active<S>().axpy(S(1), g + lo, gx + lo, hi - lo);
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Full reduction to a [1] tensor. Accumulates in double, left to right.
template <typename S>
Tensor<S> sum(Tape<S>* tape, const Tensor<S>& x) {
  const int64_t n = x.numel();
  const S* xd = x.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(xd[i]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
  check_finite(out, "sum");
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, oi, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S g = oi->grad[0];
      S* gx = xi->grad.data();
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) gx[i] += g;
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// [m x k] x [k x n] -> [m x n]. Each output element accumulates over k left
/// to right (ikj loop order, vectorized along n).
template <typename S>
Tensor<S> matmul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  require(a.dim() == 2 && b.dim() == 2, "matmul requires rank-2 operands");
  const int64_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  require(k == k2, "matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  Tensor<S> out = detail::make_out<S>({m, n});
  const S* ad = a.data();
  const S* bd = b.data();
  S* od = out.mutable_data();
  parallel_for(0, m, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      S* orow = od + i * n;
      for (int64_t kk = 0; kk < k; ++kk)
        kern::active<S>().axpy(ad[i * k + kk], bd + kk * n, orow, n);
    }
  });
  check_finite(out, "matmul");
  if (tracing(tape, a, b)) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [ai, bi, oi, m, k, n]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      const S* av = ai->data.data();
      const S* bv = bi->data.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        S* ga = ai->grad.data();
        // ga[i,kk] += sum_j g[i,j] * b[kk,j]
        parallel_for(0, m, 1, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
              const S* grow = g + i * n;
              const S* brow = bv + kk * n;
              S acc = S(0);
              for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + kk] += acc;
            }
        });
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        S* gb = bi->grad.data();
        // gb[kk,:] += sum_i a[i,kk] * g[i,:]
        parallel_for(0, k, 1, [&](int64_t lo, int64_t hi) {
          for (int64_t kk = lo; kk < hi; ++kk)
            for (int64_t i = 0; i < m; ++i)
              kern::active<S>().axpy(av[i * k + kk], g + i * n, gb + kk * n, n);
        });
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv3d
// ---------------------------------------------------------------------------

namespace detail {

/// Zero-padded copy of a [C,H,W,D] volume, planes of stride (W+2p)*(D+2p),
/// with a tail margin so fused stencil sweeps may read junk past the last
/// plane. Zero pads make out-of-range taps contribute exact zeros.
template <typename S>
std::vector<S> pad_volume(const S* x, int64_t c, int64_t H, int64_t W, int64_t D, int64_t pad,
                          int64_t margin) {
  const int64_t Wp = W + 2 * pad, Dp = D + 2 * pad, Hp = H + 2 * pad;
  std::vector<S> xp(static_cast<size_t>(c * Hp * Wp * Dp + margin), S(0));
  parallel_for(0, c * H, 4, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t ch = t / H, h = t % H;
      const S* src = x + (ch * H + h) * W * D;
      S* dst = xp.data() + (ch * Hp + h + pad) * Wp * Dp + pad * Dp + pad;
      for (int64_t w = 0; w < W; ++w) std::copy(src + w * D, src + (w + 1) * D, dst + w * Dp);
    }
  });
  return xp;
}

}  // namespace detail

/// Cross-correlation (no kernel flip) over [C,H,W,D] volumes with cubic
/// kernels [Cout, Cin/groups, k,k,k], optional bias. Each output element
/// accumulates taps in (cin, kh, kw, kd) order. Stride-1 paths run fused kd
/// stencils over zero-padded planes (the whole W x D plane is one
/// constant-shift run); strided paths use plain loops.
template <typename S>
Tensor<S> conv3d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& kernel,
                 const Tensor<S>& bias, int64_t stride, int64_t pad, int64_t groups) {
  require(x.dim() == 4, "conv3d input must be [C,H,W,D]");
  require(kernel.dim() == 5, "conv3d kernel must be [Cout,Cin/g,k,k,k]");
  require(stride >= 1 && pad >= 0 && groups >= 1, "conv3d invalid geometry");
  const int64_t cin = x.extent(0), H = x.extent(1), W = x.extent(2), D = x.extent(3);
  const int64_t cout = kernel.extent(0), cpg = kernel.extent(1), k = kernel.extent(2);
  require(kernel.extent(3) == k && kernel.extent(4) == k, "conv3d kernel must be cubic");
  require(cin % groups == 0 && cout % groups == 0, "conv3d channels not divisible by groups");
  require(cpg == cin / groups, "conv3d kernel in-channel extent mismatch");
  require(pad <= k - 1, "conv3d pad must be < kernel size");
  if (bias.defined()) require(bias.numel() == cout, "conv3d bias extent mismatch");
  const int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const int64_t Wo = (W + 2 * pad - k) / stride + 1;
  const int64_t Do = (D + 2 * pad - k) / stride + 1;
  require(H + 2 * pad >= k && W + 2 * pad >= k && D + 2 * pad >= k && Ho > 0 && Wo > 0 && Do > 0,
          "conv3d non-positive output extent");

  Tensor<S> out = detail::make_out<S>({cout, Ho, Wo, Do});
  const S* xd = x.data();
  const S* kd = kernel.data();
  const S* bd = bias.defined() ? bias.data() : nullptr;
  S* od = out.mutable_data();
  const int64_t coutpg = cout / groups;
  const int64_t in_sl = H * W * D, out_sl = Ho * Wo * Do;

  if (stride == 1) {
    const int64_t Wp = W + 2 * pad, Dp = D + 2 * pad, Hp = H + 2 * pad;
    const int64_t plane = Wp * Dp;
    std::vector<S> xp = detail::pad_volume(xd, cin, H, W, D, pad, 0);
    // scratch rows padded to the input plane stride, so the whole channel is
    // one constant-shift run per (kh, kw); junk lanes are discarded below
    const int64_t run = (Ho - 1) * plane + (Wo - 1) * Dp + Do;
    parallel_for(0, cout, 1, [&](int64_t clo, int64_t chi) {
      const auto& KT = kern::active<S>();
      std::vector<S> outp(static_cast<size_t>(Ho * plane));
      for (int64_t co = clo; co < chi; ++co) {
        std::fill(outp.begin(), outp.end(), S(0));
        const int64_t g = co / coutpg;
        for (int64_t cl = 0; cl < cpg; ++cl) {
          const S* xpc = xp.data() + (g * cpg + cl) * Hp * plane;
          for (int64_t kh = 0; kh < k; ++kh)
            for (int64_t kw = 0; kw < k; ++kw)
              KT.stencil_acc(kd + (((co * cpg + cl) * k + kh) * k + kw) * k, k,
                             xpc + kh * plane + kw * Dp, outp.data(), run);
        }
        S* oc = od + co * out_sl;
        const S b = bd ? bd[co] : S(0);
        for (int64_t oh = 0; oh < Ho; ++oh)
          for (int64_t ow = 0; ow < Wo; ++ow)
            KT.affine(outp.data() + oh * plane + ow * Dp, S(1), b, oc + (oh * Wo + ow) * Do,
                      Do);
      }
    });
  } else {
    parallel_for(0, cout, 1, [&](int64_t clo, int64_t chi) {
      for (int64_t co = clo; co < chi; ++co) {
        S* oc = od + co * out_sl;
        if (bd)
          for (int64_t i = 0; i < out_sl; ++i) oc[i] = bd[co];
        const int64_t g = co / coutpg;
        for (int64_t cl = 0; cl < cpg; ++cl) {
          const S* xc = xd + (g * cpg + cl) * in_sl;
          for (int64_t kh = 0; kh < k; ++kh)
            for (int64_t kw = 0; kw < k; ++kw) {
              const S* wrow = kd + (((co * cpg + cl) * k + kh) * k + kw) * k;
              for (int64_t oh = 0; oh < Ho; ++oh) {
                const int64_t ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int64_t ow = 0; ow < Wo; ++ow) {
                  const int64_t iw = ow * stride - pad + kw;
                  if (iw < 0 || iw >= W) continue;
                  const S* xrow = xc + (ih * W + iw) * D;
                  S* orow = oc + (oh * Wo + ow) * Do;
                  for (int64_t odx = 0; odx < Do; ++odx) {
                    S t = orow[odx];
                    for (int64_t j = 0; j < k; ++j) {
                      const int64_t id = odx * stride - pad + j;
                      if (id >= 0 && id < D) t = t + wrow[j] * xrow[id];
                    }
                    orow[odx] = t;
                  }
                }
              }
            }
        }
      }
    });
  }
  check_finite(out, "conv3d");

  const bool need =
      bias.defined() ? tracing(tape, x, kernel, bias) : tracing(tape, x, kernel);
  if (need) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto ki = kernel.impl_ptr();
    auto biasi = bias.defined() ? bias.impl_ptr() : nullptr;
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [=]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      const S* xv = xi->data.data();
      const S* kv = ki->data.data();
      if (biasi && biasi->requires_grad) {
        biasi->ensure_grad();
        S* gb = biasi->grad.data();
        parallel_for(0, cout, 1, [&](int64_t lo, int64_t hi) {
          for (int64_t co = lo; co < hi; ++co) {
            S acc = S(0);
            const S* gc = g + co * out_sl;
            for (int64_t i = 0; i < out_sl; ++i) acc += gc[i];
            gb[co] += acc;
          }
        });
      }
      if (stride == 1) {
        const int64_t Wp = W + 2 * pad, Dp = D + 2 * pad, Hp = H + 2 * pad;
        const int64_t plane = Wp * Dp;
        if (ki->requires_grad) {
          // grad planes padded to the input plane stride (zero lanes) so one
          // pass covers the channel; zeros kill the junk-lane products
          ki->ensure_grad();
          S* gk = ki->grad.data();
          std::vector<S> xp = detail::pad_volume(xv, cin, H, W, D, pad, 0);
          std::vector<S> gp(static_cast<size_t>(cout * Ho * plane), S(0));
          parallel_for(0, cout * Ho, 4, [&](int64_t lo, int64_t hi) {
            for (int64_t t = lo; t < hi; ++t) {
              const S* src = g + t * Wo * Do;
              S* dst = gp.data() + t * plane;
              for (int64_t ow = 0; ow < Wo; ++ow)
                std::copy(src + ow * Do, src + (ow + 1) * Do, dst + ow * Dp);
            }
          });
          const int64_t run = (Ho - 1) * plane + (Wo - 1) * Dp + Do;
          parallel_for(0, cout, 1, [&](int64_t clo, int64_t chi) {
            std::vector<S> acc(static_cast<size_t>(k));
            for (int64_t co = clo; co < chi; ++co) {
              const int64_t grp = co / coutpg;
              const S* gpc = gp.data() + co * Ho * plane;
              for (int64_t cl = 0; cl < cpg; ++cl) {
                const S* xpc = xp.data() + (grp * cpg + cl) * Hp * plane;
                for (int64_t kh = 0; kh < k; ++kh)
                  for (int64_t kw = 0; kw < k; ++kw) {
                    std::fill(acc.begin(), acc.end(), S(0));
                    const S* xrow = xpc + kh * plane + kw * Dp;
                    for (int64_t t = 0; t < run; ++t) {
                      const S gv = gpc[t];
                      for (int64_t j = 0; j < k; ++j) acc[j] += xrow[t + j] * gv;
                    }
                    S* gkrow = gk + (((co * cpg + cl) * k + kh) * k + kw) * k;
                    for (int64_t j = 0; j < k; ++j) gkrow[j] += acc[j];
                  }
              }
            }
          });
        }
        if (xi->requires_grad) {
          // gather through grad planes padded by (k-1-pad), mirrored taps,
          // one whole-volume run per (co, kh, kw)
          xi->ensure_grad();
          S* gx = xi->grad.data();
          const int64_t pg = k - 1 - pad;
          const int64_t Hgp = Ho + 2 * pg, Wgp = Wo + 2 * pg, Dgp = Do + 2 * pg;
          const int64_t gplane = Wgp * Dgp;
          std::vector<S> gpad = detail::pad_volume(g, cout, Ho, Wo, Do, pg, 0);
          const int64_t run = (H - 1) * gplane + (W - 1) * Dgp + D;
          parallel_for(0, cin, 1, [&](int64_t clo, int64_t chi) {
            const auto& KT = kern::active<S>();
            std::vector<S> gxp(static_cast<size_t>(H * gplane));
            for (int64_t ci = clo; ci < chi; ++ci) {
              std::fill(gxp.begin(), gxp.end(), S(0));
              const int64_t grp = ci / cpg;
              const int64_t cl = ci - grp * cpg;
              for (int64_t co = grp * coutpg; co < (grp + 1) * coutpg; ++co) {
                const S* gpc = gpad.data() + co * Hgp * gplane;
                for (int64_t kh = 0; kh < k; ++kh)
                  for (int64_t kw = 0; kw < k; ++kw)
                    KT.stencil_acc_rev(kv + (((co * cpg + cl) * k + kh) * k + kw) * k, k,
                                       gpc + (k - 1 - kh) * gplane + (k - 1 - kw) * Dgp,
                                       gxp.data(), run);
              }
              S* gxc = gx + ci * in_sl;
              for (int64_t ih = 0; ih < H; ++ih)
                for (int64_t iw = 0; iw < W; ++iw)
                  KT.axpy(S(1), gxp.data() + ih * gplane + iw * Dgp, gxc + (ih * W + iw) * D,
                          D);
            }
          });
        }
      } else {
        if (ki->requires_grad) {
          ki->ensure_grad();
          S* gk = ki->grad.data();
          parallel_for(0, cout, 1, [&](int64_t clo, int64_t chi) {
            std::vector<S> acc(static_cast<size_t>(k));
            for (int64_t co = clo; co < chi; ++co) {
              const int64_t grp = co / coutpg;
              const S* gc = g + co * out_sl;
              for (int64_t cl = 0; cl < cpg; ++cl) {
                const S* xc = xv + (grp * cpg + cl) * in_sl;
                for (int64_t kh = 0; kh < k; ++kh)
                  for (int64_t kw = 0; kw < k; ++kw) {
                    std::fill(acc.begin(), acc.end(), S(0));
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                      const int64_t ih = oh * stride - pad + kh;
                      if (ih < 0 || ih >= H) continue;
                      for (int64_t ow = 0; ow < Wo; ++ow) {
                        const int64_t iw = ow * stride - pad + kw;
                        if (iw < 0 || iw >= W) continue;
                        const S* xrow = xc + (ih * W + iw) * D;
                        const S* grow = gc + (oh * Wo + ow) * Do;
                        for (int64_t odx = 0; odx < Do; ++odx) {
                          const S gv = grow[odx];
                          for (int64_t j = 0; j < k; ++j) {
                            const int64_t id = odx * stride - pad + j;
                            if (id >= 0 && id < D) acc[j] += xrow[id] * gv;
                          }
                        }
                      }
                    }
                    S* gkrow = gk + (((co * cpg + cl) * k + kh) * k + kw) * k;
                    for (int64_t j = 0; j < k; ++j) gkrow[j] += acc[j];
                  }
              }
            }
          });
        }
        if (xi->requires_grad) {
          xi->ensure_grad();
          S* gx = xi->grad.data();
          parallel_for(0, cin, 1, [&](int64_t clo, int64_t chi) {
            for (int64_t ci = clo; ci < chi; ++ci) {
              const int64_t grp = ci / cpg;
              const int64_t cl = ci - grp * cpg;
              S* gxc = gx + ci * in_sl;
              for (int64_t co = grp * coutpg; co < (grp + 1) * coutpg; ++co) {
                const S* gc = g + co * out_sl;
                for (int64_t kh = 0; kh < k; ++kh)
                  for (int64_t kw = 0; kw < k; ++kw) {
                    const S* wrow = kv + (((co * cpg + cl) * k + kh) * k + kw) * k;
                    for (int64_t ih = 0; ih < H; ++ih) {
                      const int64_t th = ih + pad - kh;
                      if (th % stride != 0) continue;
                      const int64_t oh = th / stride;
                      if (oh < 0 || oh >= Ho) continue;
                      for (int64_t iw = 0; iw < W; ++iw) {
                        const int64_t tw = iw + pad - kw;
                        if (tw % stride != 0) continue;
                        const int64_t ow = tw / stride;
                        if (ow < 0 || ow >= Wo) continue;
                        S* gxrow = gxc + (ih * W + iw) * D;
                        const S* grow = gc + (oh * Wo + ow) * Do;
                        for (int64_t id = 0; id < D; ++id) {
                          S t = gxrow[id];
                          for (int64_t j = 0; j < k; ++j) {
                            const int64_t td = id + pad - j;
                            if (td % stride != 0) continue;
                            const int64_t odx = td / stride;
                            if (odx >= 0 && odx < Do) t = t + wrow[j] * grow[odx];
                          }
                          gxrow[id] = t;
                        }
                      }
                    }
                  }
              }
            }
          });
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> conv3d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& kernel, int64_t stride,
                 int64_t pad, int64_t groups) {
  return conv3d(tape, x, kernel, Tensor<S>(), stride, pad, groups);
}

// ---------------------------------------------------------------------------
// normalizations
// ---------------------------------------------------------------------------

/// Layer normalization over the last axis (length must equal
/// normalized_extent). Statistics accumulate in double, eps sits inside the
/// square root.
template <typename S>
Tensor<S> layer_norm(Tape<S>* tape, const Tensor<S>& x, int64_t normalized_extent,
                     const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  require(x.dim() >= 1, "layer_norm needs rank >= 1");
  const int64_t c = x.extent(x.dim() - 1);
  require(c == normalized_extent, "layer_norm: last extent " + std::to_string(c) +
                                      " != normalized_extent " + std::to_string(normalized_extent));
  require(gamma.numel() == c && beta.numel() == c, "layer_norm gamma/beta extent mismatch");
  const int64_t rows = x.numel() / c;
  Tensor<S> out = detail::make_out<S>(x.shape());
  auto mus = std::make_shared<std::vector<S>>(rows);
  auto rstds = std::make_shared<std::vector<S>>(rows);
  const S* xd = x.data();
  const S* gd = gamma.data();
  const S* bd = beta.data();
  S* od = out.mutable_data();
  parallel_for(0, rows, 8, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) {
      const S* row = xd + r * c;
      double mu = 0.0;
      for (int64_t i = 0; i < c; ++i) mu += static_cast<double>(row[i]);
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (int64_t i = 0; i < c; ++i) {
        double dd = static_cast<double>(row[i]) - mu;
        var += dd * dd;
      }
      var /= static_cast<double>(c);
      const double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*mus)[r] = static_cast<S>(mu);
      (*rstds)[r] = static_cast<S>(rstd);
      kern::active<S>().norm_affine(row, gd, bd, (*mus)[r], (*rstds)[r], od + r * c, c);
    }
  });
  check_finite(out, "layer_norm");
  if (tracing(tape, x, gamma, beta)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto gi = gamma.impl_ptr();
    auto bi = beta.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [=]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      const S* xv = xi->data.data();
      const S* gv = gi->data.data();
      if (xi->requires_grad) {
        xi->ensure_grad();
        S* gx = xi->grad.data();
        parallel_for(0, rows, 8, [&](int64_t lo, int64_t hi) {
          std::vector<S> xh(c);
          for (int64_t r = lo; r < hi; ++r) {
            const S* row = xv + r * c;
            const S* grow = g + r * c;
            const S mu = (*mus)[r], rstd = (*rstds)[r];
            double m1 = 0.0, m2 = 0.0;
            for (int64_t i = 0; i < c; ++i) {
              xh[i] = (row[i] - mu) * rstd;
              const double gg = static_cast<double>(grow[i]) * static_cast<double>(gv[i]);
              m1 += gg;
              m2 += gg * static_cast<double>(xh[i]);
            }
            m1 /= static_cast<double>(c);
            m2 /= static_cast<double>(c);
            S* gxrow = gx + r * c;
            for (int64_t i = 0; i < c; ++i) {
              const double gg = static_cast<double>(grow[i]) * static_cast<double>(gv[i]);
              gxrow[i] += static_cast<S>(static_cast<double>(rstd) *
                                         (gg - m1 - static_cast<double>(xh[i]) * m2));
            }
          }
        });
      }
      if (gi->requires_grad || bi->requires_grad) {
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        std::vector<double> gga(c, 0.0), gba(c, 0.0);
        for (int64_t r = 0; r < rows; ++r) {
          const S* row = xv + r * c;
          const S* grow = g + r * c;
          const S mu = (*mus)[r], rstd = (*rstds)[r];
          for (int64_t i = 0; i < c; ++i) {
            gga[i] += static_cast<double>(grow[i]) * static_cast<double>((row[i] - mu) * rstd);
            gba[i] += static_cast<double>(grow[i]);
          }
        }
        for (int64_t i = 0; i < c; ++i) {
          if (gi->requires_grad) gi->grad[i] += static_cast<S>(gga[i]);
          if (bi->requires_grad) bi->grad[i] += static_cast<S>(gba[i]);
        }
      }
    });
  }
  return out;
}

/// Per-channel normalization over the spatial axes of [C, ...] with scalar
/// gamma/beta per channel.
template <typename S>
Tensor<S> instance_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                        const Tensor<S>& beta, S eps) {
  require(x.dim() >= 2, "instance_norm needs rank >= 2");
  const int64_t c = x.extent(0);
  const int64_t sp = x.numel() / c;
  require(gamma.numel() == c && beta.numel() == c, "instance_norm gamma/beta extent mismatch");
  Tensor<S> out = detail::make_out<S>(x.shape());
  auto mus = std::make_shared<std::vector<S>>(c);
  auto rstds = std::make_shared<std::vector<S>>(c);
  const S* xd = x.data();
  const S* gd = gamma.data();
  const S* bd = beta.data();
  S* od = out.mutable_data();
  parallel_for(0, c, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t ch = lo; ch < hi; ++ch) {
      const S* row = xd + ch * sp;
      double mu = 0.0;
      for (int64_t i = 0; i < sp; ++i) mu += static_cast<double>(row[i]);
      mu /= static_cast<double>(sp);
      double var = 0.0;
      for (int64_t i = 0; i < sp; ++i) {
        double dd = static_cast<double>(row[i]) - mu;
        var += dd * dd;
      }
      var /= static_cast<double>(sp);
      const double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*mus)[ch] = static_cast<S>(mu);
      (*rstds)[ch] = static_cast<S>(rstd);
      const S a = static_cast<S>(rstd) * gd[ch];
      const S cc = bd[ch] - (*mus)[ch] * a;
      kern::active<S>().affine(row, a, cc, od + ch * sp, sp);
    }
  });
  check_finite(out, "instance_norm");
  if (tracing(tape, x, gamma, beta)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto gi = gamma.impl_ptr();
    auto bi = beta.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [=]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      const S* xv = xi->data.data();
      const S* gv = gi->data.data();
      if (gi->requires_grad) gi->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      if (xi->requires_grad) xi->ensure_grad();
      parallel_for(0, c, 1, [&](int64_t lo, int64_t hi) {
        for (int64_t ch = lo; ch < hi; ++ch) {
          const S* row = xv + ch * sp;
          const S* grow = g + ch * sp;
          const S mu = (*mus)[ch], rstd = (*rstds)[ch];
          double m1 = 0.0, m2 = 0.0, sgx = 0.0, sg = 0.0;
          for (int64_t i = 0; i < sp; ++i) {
            const double xh = static_cast<double>((row[i] - mu) * rstd);
            const double gg = static_cast<double>(grow[i]) * static_cast<double>(gv[ch]);
            m1 += gg;
            m2 += gg * xh;
            sgx += static_cast<double>(grow[i]) * xh;
            sg += static_cast<double>(grow[i]);
          }
          m1 /= static_cast<double>(sp);
          m2 /= static_cast<double>(sp);
          if (xi->requires_grad) {
            S* gxrow = xi->grad.data() + ch * sp;
            for (int64_t i = 0; i < sp; ++i) {
              const double xh = static_cast<double>((row[i] - mu) * rstd);
              const double gg = static_cast<double>(grow[i]) * static_cast<double>(gv[ch]);
              gxrow[i] += static_cast<S>(static_cast<double>(rstd) * (gg - m1 - xh * m2));
            }
          }
          if (gi->requires_grad) gi->grad[ch] += static_cast<S>(sgx);
          if (bi->requires_grad) bi->grad[ch] += static_cast<S>(sg);
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// trilinear resize
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
struct AxisLerp {
  std::vector<int64_t> i0, i1;
  std::vector<S> w;  // weight of i1
};

template <typename S>
AxisLerp<S> axis_lerp(int64_t in, int64_t out) {
  AxisLerp<S> m;
  m.i0.resize(out);
  m.i1.resize(out);
  m.w.resize(out);
  const double s = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * s - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t i0 = static_cast<int64_t>(src);
    if (i0 >= in - 1) {
      m.i0[o] = in - 1;
      m.i1[o] = in - 1;
      m.w[o] = S(0);
    } else {
      m.i0[o] = i0;
      m.i1[o] = i0 + 1;
      m.w[o] = static_cast<S>(src - static_cast<double>(i0));
    }
  }
  return m;
}

}  // namespace detail

/// Separable trilinear interpolation to the target extents, align_corners =
/// false convention: samples at (i + 0.5) * scale - 0.5, clamped.
template <typename S>
Tensor<S> trilinear_resize(Tape<S>* tape, const Tensor<S>& x,
                           std::array<int64_t, 3> target) {
  require(x.dim() == 4, "trilinear_resize input must be [C,H,W,D]");
  require(target[0] > 0 && target[1] > 0 && target[2] > 0,
          "trilinear_resize target extents must be positive");
  const int64_t c = x.extent(0), H = x.extent(1), W = x.extent(2), D = x.extent(3);
  const int64_t Ho = target[0], Wo = target[1], Do = target[2];
  auto mh = std::make_shared<detail::AxisLerp<S>>(detail::axis_lerp<S>(H, Ho));
  auto mw = std::make_shared<detail::AxisLerp<S>>(detail::axis_lerp<S>(W, Wo));
  auto md = std::make_shared<detail::AxisLerp<S>>(detail::axis_lerp<S>(D, Do));
  Tensor<S> out = detail::make_out<S>({c, Ho, Wo, Do});
  const S* xd = x.data();
  S* od = out.mutable_data();
  parallel_for(0, c * Ho, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t ch = t / Ho, oh = t % Ho;
      const S* xc = xd + ch * H * W * D;
      S* orow = od + t * Wo * Do;
      const int64_t h0 = mh->i0[oh], h1 = mh->i1[oh];
      const S wh1 = mh->w[oh], wh0 = S(1) - wh1;
      for (int64_t ow = 0; ow < Wo; ++ow) {
        const int64_t w0 = mw->i0[ow], w1 = mw->i1[ow];
        const S ww1 = mw->w[ow], ww0 = S(1) - ww1;
        for (int64_t odx = 0; odx < Do; ++odx) {
          const int64_t d0 = md->i0[odx], d1 = md->i1[odx];
          const S wd1 = md->w[odx], wd0 = S(1) - wd1;
          S acc = S(0);
          acc += xc[(h0 * W + w0) * D + d0] * (wh0 * ww0 * wd0);
          acc += xc[(h0 * W + w0) * D + d1] * (wh0 * ww0 * wd1);
          acc += xc[(h0 * W + w1) * D + d0] * (wh0 * ww1 * wd0);
          acc += xc[(h0 * W + w1) * D + d1] * (wh0 * ww1 * wd1);
          acc += xc[(h1 * W + w0) * D + d0] * (wh1 * ww0 * wd0);
          acc += xc[(h1 * W + w0) * D + d1] * (wh1 * ww0 * wd1);
          acc += xc[(h1 * W + w1) * D + d0] * (wh1 * ww1 * wd0);
          acc += xc[(h1 * W + w1) * D + d1] * (wh1 * ww1 * wd1);
          orow[ow * Do + odx] = acc;
        }
      }
    }
  });
  check_finite(out, "trilinear_resize");
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [=]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S* g = oi->grad.data();
      S* gx = xi->grad.data();
      parallel_for(0, c, 1, [&](int64_t lo, int64_t hi) {
        for (int64_t ch = lo; ch < hi; ++ch) {
          S* gxc = gx + ch * H * W * D;
          const S* gc = g + ch * Ho * Wo * Do;
          for (int64_t oh = 0; oh < Ho; ++oh) {
            const int64_t h0 = mh->i0[oh], h1 = mh->i1[oh];
            const S wh1 = mh->w[oh], wh0 = S(1) - wh1;
            for (int64_t ow = 0; ow < Wo; ++ow) {
              const int64_t w0 = mw->i0[ow], w1 = mw->i1[ow];
              const S ww1 = mw->w[ow], ww0 = S(1) - ww1;
              for (int64_t odx = 0; odx < Do; ++odx) {
                const int64_t d0 = md->i0[odx], d1 = md->i1[odx];
                const S wd1 = md->w[odx], wd0 = S(1) - wd1;
                const S gg = gc[(oh * Wo + ow) * Do + odx];
                gxc[(h0 * W + w0) * D + d0] += gg * (wh0 * ww0 * wd0);
                gxc[(h0 * W + w0) * D + d1] += gg * (wh0 * ww0 * wd1);
                gxc[(h0 * W + w1) * D + d0] += gg * (wh0 * ww1 * wd0);
                gxc[(h0 * W + w1) * D + d1] += gg * (wh0 * ww1 * wd1);
                gxc[(h1 * W + w0) * D + d0] += gg * (wh1 * ww0 * wd0);
                gxc[(h1 * W + w0) * D + d1] += gg * (wh1 * ww0 * wd1);
                gxc[(h1 * W + w1) * D + d0] += gg * (wh1 * ww1 * wd0);
                gxc[(h1 * W + w1) * D + d1] += gg * (wh1 * ww1 * wd1);
              }
            }
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(Tape<S>* tape, const Tensor<S>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape element count mismatch");
  Tensor<S> out = Tensor<S>::from_data(std::move(shape), x.values());
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    const int64_t n = x.numel();
    tape->record(oi.get(), [xi, oi, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S* g = oi->grad.data();
      S* gx = xi->grad.data();
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        kern::active<S>().axpy(S(1), g + lo, gx + lo, hi - lo);
      });
    });
  }
  return out;
}

namespace detail {

template <typename S>
void permute_raw(const S* in, const Shape& in_shape, const std::vector<int64_t>& axes,
                 S* out) {
  const int64_t rank = static_cast<int64_t>(in_shape.size());
  std::vector<int64_t> in_strides(rank, 1);
  for (int64_t i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  Shape out_shape(rank);
  for (int64_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<int64_t> strides_for_out(rank);  // input stride per output axis
  for (int64_t i = 0; i < rank; ++i) strides_for_out[i] = in_strides[axes[i]];
  int64_t n = 1;
  for (int64_t e : out_shape) n *= e;
  parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
    std::vector<int64_t> coord(rank);
    for (int64_t o = lo; o < hi; ++o) {
      int64_t rem = o;
      int64_t src = 0;
      for (int64_t i = rank - 1; i >= 0; --i) {
        coord[i] = rem % out_shape[i];
        rem /= out_shape[i];
        src += coord[i] * strides_for_out[i];
      }
      out[o] = in[src];
    }
  });
}

}  // namespace detail

/// Axis permutation; backward applies the inverse permutation, so the pair
/// is an exact bijection.
template <typename S>
Tensor<S> permute(Tape<S>* tape, const Tensor<S>& x, std::vector<int64_t> axes) {
  const int64_t rank = x.dim();
  require(static_cast<int64_t>(axes.size()) == rank, "permute axes rank mismatch");
  std::vector<bool> seen(rank, false);
  for (int64_t a : axes) {
    require(a >= 0 && a < rank && !seen[a], "permute axes must be a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (int64_t i = 0; i < rank; ++i) out_shape[i] = x.extent(axes[i]);
  Tensor<S> out = detail::make_out<S>(out_shape);
  detail::permute_raw(x.data(), x.shape(), axes, out.mutable_data());
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    std::vector<int64_t> inv(rank);
    for (int64_t i = 0; i < rank; ++i) inv[axes[i]] = i;
    tape->record(oi.get(), [xi, oi, inv, out_shape]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      std::vector<S> tmp(oi->grad.size());
      detail::permute_raw(oi->grad.data(), out_shape, inv, tmp.data());
      S* gx = xi->grad.data();
      const int64_t n = static_cast<int64_t>(tmp.size());
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        kern::active<S>().axpy(S(1), tmp.data() + lo, gx + lo, hi - lo);
      });
    });
  }
  return out;
}

/// Gather through a bijective index map: out.flat[i] = x.flat[fwd[i]].
/// Backward scatters through the inverse map, collision-free.
template <typename S>
Tensor<S> take_bijection(Tape<S>* tape, const Tensor<S>& x,
                         std::shared_ptr<const std::vector<int64_t>> fwd,
                         std::shared_ptr<const std::vector<int64_t>> inv, Shape out_shape) {
  const int64_t n = x.numel();
  require(static_cast<int64_t>(fwd->size()) == n && static_cast<int64_t>(inv->size()) == n &&
              shape_numel(out_shape) == n,
          "take_bijection: map sizes must match element count");
  Tensor<S> out = detail::make_out<S>(std::move(out_shape));
  const S* xd = x.data();
  S* od = out.mutable_data();
  const int64_t* f = fwd->data();
  parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) od[i] = xd[f[i]];
  });
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, oi, inv, n]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      const S* g = oi->grad.data();
      S* gx = xi->grad.data();
      const int64_t* iv = inv->data();
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        for (int64_t j = lo; j < hi; ++j) gx[j] += g[iv[j]];
      });
    });
  }
  return out;
}

/// Tile a [1, ...] tensor to [count, ...]. Backward sums over the tiled axis
/// in index order.
template <typename S>
Tensor<S> repeat_channels(Tape<S>* tape, const Tensor<S>& x, int64_t count) {
  require(x.dim() >= 1 && x.extent(0) == 1, "repeat_channels expects leading extent 1");
  const int64_t sp = x.numel();
  Shape out_shape = x.shape();
  out_shape[0] = count;
  Tensor<S> out = detail::make_out<S>(std::move(out_shape));
  const S* xd = x.data();
  S* od = out.mutable_data();
  parallel_for(0, count, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t ch = lo; ch < hi; ++ch) std::copy(xd, xd + sp, od + ch * sp);
  });
  if (tracing(tape, x)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, oi, count, sp]() {
      if (oi->grad.empty() || !xi->requires_grad) return;
      xi->ensure_grad();
      S* gx = xi->grad.data();
      const S* g = oi->grad.data();
      for (int64_t ch = 0; ch < count; ++ch)
        parallel_for(0, sp, 8192, [&](int64_t lo, int64_t hi) {
          kern::active<S>().axpy(S(1), g + ch * sp + lo, gx + lo, hi - lo);
        });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bias adds
// ---------------------------------------------------------------------------

/// x: [C, ...], b: [C] -> out[c, ...] = x[c, ...] + b[c]
template <typename S>
Tensor<S> add_bias_ch0(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& b) {
  require(x.dim() >= 1 && b.numel() == x.extent(0), "add_bias_ch0 extent mismatch");
  const int64_t c = x.extent(0);
  const int64_t sp = x.numel() / c;
  Tensor<S> out = detail::make_out<S>(x.shape());
  const S* xd = x.data();
  const S* bd = b.data();
  S* od = out.mutable_data();
  parallel_for(0, c, 1, [&](int64_t lo, int64_t hi) {
    for (int64_t ch = lo; ch < hi; ++ch)
      kern::active<S>().affine(xd + ch * sp, S(1), bd[ch], od + ch * sp, sp);
  });
  check_finite(out, "add_bias_ch0");
  if (tracing(tape, x, b)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto bi = b.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, bi, oi, c, sp]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      if (xi->requires_grad) {
        xi->ensure_grad();
        S* gx = xi->grad.data();
        parallel_for(0, c * sp, 8192, [&](int64_t lo, int64_t hi) {
          kern::active<S>().axpy(S(1), g + lo, gx + lo, hi - lo);
        });
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        S* gb = bi->grad.data();
        parallel_for(0, c, 1, [&](int64_t lo, int64_t hi) {
          for (int64_t ch = lo; ch < hi; ++ch) {
            double acc = 0.0;
            const S* gc = g + ch * sp;
            for (int64_t i = 0; i < sp; ++i) acc += static_cast<double>(gc[i]);
            gb[ch] += static_cast<S>(acc);
          }
        });
      }
    });
  }
  return out;
}

/// x: [..., C], b: [C] -> out[..., c] = x[..., c] + b[c]
template <typename S>
Tensor<S> add_bias_last(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& b) {
  require(x.dim() >= 1 && b.numel() == x.extent(x.dim() - 1), "add_bias_last extent mismatch");
  const int64_t c = x.extent(x.dim() - 1);
  const int64_t rows = x.numel() / c;
  Tensor<S> out = detail::make_out<S>(x.shape());
  const S* xd = x.data();
  const S* bd = b.data();
  S* od = out.mutable_data();
  parallel_for(0, rows, 8, [&](int64_t lo, int64_t hi) {
    for (int64_t r = lo; r < hi; ++r) kern::active<S>().add(xd + r * c, bd, od + r * c, c);
  });
  check_finite(out, "add_bias_last");
  if (tracing(tape, x, b)) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr();
    auto bi = b.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [xi, bi, oi, c, rows]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      if (xi->requires_grad) {
        xi->ensure_grad();
        S* gx = xi->grad.data();
        parallel_for(0, rows * c, 8192, [&](int64_t lo, int64_t hi) {
          kern::active<S>().axpy(S(1), g + lo, gx + lo, hi - lo);
        });
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        std::vector<double> acc(c, 0.0);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < c; ++i) acc[i] += static_cast<double>(g[r * c + i]);
        for (int64_t i = 0; i < c; ++i) bi->grad[i] += static_cast<S>(acc[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// binary cross-entropy on logits
// ---------------------------------------------------------------------------

/// Mean of max(z,0) - z*t + log1p(exp(-|z|)) over all elements; numerically
/// stable for large |z|. The target carries no gradient.
template <typename S>
Tensor<S> bce_with_logits_mean(Tape<S>* tape, const Tensor<S>& logits,
                               const Tensor<S>& target) {
  require(logits.shape() == target.shape(), "bce_with_logits shape mismatch");
  const int64_t n = logits.numel();
  const S* z = logits.data();
  const S* t = target.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double zd = static_cast<double>(z[i]);
    acc += std::max(zd, 0.0) - zd * static_cast<double>(t[i]) +
           std::log1p(std::exp(-std::abs(zd)));
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  check_finite(out, "bce_with_logits_mean");
  if (tracing(tape, logits)) {
    out.set_requires_grad(true);
    auto zi = logits.impl_ptr();
    auto ti = target.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [zi, ti, oi, n]() {
      if (oi->grad.empty() || !zi->requires_grad) return;
      zi->ensure_grad();
      const S g = oi->grad[0];
      const S inv_n = static_cast<S>(1.0 / static_cast<double>(n));
      const S* zv = zi->data.data();
      const S* tv = ti->data.data();
      S* gz = zi->grad.data();
      parallel_for(0, n, 8192, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i)
          gz[i] += g * (detail::stable_sigmoid(zv[i]) - tv[i]) * inv_n;
      });
    });
  }
  return out;
}

}  // namespace srma
