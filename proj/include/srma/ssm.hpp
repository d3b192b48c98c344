#pragma once

#include "srma/ops.hpp"

// S6 selective scan: input-dependent discretized linear state-space
// recurrence. Per step t, channel c, state n:
//   delta[t,c] = softplus(dt_proj(u_t))_c          (always > 0)
//   Abar       = exp(delta[t,c] * A[c,n])          (A < 0, so Abar in (0,1))
//   h[t,c,n]   = Abar * h[t-1,c,n] + delta[t,c] * B[t,n] * u[t,c]
//   y[t,c]     = sum_n C[t,n] * h[t,c,n] + D[c] * u[t,c]
// ZOH discretization on the state path, Euler on the input path, matching
// the usual S6 convention.

namespace srma {

/// Learned parameters of one selective scan over d channels with state
/// dimension n. The state matrix is stored as log magnitude; the effective
/// A = -exp(a_log) is strictly negative. The delta projection is low-rank
/// (d -> r -> d) with bias, followed by softplus.
template <typename S>
struct SsmParams {
  Tensor<S> a_log;    // [d, n]
  Tensor<S> d_skip;   // [d]
  Tensor<S> dt_in;    // [d, r]
  Tensor<S> dt_out;   // [r, d]
  Tensor<S> dt_bias;  // [d]
  Tensor<S> b_proj;   // [d, n]
  Tensor<S> c_proj;   // [d, n]
  int64_t d = 0, n = 0, r = 0;
};

inline int64_t dt_rank_for(int64_t d) { return std::max<int64_t>(1, (d + 15) / 16); }

/// Stable defaults: A_{c,n} = -(n+1) (S4D-real pattern), D = 1, delta bias
/// set so softplus lands log-uniformly in [1e-3, 1e-1].
template <typename S>
SsmParams<S> init_ssm_params(int64_t d, int64_t n, Rng& rng) {
  SsmParams<S> p;
  p.d = d;
  p.n = n;
  p.r = dt_rank_for(d);
  {
    std::vector<S> a(static_cast<size_t>(d * n));
    for (int64_t c = 0; c < d; ++c)
      for (int64_t j = 0; j < n; ++j)
        a[c * n + j] = static_cast<S>(std::log(static_cast<double>(j + 1)));
    p.a_log = Tensor<S>::from_data({d, n}, std::move(a));
  }
  p.d_skip = Tensor<S>::filled({d}, S(1));
  const double s_in = std::sqrt(1.0 / static_cast<double>(d));
  p.dt_in = Tensor<S>::uniform({d, p.r}, rng, -s_in, s_in);
  const double s_out = std::sqrt(1.0 / static_cast<double>(p.r));
  p.dt_out = Tensor<S>::uniform({p.r, d}, rng, -s_out, s_out);
  {
    std::vector<S> b(static_cast<size_t>(d));
    for (int64_t c = 0; c < d; ++c) {
      const double dt = rng.log_uniform(1e-3, 1e-1);
      // inverse softplus so that softplus(bias) == dt
      b[c] = static_cast<S>(std::log(std::expm1(dt)));
    }
    p.dt_bias = Tensor<S>::from_data({d}, std::move(b));
  }
  const double s_bc = std::sqrt(1.0 / static_cast<double>(d));
  p.b_proj = Tensor<S>::uniform({d, n}, rng, -s_bc, s_bc);
  p.c_proj = Tensor<S>::uniform({d, n}, rng, -s_bc, s_bc);
  return p;
}

namespace detail {

// A transposed to [n, d] so each state row is contiguous over channels.
template <typename S>
std::vector<S> transpose_dn(const S* a, int64_t d, int64_t n) {
  std::vector<S> at(static_cast<size_t>(d * n));
  for (int64_t c = 0; c < d; ++c)
    for (int64_t j = 0; j < n; ++j) at[j * d + c] = a[c * n + j];
  return at;
}

/// Forward recurrence for channels [c_lo, c_hi). When keep_h/keep_e are
/// given they receive h and exp(delta*A) for every step ([L, n, d] layout).
template <typename S>
void scan_sweep(const S* u, const S* delta, const S* b, const S* c, const S* at,
                const S* dskip, int64_t L, int64_t d, int64_t n, int64_t c_lo, int64_t c_hi,
                S* y, S* keep_h, S* keep_e) {
  const int64_t w = c_hi - c_lo;
  std::vector<S> h(static_cast<size_t>(n * w), S(0));
  std::vector<S> e_row(static_cast<size_t>(w));
  std::vector<S> dtu(static_cast<size_t>(w));
  for (int64_t t = 0; t < L; ++t) {
    const S* ut = u + t * d + c_lo;
    const S* dt = delta + t * d + c_lo;
    S* yt = y + t * d + c_lo;
    kern::active<S>().mul(dt, ut, dtu.data(), w);
    for (int64_t i = 0; i < w; ++i) yt[i] = S(0);
    for (int64_t j = 0; j < n; ++j) {
      const S* arow = at + j * d + c_lo;
      for (int64_t i = 0; i < w; ++i) e_row[i] = std::exp(dt[i] * arow[i]);
      kern::active<S>().scan_step(e_row.data(), dtu.data(), b[t * n + j], c[t * n + j],
                                  h.data() + j * w, yt, w);
      if (keep_h) {
        S* dst = keep_h + (t * n + j) * d + c_lo;
        std::copy(h.data() + j * w, h.data() + j * w + w, dst);
      }
      if (keep_e) {
        S* dst = keep_e + (t * n + j) * d + c_lo;
        std::copy(e_row.data(), e_row.data() + w, dst);
      }
    }
    kern::active<S>().mul_acc(dskip + c_lo, ut, yt, w);
  }
}

}  // namespace detail

/// Core recurrence with explicit delta/B/C/A/D inputs (the projections live
/// in selective_scan). u, delta: [L,d]; b, c: [L,n]; a: [d,n] (negative
/// entries); dskip: [d]. Returns y: [L,d].
template <typename S>
Tensor<S> scan_core(Tape<S>* tape, const Tensor<S>& u, const Tensor<S>& delta,
                    const Tensor<S>& b, const Tensor<S>& c, const Tensor<S>& a,
                    const Tensor<S>& dskip) {
  require(u.dim() == 2 && delta.shape() == u.shape(), "scan_core: u/delta must be [L,d]");
  const int64_t L = u.extent(0), d = u.extent(1);
  require(b.dim() == 2 && c.dim() == 2 && b.extent(0) == L && c.extent(0) == L,
          "scan_core: b/c must be [L,n]");
  const int64_t n = b.extent(1);
  require(c.extent(1) == n, "scan_core: b/c state extent mismatch");
  require(a.dim() == 2 && a.extent(0) == d && a.extent(1) == n, "scan_core: a must be [d,n]");
  require(dskip.numel() == d, "scan_core: dskip must be [d]");

  Tensor<S> y = detail::make_out<S>({L, d});
  auto at = std::make_shared<std::vector<S>>(detail::transpose_dn(a.data(), d, n));
  {
    const S* ud = u.data();
    const S* dd = delta.data();
    const S* bd = b.data();
    const S* cd = c.data();
    const S* sk = dskip.data();
    S* yd = y.mutable_data();
    parallel_for(0, d, 16, [&](int64_t lo, int64_t hi) {
      detail::scan_sweep(ud, dd, bd, cd, at->data(), sk, L, d, n, lo, hi, yd, (S*)nullptr,
                         (S*)nullptr);
    });
  }
  check_finite(y, "scan_core");

  if (tracing(tape, u, delta, b, c, a, dskip)) {
    y.set_requires_grad(true);
    auto ui = u.impl_ptr();
    auto di = delta.impl_ptr();
    auto bi = b.impl_ptr();
    auto ci = c.impl_ptr();
    auto ai = a.impl_ptr();
    auto ski = dskip.impl_ptr();
    auto yi = y.impl_ptr();
    tape->record(yi.get(), [=]() {
      if (yi->grad.empty()) return;
      const S* gy = yi->grad.data();
      const S* ud = ui->data.data();
      const S* dd = di->data.data();
      const S* bd = bi->data.data();
      const S* cd = ci->data.data();
      const S* ad = ai->data.data();
      const S* sk = ski->data.data();

      // Recompute the forward state trajectory; nothing was cached.
      std::vector<S> H(static_cast<size_t>(L * n * d));
      std::vector<S> E(static_cast<size_t>(L * n * d));
      std::vector<S> Yscratch(static_cast<size_t>(L * d));
      parallel_for(0, d, 16, [&](int64_t lo, int64_t hi) {
        detail::scan_sweep(ud, dd, bd, cd, at->data(), sk, L, d, n, lo, hi, Yscratch.data(),
                           H.data(), E.data());
      });

      std::vector<S> GH(static_cast<size_t>(L * n * d));
      std::vector<S> gu_loc, gd_loc, ga_loc, gsk_loc;
      const bool need_u = ui->requires_grad;
      const bool need_d = di->requires_grad;
      const bool need_a = ai->requires_grad;
      const bool need_sk = ski->requires_grad;
      if (need_u) gu_loc.assign(static_cast<size_t>(L * d), S(0));
      if (need_d) gd_loc.assign(static_cast<size_t>(L * d), S(0));
      if (need_a) ga_loc.assign(static_cast<size_t>(d * n), S(0));
      if (need_sk) gsk_loc.assign(static_cast<size_t>(d), S(0));

      // Reverse-time adjoint, one channel range per task. gh recurrence:
      // gh_t = C_t * gy_t + E_{t+1} (.) gh_{t+1}
      parallel_for(0, d, 16, [&](int64_t c_lo, int64_t c_hi) {
        const int64_t w = c_hi - c_lo;
        std::vector<S> carry(static_cast<size_t>(n * w), S(0));
        for (int64_t t = L - 1; t >= 0; --t) {
          const S* gyt = gy + t * d + c_lo;
          const S* ut = ud + t * d + c_lo;
          const S* dt = dd + t * d + c_lo;
          for (int64_t j = 0; j < n; ++j) {
            const S bt = bd[t * n + j];
            const S ct = cd[t * n + j];
            const S* Et = E.data() + (t * n + j) * d + c_lo;
            const S* Hprev = t > 0 ? H.data() + ((t - 1) * n + j) * d + c_lo : nullptr;
            S* gh = GH.data() + (t * n + j) * d + c_lo;
            S* cr = carry.data() + j * w;
            for (int64_t i = 0; i < w; ++i) {
              const S ghv = ct * gyt[i] + cr[i];
              gh[i] = ghv;
              const S hprev = Hprev ? Hprev[i] : S(0);
              if (need_a)
                ga_loc[(c_lo + i) * n + j] += ghv * hprev * Et[i] * dt[i];
              if (need_d)
                gd_loc[t * d + c_lo + i] +=
                    ghv * (hprev * Et[i] * ad[(c_lo + i) * n + j] + bt * ut[i]);
              if (need_u) gu_loc[t * d + c_lo + i] += ghv * dt[i] * bt;
              cr[i] = Et[i] * ghv;
            }
          }
          if (need_u || need_sk) {
            for (int64_t i = 0; i < w; ++i) {
              if (need_u) gu_loc[t * d + c_lo + i] += sk[c_lo + i] * gyt[i];
              if (need_sk) gsk_loc[c_lo + i] += gyt[i] * ut[i];
            }
          }
        }
      });

      if (need_u) {
        ui->ensure_grad();
        kern::active<S>().axpy(S(1), gu_loc.data(), ui->grad.data(), L * d);
      }
      if (need_d) {
        di->ensure_grad();
        kern::active<S>().axpy(S(1), gd_loc.data(), di->grad.data(), L * d);
      }
      if (need_a) {
        ai->ensure_grad();
        kern::active<S>().axpy(S(1), ga_loc.data(), ai->grad.data(), d * n);
      }
      if (need_sk) {
        ski->ensure_grad();
        kern::active<S>().axpy(S(1), gsk_loc.data(), ski->grad.data(), d);
      }
      // gB/gC reduce over channels; parallelized over time so the per-(t,n)
      // channel accumulation order is fixed.
      if (bi->requires_grad || ci->requires_grad) {
        if (bi->requires_grad) bi->ensure_grad();
        if (ci->requires_grad) ci->ensure_grad();
        S* gb = bi->requires_grad ? bi->grad.data() : nullptr;
        S* gc = ci->requires_grad ? ci->grad.data() : nullptr;
        parallel_for(0, L, 4, [&](int64_t lo, int64_t hi) {
          for (int64_t t = lo; t < hi; ++t)
            for (int64_t j = 0; j < n; ++j) {
              const S* gh = GH.data() + (t * n + j) * d;
              const S* Ht = H.data() + (t * n + j) * d;
              double accb = 0.0, accc = 0.0;
              for (int64_t i = 0; i < d; ++i) {
                if (gb) accb += static_cast<double>(gh[i]) * static_cast<double>(dd[t * d + i]) *
                                static_cast<double>(ud[t * d + i]);
                if (gc)
                  accc += static_cast<double>(gy[t * d + i]) * static_cast<double>(Ht[i]);
              }
              if (gb) gb[t * n + j] += static_cast<S>(accb);
              if (gc) gc[t * n + j] += static_cast<S>(accc);
            }
        });
      }
    });
  }
  return y;
}

/// Full selective scan: input-dependent delta/B/C from u through the stored
/// projections, then the core recurrence.
template <typename S>
Tensor<S> selective_scan(Tape<S>* tape, const Tensor<S>& u, const SsmParams<S>& p) {
  require(u.dim() == 2 && u.extent(1) == p.d, "selective_scan: u must be [L,d]");
  Tensor<S> dt_pre =
      add_bias_last(tape, matmul(tape, matmul(tape, u, p.dt_in), p.dt_out), p.dt_bias);
  Tensor<S> delta = softplus(tape, dt_pre);
  Tensor<S> b = matmul(tape, u, p.b_proj);
  Tensor<S> c = matmul(tape, u, p.c_proj);
  Tensor<S> a = neg(tape, exp(tape, p.a_log));
  return scan_core(tape, u, delta, b, c, a, p.d_skip);
}

}  // namespace srma
