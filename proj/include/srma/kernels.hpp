#pragma once

#include <cstdint>
#include <string>

namespace srma::kern {

/// Flat elementwise kernels behind the tensor ops. Every entry is purely
/// elementwise (no cross-element reductions), so the AVX2 variants round
/// identically to the scalar references and results are independent of the
/// selected variant. Reductions are expressed by the callers as repeated
/// axpy passes over output buffers, which keeps the per-element accumulation
/// order fixed.
template <typename S>
struct Table {
  void (*add)(const S* a, const S* b, S* out, int64_t n);
  void (*mul)(const S* a, const S* b, S* out, int64_t n);
  void (*neg)(const S* a, S* out, int64_t n);
  void (*scale)(const S* a, S c, S* out, int64_t n);  // out = c*a
  void (*axpy)(S a, const S* x, S* y, int64_t n);     // y += a*x
  void (*mul_acc)(const S* a, const S* b, S* out, int64_t n);  // out += a*b
  void (*affine)(const S* x, S a, S c, S* out, int64_t n);     // out = a*x + c
  // out = (x - mu) * inv * gamma + beta
  void (*norm_affine)(const S* x, const S* gamma, const S* beta, S mu, S inv, S* out,
                      int64_t n);
  // h = e*h + b*dtu; y += c*h   (one state row of the selective scan)
  void (*scan_step)(const S* e, const S* dtu, S b, S c, S* h, S* y, int64_t n);
  // y[i] += sum_t w[t]*x[i+t], t ascending, one rounding per term (the
  // fused form of k consecutive axpy passes)
  void (*stencil_acc)(const S* w, int64_t k, const S* x, S* y, int64_t n);
  // y[i] += sum_t w[t]*x[i+k-1-t], t ascending (mirrored offsets)
  void (*stencil_acc_rev)(const S* w, int64_t k, const S* x, S* y, int64_t n);
  // index of the first NaN/Inf, or -1 when all finite
  int64_t (*find_nonfinite)(const S* x, int64_t n);
};

template <typename S>
const Table<S>& active();

template <typename S>
Table<S> scalar_table();

bool avx2_supported();

/// Select the kernel variant: "scalar", "avx2" or "auto". Throws if the
/// requested variant is unavailable. The SRMA_KERNELS environment variable
/// provides the initial selection.
void set_variant(const std::string& name);
std::string active_variant();

}  // namespace srma::kern
