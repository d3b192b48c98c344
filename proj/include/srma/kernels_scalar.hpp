#pragma once

#include <cmath>
#include <cstdint>

// Reference kernels. The SIMD variants must match these bit for bit: each
// element is produced by the same sequence of individually rounded ops.

namespace srma::kern::scalar {

template <typename S>
void add(const S* a, const S* b, S* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename S>
void mul(const S* a, const S* b, S* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename S>
void neg(const S* a, S* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = -a[i];
}

template <typename S>
void scale(const S* a, S c, S* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = c * a[i];
}

template <typename S>
void axpy(S a, const S* x, S* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

template <typename S>
void mul_acc(const S* a, const S* b, S* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = out[i] + a[i] * b[i];
}

template <typename S>
void affine(const S* x, S a, S c, S* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a * x[i] + c;
}

template <typename S>
void norm_affine(const S* x, const S* gamma, const S* beta, S mu, S inv, S* out,
                 int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = (x[i] - mu) * inv * gamma[i] + beta[i];
}

template <typename S>
void scan_step(const S* e, const S* dtu, S b, S c, S* h, S* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    h[i] = e[i] * h[i] + b * dtu[i];
    y[i] = y[i] + c * h[i];
  }
}

template <typename S>
void stencil_acc(const S* w, int64_t k, const S* x, S* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    S t = y[i];
    for (int64_t j = 0; j < k; ++j) t = t + w[j] * x[i + j];
    y[i] = t;
  }
}

template <typename S>
void stencil_acc_rev(const S* w, int64_t k, const S* x, S* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    S t = y[i];
    for (int64_t j = 0; j < k; ++j) t = t + w[j] * x[i + k - 1 - j];
    y[i] = t;
  }
}

template <typename S>
int64_t find_nonfinite(const S* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return i;
  return -1;
}

}  // namespace srma::kern::scalar
