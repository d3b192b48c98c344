// AVX2 kernel variants. Same per-element operation sequence as the scalar
// references in kernels_scalar.hpp (mul then add, never fused), so results
// are bit-identical. Tails run the scalar expression.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "srma/kernels.hpp"

namespace srma::kern::avx2 {

namespace {

inline __m256 load8(const float* p) { return _mm256_loadu_ps(p); }
inline __m256d load4(const double* p) { return _mm256_loadu_pd(p); }

}  // namespace

void add_f32(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_add_ps(load8(a + i), load8(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void add_f64(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_add_pd(load4(a + i), load4(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_f32(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(load8(a + i), load8(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_f64(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(load4(a + i), load4(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void neg_f32(const float* a, float* out, int64_t n) {
  const __m256 sign = _mm256_set1_ps(-0.0f);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_xor_ps(load8(a + i), sign));
  for (; i < n; ++i) out[i] = -a[i];
}

void neg_f64(const double* a, double* out, int64_t n) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_xor_pd(load4(a + i), sign));
  for (; i < n; ++i) out[i] = -a[i];
}

void scale_f32(const float* a, float c, float* out, int64_t n) {
  const __m256 vc = _mm256_set1_ps(c);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(vc, load8(a + i)));
  for (; i < n; ++i) out[i] = c * a[i];
}

void scale_f64(const double* a, double c, double* out, int64_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, load4(a + i)));
  for (; i < n; ++i) out[i] = c * a[i];
}

void axpy_f32(float a, const float* x, float* y, int64_t n) {
  const __m256 va = _mm256_set1_ps(a);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(load8(y + i), _mm256_mul_ps(va, load8(x + i))));
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void axpy_f64(double a, const double* x, double* y, int64_t n) {
  const __m256d va = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(load4(y + i), _mm256_mul_pd(va, load4(x + i))));
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void mul_acc_f32(const float* a, const float* b, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(load8(out + i), _mm256_mul_ps(load8(a + i), load8(b + i))));
  for (; i < n; ++i) out[i] = out[i] + a[i] * b[i];
}

void mul_acc_f64(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(load4(out + i), _mm256_mul_pd(load4(a + i), load4(b + i))));
  for (; i < n; ++i) out[i] = out[i] + a[i] * b[i];
}

void affine_f32(const float* x, float a, float c, float* out, int64_t n) {
  const __m256 va = _mm256_set1_ps(a), vc = _mm256_set1_ps(c);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_mul_ps(va, load8(x + i)), vc));
  for (; i < n; ++i) out[i] = a * x[i] + c;
}

void affine_f64(const double* x, double a, double c, double* out, int64_t n) {
  const __m256d va = _mm256_set1_pd(a), vc = _mm256_set1_pd(c);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(va, load4(x + i)), vc));
  for (; i < n; ++i) out[i] = a * x[i] + c;
}

void norm_affine_f32(const float* x, const float* gamma, const float* beta, float mu,
                     float inv, float* out, int64_t n) {
  const __m256 vmu = _mm256_set1_ps(mu), vinv = _mm256_set1_ps(inv);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 xh = _mm256_mul_ps(_mm256_mul_ps(_mm256_sub_ps(load8(x + i), vmu), vinv), load8(gamma + i));
    _mm256_storeu_ps(out + i, _mm256_add_ps(xh, load8(beta + i)));
  }
  for (; i < n; ++i) out[i] = (x[i] - mu) * inv * gamma[i] + beta[i];
}

void norm_affine_f64(const double* x, const double* gamma, const double* beta, double mu,
                     double inv, double* out, int64_t n) {
  const __m256d vmu = _mm256_set1_pd(mu), vinv = _mm256_set1_pd(inv);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xh = _mm256_mul_pd(_mm256_mul_pd(_mm256_sub_pd(load4(x + i), vmu), vinv), load4(gamma + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(xh, load4(beta + i)));
  }
  for (; i < n; ++i) out[i] = (x[i] - mu) * inv * gamma[i] + beta[i];
}

void scan_step_f32(const float* e, const float* dtu, float b, float c, float* h, float* y,
                   int64_t n) {
  const __m256 vb = _mm256_set1_ps(b), vc = _mm256_set1_ps(c);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vh = _mm256_add_ps(_mm256_mul_ps(load8(e + i), load8(h + i)),
                              _mm256_mul_ps(vb, load8(dtu + i)));
    _mm256_storeu_ps(h + i, vh);
    _mm256_storeu_ps(y + i, _mm256_add_ps(load8(y + i), _mm256_mul_ps(vc, vh)));
  }
  for (; i < n; ++i) {
    h[i] = e[i] * h[i] + b * dtu[i];
    y[i] = y[i] + c * h[i];
  }
}

void scan_step_f64(const double* e, const double* dtu, double b, double c, double* h,
                   double* y, int64_t n) {
  const __m256d vb = _mm256_set1_pd(b), vc = _mm256_set1_pd(c);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vh = _mm256_add_pd(_mm256_mul_pd(load4(e + i), load4(h + i)),
                               _mm256_mul_pd(vb, load4(dtu + i)));
    _mm256_storeu_pd(h + i, vh);
    _mm256_storeu_pd(y + i, _mm256_add_pd(load4(y + i), _mm256_mul_pd(vc, vh)));
  }
  for (; i < n; ++i) {
    h[i] = e[i] * h[i] + b * dtu[i];
    y[i] = y[i] + c * h[i];
  }
}

void stencil_acc_f32(const float* w, int64_t k, const float* x, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 acc = _mm256_loadu_ps(y + i);
    for (int64_t j = 0; j < k; ++j)
      acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_set1_ps(w[j]), _mm256_loadu_ps(x + i + j)));
    _mm256_storeu_ps(y + i, acc);
  }
  for (; i < n; ++i) {
    float t = y[i];
    for (int64_t j = 0; j < k; ++j) t = t + w[j] * x[i + j];
    y[i] = t;
  }
}

void stencil_acc_f64(const double* w, int64_t k, const double* x, double* y, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    for (int64_t j = 0; j < k; ++j)
      acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(w[j]), _mm256_loadu_pd(x + i + j)));
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) {
    double t = y[i];
    for (int64_t j = 0; j < k; ++j) t = t + w[j] * x[i + j];
    y[i] = t;
  }
}

void stencil_acc_rev_f32(const float* w, int64_t k, const float* x, float* y, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 acc = _mm256_loadu_ps(y + i);
    for (int64_t j = 0; j < k; ++j)
      acc = _mm256_add_ps(acc,
                          _mm256_mul_ps(_mm256_set1_ps(w[j]), _mm256_loadu_ps(x + i + k - 1 - j)));
    _mm256_storeu_ps(y + i, acc);
  }
  for (; i < n; ++i) {
    float t = y[i];
    for (int64_t j = 0; j < k; ++j) t = t + w[j] * x[i + k - 1 - j];
    y[i] = t;
  }
}

void stencil_acc_rev_f64(const double* w, int64_t k, const double* x, double* y, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    for (int64_t j = 0; j < k; ++j)
      acc = _mm256_add_pd(acc,
                          _mm256_mul_pd(_mm256_set1_pd(w[j]), _mm256_loadu_pd(x + i + k - 1 - j)));
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) {
    double t = y[i];
    for (int64_t j = 0; j < k; ++j) t = t + w[j] * x[i + k - 1 - j];
    y[i] = t;
  }
}

int64_t find_nonfinite_f32(const float* x, int64_t n) {
  const __m256i expmask = _mm256_set1_epi32(0x7f800000);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256i v = _mm256_castps_si256(_mm256_loadu_ps(x + i));
    __m256i bad = _mm256_cmpeq_epi32(_mm256_and_si256(v, expmask), expmask);
    if (_mm256_movemask_epi8(bad)) break;
  }
  for (; i < n; ++i)
    if (!std::isfinite(x[i])) return i;
  return -1;
}

int64_t find_nonfinite_f64(const double* x, int64_t n) {
  const __m256i expmask = _mm256_set1_epi64x(0x7ff0000000000000ll);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256i v = _mm256_castpd_si256(_mm256_loadu_pd(x + i));
    __m256i bad = _mm256_cmpeq_epi64(_mm256_and_si256(v, expmask), expmask);
    if (_mm256_movemask_epi8(bad)) break;
  }
  for (; i < n; ++i)
    if (!std::isfinite(x[i])) return i;
  return -1;
}

Table<float> table_f32() {
  Table<float> t;
  t.add = add_f32;
  t.mul = mul_f32;
  t.neg = neg_f32;
  t.scale = scale_f32;
  t.axpy = axpy_f32;
  t.mul_acc = mul_acc_f32;
  t.affine = affine_f32;
  t.norm_affine = norm_affine_f32;
  t.scan_step = scan_step_f32;
  t.stencil_acc = stencil_acc_f32;
  t.stencil_acc_rev = stencil_acc_rev_f32;
  t.find_nonfinite = find_nonfinite_f32;
  return t;
}

Table<double> table_f64() {
  Table<double> t;
  t.add = add_f64;
  t.mul = mul_f64;
  t.neg = neg_f64;
  t.scale = scale_f64;
  t.axpy = axpy_f64;
  t.mul_acc = mul_acc_f64;
  t.affine = affine_f64;
  t.norm_affine = norm_affine_f64;
  t.scan_step = scan_step_f64;
  t.stencil_acc = stencil_acc_f64;
  t.stencil_acc_rev = stencil_acc_rev_f64;
  t.find_nonfinite = find_nonfinite_f64;
  return t;
}

}  // namespace srma::kern::avx2

#endif  // x86_64
