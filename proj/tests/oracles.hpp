#pragma once

// Test-only oracles, kept independent of the implementation paths they
// check: a naive unrolled state-space recurrence, an all-pairs surface
// distance scan, and a direct inverse-permute-and-sum grid merge.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

/// Direct unrolled recurrence, plain double loops, no kernel calls:
/// h[c][n] = exp(delta*A)*h + delta*B*u; y = sum_n C*h + D*u.
/// Also returns the full state trajectory for stability checks.
struct ScanResult {
  std::vector<double> y;  // [L*d]
  std::vector<double> h;  // [L*d*n], h[(t*d + c)*n + j]
};

inline ScanResult naive_scan(const std::vector<double>& u, const std::vector<double>& delta,
                             const std::vector<double>& b, const std::vector<double>& c,
                             const std::vector<double>& a, const std::vector<double>& dskip,
                             int64_t L, int64_t d, int64_t n) {
  ScanResult r;
  r.y.assign(L * d, 0.0);
  r.h.assign(L * d * n, 0.0);
  std::vector<double> h(d * n, 0.0);
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t ci = 0; ci < d; ++ci) {
      const double dt = delta[t * d + ci];
      const double ut = u[t * d + ci];
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double abar = std::exp(dt * a[ci * n + j]);
        h[ci * n + j] = abar * h[ci * n + j] + dt * b[t * n + j] * ut;
        r.h[(t * d + ci) * n + j] = h[ci * n + j];
        acc += c[t * n + j] * h[ci * n + j];
      }
      r.y[t * d + ci] = acc + dskip[ci] * ut;
    }
  }
  return r;
}

/// Exhaustive all-pairs nearest-surface distances. The per-pair expression
/// matches the implementation exactly so results must be bit-identical.
inline std::vector<double> all_pairs_distances(
    const std::vector<std::array<int32_t, 3>>& from,
    const std::vector<std::array<int32_t, 3>>& to, double sx, double sy, double sz) {
  std::vector<double> out(from.size());
  for (size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dx = static_cast<double>(from[i][0] - b[0]) * sx;
      const double dy = static_cast<double>(from[i][1] - b[1]) * sy;
      const double dz = static_cast<double>(from[i][2] - b[2]) * sz;
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) best = d2;
    }
    out[i] = std::sqrt(best);
  }
  return out;
}

}  // namespace oracle
