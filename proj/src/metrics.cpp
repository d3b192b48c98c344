#include "srma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "srma/common.hpp"

namespace srma {

BinaryMask BinaryMask::create(std::array<int64_t, 3> dims, std::vector<uint8_t> values) {
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "mask extents must be positive");
  require(static_cast<int64_t>(values.size()) == dims[0] * dims[1] * dims[2],
          "mask value count does not match extents");
  for (uint8_t x : values) require(x <= 1, "mask values must be strictly binary");
  BinaryMask m;
  m.dims = dims;
  m.v = std::move(values);
  return m;
}

int64_t BinaryMask::foreground_count() const {
  int64_t n = 0;
  for (uint8_t x : v) n += x;
  return n;
}

OverlapMetrics overlap_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.dims == gt.dims, "overlap_metrics: mask shape mismatch");
  int64_t tp = 0, fp = 0, fn = 0;
  const int64_t n = pred.numel();
  for (int64_t i = 0; i < n; ++i) {
    tp += pred.v[i] & gt.v[i];
    fp += pred.v[i] & (1 - gt.v[i]);
    fn += (1 - pred.v[i]) & gt.v[i];
  }
  OverlapMetrics m;
  if (tp + fp + fn == 0) {  // both empty: vacuous agreement
    m.dice = m.iou = m.recall = m.precision = m.f2 = 1.0;
    return m;
  }
  if (tp == 0 && (fp == 0 || fn == 0)) {  // exactly one empty
    return m;                             // all zeros
  }
  const double dtp = static_cast<double>(tp);
  m.dice = 2.0 * dtp / static_cast<double>(2 * tp + fp + fn);
  m.iou = dtp / static_cast<double>(tp + fp + fn);
  m.recall = dtp / static_cast<double>(tp + fn);
  m.precision = dtp / static_cast<double>(tp + fp);
  const double pr = m.precision, rc = m.recall;
  m.f2 = (4.0 * pr + rc) > 0 ? 5.0 * pr * rc / (4.0 * pr + rc) : 0.0;
  return m;
}

std::vector<std::array<int32_t, 3>> surface_extract(const BinaryMask& m) {
  std::vector<std::array<int32_t, 3>> out;
  const int64_t H = m.dims[0], W = m.dims[1], D = m.dims[2];
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < W; ++w)
      for (int64_t d = 0; d < D; ++d) {
        if (!m.at(h, w, d)) continue;
        const bool surf = h == 0 || !m.at(h - 1, w, d) || h == H - 1 || !m.at(h + 1, w, d) ||
                          w == 0 || !m.at(h, w - 1, d) || w == W - 1 || !m.at(h, w + 1, d) ||
                          d == 0 || !m.at(h, w, d - 1) || d == D - 1 || !m.at(h, w, d + 1);
        if (surf)
          out.push_back({static_cast<int32_t>(h), static_cast<int32_t>(w),
                         static_cast<int32_t>(d)});
      }
  return out;
}

namespace {

inline double pair_dist2(const std::array<int32_t, 3>& a, const std::array<int32_t, 3>& b,
                         const Spacing& sp) {
  // Identical expression in the exhaustive test oracle; do not reorder.
  const double dx = static_cast<double>(a[0] - b[0]) * sp.sx;
  const double dy = static_cast<double>(a[1] - b[1]) * sp.sy;
  const double dz = static_cast<double>(a[2] - b[2]) * sp.sz;
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<double> nearest_surface_distances(const std::vector<std::array<int32_t, 3>>& from,
                                              const std::vector<std::array<int32_t, 3>>& to,
                                              std::array<int64_t, 3> dims, const Spacing& sp) {
  require(!to.empty(), "nearest_surface_distances: empty target surface");
  require(sp.sx > 0 && sp.sy > 0 && sp.sz > 0, "spacing must be strictly positive");
  const int64_t H = dims[0], W = dims[1], D = dims[2];
  std::vector<uint8_t> occ(static_cast<size_t>(H * W * D), 0);
  for (const auto& p : to) occ[(p[0] * W + p[1]) * D + p[2]] = 1;
  const double min_sp = std::min({sp.sx, sp.sy, sp.sz});
  const int64_t smax = std::max({H, W, D});

  std::vector<double> result(from.size());
  for (size_t qi = 0; qi < from.size(); ++qi) {
    const auto& a = from[qi];
    double best2 = std::numeric_limits<double>::infinity();
    for (int64_t s = 0; s <= smax; ++s) {
      if (best2 <= (static_cast<double>(s) * min_sp) * (static_cast<double>(s) * min_sp))
        break;
      // Chebyshev shell of radius s around a, clipped to the volume.
      const int64_t h0 = std::max<int64_t>(0, a[0] - s), h1 = std::min<int64_t>(H - 1, a[0] + s);
      const int64_t w0 = std::max<int64_t>(0, a[1] - s), w1 = std::min<int64_t>(W - 1, a[1] + s);
      const int64_t d0 = std::max<int64_t>(0, a[2] - s), d1 = std::min<int64_t>(D - 1, a[2] + s);
      for (int64_t h = h0; h <= h1; ++h) {
        const bool h_face = (h == a[0] - s || h == a[0] + s);
        for (int64_t w = w0; w <= w1; ++w) {
          const bool w_face = (w == a[1] - s || w == a[1] + s);
          if (h_face || w_face) {
            const uint8_t* row = occ.data() + (h * W + w) * D;
            for (int64_t d = d0; d <= d1; ++d)
              if (row[d]) {
                const std::array<int32_t, 3> b{static_cast<int32_t>(h), static_cast<int32_t>(w),
                                               static_cast<int32_t>(d)};
                best2 = std::min(best2, pair_dist2(a, b, sp));
              }
          } else {
            for (int64_t d : {a[2] - s, a[2] + s}) {
              if (d < d0 || d > d1) continue;
              if (occ[(h * W + w) * D + d]) {
                const std::array<int32_t, 3> b{static_cast<int32_t>(h), static_cast<int32_t>(w),
                                               static_cast<int32_t>(d)};
                best2 = std::min(best2, pair_dist2(a, b, sp));
              }
            }
          }
        }
      }
    }
    result[qi] = std::sqrt(best2);
  }
  return result;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  require(!values.empty(), "percentile of empty set");
  std::sort(values.begin(), values.end());
  const int64_t n = static_cast<int64_t>(values.size());
  int64_t rank = static_cast<int64_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::max<int64_t>(1, std::min<int64_t>(rank, n));
  return values[rank - 1];
}

namespace {

struct SurfacePair {
  std::vector<std::array<int32_t, 3>> sp_pred, sp_gt;
};

SurfacePair surfaces_checked(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.dims == gt.dims, "distance metrics: mask shape mismatch");
  require(pred.foreground_count() > 0 && gt.foreground_count() > 0,
          "distance metrics require nonempty masks");
  return {surface_extract(pred), surface_extract(gt)};
}

}  // namespace

double hd95(const BinaryMask& pred, const BinaryMask& gt, const Spacing& sp) {
  auto s = surfaces_checked(pred, gt);
  auto d_pg = nearest_surface_distances(s.sp_pred, s.sp_gt, pred.dims, sp);
  auto d_gp = nearest_surface_distances(s.sp_gt, s.sp_pred, pred.dims, sp);
  return std::max(nearest_rank_percentile(std::move(d_pg), 0.95),
                  nearest_rank_percentile(std::move(d_gp), 0.95));
}

double assd(const BinaryMask& pred, const BinaryMask& gt, const Spacing& sp) {
  auto s = surfaces_checked(pred, gt);
  auto d_pg = nearest_surface_distances(s.sp_pred, s.sp_gt, pred.dims, sp);
  auto d_gp = nearest_surface_distances(s.sp_gt, s.sp_pred, pred.dims, sp);
  double acc = 0.0;
  for (double d : d_pg) acc += d;
  for (double d : d_gp) acc += d;
  return acc / static_cast<double>(d_pg.size() + d_gp.size());
}

CaseReport evaluate_case(const std::string& case_id, const BinaryMask& pred,
                         const BinaryMask& gt, const Spacing& sp) {
  CaseReport r;
  r.case_id = case_id;
  r.overlap = overlap_metrics(pred, gt);
  if (pred.foreground_count() > 0 && gt.foreground_count() > 0) {
    r.hd95_mm = hd95(pred, gt, sp);
    r.assd_mm = assd(pred, gt, sp);
  }
  return r;
}

}  // namespace srma
