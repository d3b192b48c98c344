#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace srma {

/// Voxelized binary segmentation, row-major [H,W,D], values strictly 0/1.
struct BinaryMask {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::vector<uint8_t> v;

  static BinaryMask create(std::array<int64_t, 3> dims, std::vector<uint8_t> values);
  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
  uint8_t at(int64_t h, int64_t w, int64_t d) const {
    return v[(h * dims[1] + w) * dims[2] + d];
  }
  int64_t foreground_count() const;
};

/// Physical voxel size in mm per axis; all strictly positive.
struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;
};

struct OverlapMetrics {
  double dice = 0, iou = 0, recall = 0, precision = 0, f2 = 0;
};

/// Voxelwise TP/FP/FN counting. Zero-denominator policy: both masks empty ->
/// all metrics 1 (vacuous agreement); exactly one empty -> all 0.
OverlapMetrics overlap_metrics(const BinaryMask& pred, const BinaryMask& gt);

/// A foreground voxel is surface iff at least one 6-neighbor is background
/// or outside the volume.
std::vector<std::array<int32_t, 3>> surface_extract(const BinaryMask& m);

/// Euclidean distance (spacing-scaled, mm) from each `from` voxel to its
/// nearest `to` voxel, in `from` order. Accelerated by an expanding-shell
/// occupancy search; per-pair arithmetic matches the exhaustive oracle
/// exactly, so results are bit-identical to it.
std::vector<double> nearest_surface_distances(const std::vector<std::array<int32_t, 3>>& from,
                                              const std::vector<std::array<int32_t, 3>>& to,
                                              std::array<int64_t, 3> dims, const Spacing& sp);

/// Nearest-rank percentile: sorted ascending, 1-based rank ceil(q*n).
double nearest_rank_percentile(std::vector<double> values, double q);

/// max over directions of the 95th-percentile nearest-surface distance.
/// Throws if either mask is empty.
double hd95(const BinaryMask& pred, const BinaryMask& gt, const Spacing& sp);

/// (sum d(pred->gt) + sum d(gt->pred)) / (|S_pred| + |S_gt|). Throws if
/// either mask is empty.
double assd(const BinaryMask& pred, const BinaryMask& gt, const Spacing& sp);

/// Per-case evaluation record; distance metrics are absent when a mask was
/// empty.
struct CaseReport {
  std::string case_id;
  OverlapMetrics overlap;
  std::optional<double> hd95_mm;
  std::optional<double> assd_mm;
};

CaseReport evaluate_case(const std::string& case_id, const BinaryMask& pred,
                         const BinaryMask& gt, const Spacing& sp);

}  // namespace srma
