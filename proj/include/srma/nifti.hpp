#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "srma/metrics.hpp"

namespace srma {

/// The NIfTI-1 header fields this reader interprets (348-byte header).
struct NiftiHeader {
  int32_t sizeof_hdr = 348;
  std::array<int16_t, 8> dim{};
  int16_t datatype = 0;
  int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
};

/// Decoded single-file NIfTI-1 image. Voxels are in row-major [H,W,D] order
/// with H = i, W = j, D = k in file order (no affine reorientation), after
/// scl_slope/scl_inter application.
struct NiftiVolume {
  NiftiHeader header;
  std::array<int64_t, 3> dims{0, 0, 0};
  std::vector<float> voxels;
  Spacing spacing;

  float at(int64_t h, int64_t w, int64_t d) const {
    return voxels[(h * dims[1] + w) * dims[2] + d];
  }
};

/// Supported datatypes: uint8 (2), int16 (4), float32 (16). Header byte
/// order is detected from sizeof_hdr. Header-pair files ("ni1\0") are
/// rejected, as is compressed input.
NiftiVolume read_nifti(const std::string& path);

void write_nifti_f32(const std::string& path, std::array<int64_t, 3> dims,
                     const float* voxels, const Spacing& sp);

/// Masks are written as uint8 with slope 1, intercept 0.
void write_nifti_mask(const std::string& path, const BinaryMask& mask, const Spacing& sp);

/// Strict conversion: every voxel must be exactly 0 or 1.
BinaryMask mask_from_volume(const NiftiVolume& vol);

}  // namespace srma
