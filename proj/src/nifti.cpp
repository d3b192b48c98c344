#include "srma/nifti.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "srma/common.hpp"

// NIfTI-1: 348-byte header, optional 4-byte extension flag, voxel data from
// vox_offset. Only the single-file "n+1\0" form is supported. Field offsets
// follow the nifti1.h layout.

namespace srma {

static_assert(std::endian::native == std::endian::little,
              "NIfTI reader assumes a little-endian host");

namespace {

constexpr int64_t kHeaderSize = 348;
constexpr int16_t DT_UINT8 = 2, DT_INT16 = 4, DT_FLOAT32 = 16;

template <typename T>
T get_le(const uint8_t* buf, size_t offset, bool swap) {
  T v;
  std::memcpy(&v, buf + offset, sizeof(T));
  if (swap && sizeof(T) > 1) {
    uint8_t* p = reinterpret_cast<uint8_t*>(&v);
    std::reverse(p, p + sizeof(T));
  }
  return v;
}

template <typename T>
void put_le(std::vector<uint8_t>& buf, size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

}  // namespace

NiftiVolume read_nifti(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open NIfTI file: " + path);

  std::vector<uint8_t> hdr(kHeaderSize);
  f.read(reinterpret_cast<char*>(hdr.data()), kHeaderSize);
  require(f.gcount() == kHeaderSize, "truncated NIfTI header: " + path);
  if (hdr[0] == 0x1f && hdr[1] == 0x8b)
    fail("compressed (.nii.gz) input is not supported; decompress externally: " + path);

  // Byte order detection via sizeof_hdr (348 byteswapped reads 1543569408).
  int32_t sz = get_le<int32_t>(hdr.data(), 0, false);
  bool swap = false;
  if (sz != 348) {
    sz = get_le<int32_t>(hdr.data(), 0, true);
    require(sz == 348, "bad sizeof_hdr, not a NIfTI-1 file: " + path);
    swap = true;
  }

  const char* magic = reinterpret_cast<const char*>(hdr.data() + 344);
  if (std::memcmp(magic, "ni1", 4) == 0)
    fail("header-pair NIfTI (\"ni1\\0\") is not supported: " + path);
  require(std::memcmp(magic, "n+1", 4) == 0, "bad NIfTI magic: " + path);

  NiftiHeader h;
  h.sizeof_hdr = sz;
  for (int i = 0; i < 8; ++i) h.dim[i] = get_le<int16_t>(hdr.data(), 40 + 2 * i, swap);
  h.datatype = get_le<int16_t>(hdr.data(), 70, swap);
  h.bitpix = get_le<int16_t>(hdr.data(), 72, swap);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = get_le<float>(hdr.data(), 76 + 4 * i, swap);
  h.vox_offset = get_le<float>(hdr.data(), 108, swap);
  h.scl_slope = get_le<float>(hdr.data(), 112, swap);
  h.scl_inter = get_le<float>(hdr.data(), 116, swap);
  std::memcpy(h.magic.data(), magic, 4);

  require(h.dim[0] == 3 || h.dim[0] == 4, "unsupported dim[0] (need 3 or 4)");
  if (h.dim[0] == 4) require(h.dim[4] == 1, "4D NIfTI with more than one volume is unsupported");
  for (int i = 1; i <= 3; ++i) require(h.dim[i] > 0, "non-positive NIfTI extent");
  require(h.datatype == DT_UINT8 || h.datatype == DT_INT16 || h.datatype == DT_FLOAT32,
          "unsupported NIfTI datatype " + std::to_string(h.datatype) +
              " (supported: uint8, int16, float32)");
  const int64_t bytes_per =
      h.datatype == DT_UINT8 ? 1 : (h.datatype == DT_INT16 ? 2 : 4);
  require(h.bitpix == 8 * bytes_per, "bitpix inconsistent with datatype");
  require(h.vox_offset >= 352.0f, "invalid vox_offset (must be >= 352 for single-file NIfTI)");

  const int64_t di = h.dim[1], dj = h.dim[2], dk = h.dim[3];
  const int64_t n = di * dj * dk;
  f.seekg(static_cast<std::streamoff>(h.vox_offset));
  std::vector<uint8_t> raw(static_cast<size_t>(n * bytes_per));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(f.gcount() == static_cast<std::streamsize>(raw.size()),
          "truncated NIfTI data section: " + path);

  const float slope = h.scl_slope == 0.0f ? 1.0f : h.scl_slope;
  std::vector<float> file_order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    float v;
    switch (h.datatype) {
      case DT_UINT8:
        v = static_cast<float>(raw[i]);
        break;
      case DT_INT16:
        v = static_cast<float>(get_le<int16_t>(raw.data(), 2 * i, swap));
        break;
      default:
        v = get_le<float>(raw.data(), 4 * i, swap);
        break;
    }
    file_order[i] = v * slope + h.scl_inter;
  }

  NiftiVolume vol;
  vol.header = h;
  vol.dims = {di, dj, dk};
  vol.spacing = {static_cast<double>(h.pixdim[1]), static_cast<double>(h.pixdim[2]),
                 static_cast<double>(h.pixdim[3])};
  // file order is i-fastest; internal order is k-fastest
  vol.voxels.resize(static_cast<size_t>(n));
  for (int64_t k = 0; k < dk; ++k)
    for (int64_t j = 0; j < dj; ++j)
      for (int64_t i = 0; i < di; ++i)
        vol.voxels[(i * dj + j) * dk + k] = file_order[(k * dj + j) * di + i];
  return vol;
}

namespace {

std::vector<uint8_t> build_header(std::array<int64_t, 3> dims, int16_t datatype,
                                  int16_t bitpix, const Spacing& sp) {
  std::vector<uint8_t> hdr(kHeaderSize, 0);
  put_le<int32_t>(hdr, 0, 348);
  hdr[38] = 'r';  // regular
  put_le<int16_t>(hdr, 40, 3);
  put_le<int16_t>(hdr, 42, static_cast<int16_t>(dims[0]));
  put_le<int16_t>(hdr, 44, static_cast<int16_t>(dims[1]));
  put_le<int16_t>(hdr, 46, static_cast<int16_t>(dims[2]));
  for (int i = 4; i <= 7; ++i) put_le<int16_t>(hdr, 40 + 2 * i, 1);
  put_le<int16_t>(hdr, 70, datatype);
  put_le<int16_t>(hdr, 72, bitpix);
  put_le<float>(hdr, 76, 1.0f);
  put_le<float>(hdr, 80, static_cast<float>(sp.sx));
  put_le<float>(hdr, 84, static_cast<float>(sp.sy));
  put_le<float>(hdr, 88, static_cast<float>(sp.sz));
  put_le<float>(hdr, 108, 352.0f);
  put_le<float>(hdr, 112, 1.0f);  // scl_slope
  put_le<float>(hdr, 116, 0.0f);  // scl_inter
  hdr[344] = 'n';
  hdr[345] = '+';
  hdr[346] = '1';
  hdr[347] = '\0';
  return hdr;
}

void write_file(const std::string& path, const std::vector<uint8_t>& hdr,
                const uint8_t* data, size_t nbytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
  const std::array<uint8_t, 4> ext{0, 0, 0, 0};  // no extensions, pad to 352
  f.write(reinterpret_cast<const char*>(ext.data()), 4);
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(nbytes));
  require(f.good(), "write failed: " + path);
}

}  // namespace

void write_nifti_f32(const std::string& path, std::array<int64_t, 3> dims,
                     const float* voxels, const Spacing& sp) {
  for (int64_t e : dims) require(e > 0 && e <= 32767, "extent out of NIfTI int16 range");
  auto hdr = build_header(dims, DT_FLOAT32, 32, sp);
  const int64_t di = dims[0], dj = dims[1], dk = dims[2];
  std::vector<float> file_order(static_cast<size_t>(di * dj * dk));
  for (int64_t k = 0; k < dk; ++k)
    for (int64_t j = 0; j < dj; ++j)
      for (int64_t i = 0; i < di; ++i)
        file_order[(k * dj + j) * di + i] = voxels[(i * dj + j) * dk + k];
  write_file(path, hdr, reinterpret_cast<const uint8_t*>(file_order.data()),
             file_order.size() * 4);
}

void write_nifti_mask(const std::string& path, const BinaryMask& mask, const Spacing& sp) {
  for (int64_t e : mask.dims) require(e > 0 && e <= 32767, "extent out of NIfTI int16 range");
  auto hdr = build_header(mask.dims, DT_UINT8, 8, sp);
  const int64_t di = mask.dims[0], dj = mask.dims[1], dk = mask.dims[2];
  std::vector<uint8_t> file_order(static_cast<size_t>(di * dj * dk));
  for (int64_t k = 0; k < dk; ++k)
    for (int64_t j = 0; j < dj; ++j)
      for (int64_t i = 0; i < di; ++i)
        file_order[(k * dj + j) * di + i] = mask.v[(i * dj + j) * dk + k];
  write_file(path, hdr, file_order.data(), file_order.size());
}

BinaryMask mask_from_volume(const NiftiVolume& vol) {
  std::vector<uint8_t> v(vol.voxels.size());
  for (size_t i = 0; i < v.size(); ++i) {
    require(vol.voxels[i] == 0.0f || vol.voxels[i] == 1.0f,
            "mask volume has non-binary voxel values");
    v[i] = vol.voxels[i] == 1.0f ? 1 : 0;
  }
  return BinaryMask::create(vol.dims, std::move(v));
}

}  // namespace srma
