#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "srma/abss.hpp"
#include "srma/fdcheck.hpp"

using namespace srma;
using T = Tensor<double>;

namespace {

/// Feedthrough-only parameters: C projection zero, D = 1, so each direction
/// passes its sequence through unchanged.
SsmParams<double> feedthrough_params(int64_t d, int64_t n) {
  Rng rng(1);
  SsmParams<double> p = init_ssm_params<double>(d, n, rng);
  p.c_proj = T::zeros({d, n});
  p.d_skip = T::filled({d}, 1.0);
  return p;
}

AbssParams<double> feedthrough_abss(int64_t d, int64_t n) {
  AbssParams<double> p;
  p.sagittal = feedthrough_params(d, n);
  p.coronal = feedthrough_params(d, n);
  p.axial = feedthrough_params(d, n);
  return p;
}

}  // namespace

TEST_CASE("plane_rearrange shapes and index arithmetic") {
  // C=1, H=W=D=2: f_h has shape 1x2x4
  Rng rng(3);
  T x2 = T::uniform({1, 2, 2, 2}, rng, -1, 1);
  CHECK(plane_rearrange<double>(nullptr, x2, Plane::Sagittal).shape() == Shape{1, 2, 4});
  CHECK(plane_rearrange<double>(nullptr, x2, Plane::Coronal).shape() == Shape{1, 2, 4});
  CHECK(plane_rearrange<double>(nullptr, x2, Plane::Axial).shape() == Shape{1, 2, 4});

  // x[0,h,w,d] = 100h + 10w + d: row h of f_h enumerates (w,d) row-major,
  // so f_h[0,1,:] = [100,101,110,111] by direct index arithmetic
  std::vector<double> v(8);
  for (int64_t h = 0; h < 2; ++h)
    for (int64_t w = 0; w < 2; ++w)
      for (int64_t d = 0; d < 2; ++d) v[(h * 2 + w) * 2 + d] = 100.0 * h + 10.0 * w + d;
  T x = T::from_data({1, 2, 2, 2}, std::move(v));
  T fh = plane_rearrange<double>(nullptr, x, Plane::Sagittal);
  CHECK(fh.at({0, 1, 0}) == 100.0);
  CHECK(fh.at({0, 1, 1}) == 101.0);
  CHECK(fh.at({0, 1, 2}) == 110.0);
  CHECK(fh.at({0, 1, 3}) == 111.0);
  // f_w holds x[c,h,w,d] at (c, w, h*D + d); f_d at (c, d, h*W + w)
  T fw = plane_rearrange<double>(nullptr, x, Plane::Coronal);
  CHECK(fw.at({0, 1, 0}) == 10.0);
  CHECK(fw.at({0, 1, 3}) == 111.0);
  T fd = plane_rearrange<double>(nullptr, x, Plane::Axial);
  CHECK(fd.at({0, 1, 0}) == 1.0);
  CHECK(fd.at({0, 1, 3}) == 111.0);
}

TEST_CASE("plane_rearrange round-trips bit-exactly on every plane") {
  Rng rng(5);
  T x = T::uniform({3, 4, 5, 2}, rng, -2, 2);
  const std::array<int64_t, 4> dims{3, 4, 5, 2};
  for (Plane p : {Plane::Sagittal, Plane::Coronal, Plane::Axial}) {
    T f = plane_rearrange<double>(nullptr, x, p);
    T back = plane_restore<double>(nullptr, f, p, dims);
    CHECK(back.shape() == x.shape());
    CHECK(std::memcmp(back.data(), x.data(), x.numel() * sizeof(double)) == 0);
  }
  // voxel conservation: rearrangement preserves the element sum (up to
  // reordered f64 accumulation for the permuted planes)
  for (Plane p : {Plane::Sagittal, Plane::Coronal, Plane::Axial}) {
    T f = plane_rearrange<double>(nullptr, x, p);
    CHECK(sum<double>(nullptr, f).value() ==
          doctest::Approx(sum<double>(nullptr, x).value()).epsilon(1e-12));
  }
  // and cross_scan conserves it per direction (pure permutations)
  T fh2 = plane_rearrange<double>(nullptr, x, Plane::Sagittal);
  auto ds = cross_scan<double>(nullptr, fh2);
  for (int k = 0; k < 4; ++k)
    CHECK(sum<double>(nullptr, ds.seq[k]).value() ==
          doctest::Approx(sum<double>(nullptr, x).value()).epsilon(1e-12));
}

TEST_CASE("cross_scan directional orders on a 2x2 grid") {
  T grid = T::from_data({1, 2, 2}, {1, 2, 3, 4});
  auto ds = cross_scan<double>(nullptr, grid);
  auto seqvals = [&](int k) {
    std::vector<double> v;
    for (int64_t t = 0; t < 4; ++t) v.push_back(ds.seq[k].at({t, 0}));
    return v;
  };
  CHECK(seqvals(0) == std::vector<double>{1, 2, 3, 4});
  CHECK(seqvals(1) == std::vector<double>{1, 3, 2, 4});
  CHECK(seqvals(2) == std::vector<double>{4, 3, 2, 1});
  CHECK(seqvals(3) == std::vector<double>{4, 2, 3, 1});
}

TEST_CASE("cross_scan degenerate single row: dir1==dir2, dir3==dir4") {
  Rng rng(7);
  T grid = T::uniform({2, 1, 6}, rng, -1, 1);
  auto ds = cross_scan<double>(nullptr, grid);
  CHECK(std::memcmp(ds.seq[0].data(), ds.seq[1].data(), 12 * sizeof(double)) == 0);
  CHECK(std::memcmp(ds.seq[2].data(), ds.seq[3].data(), 12 * sizeof(double)) == 0);
}

TEST_CASE("direction maps are bijections: map then inverse is the identity") {
  auto maps = build_scan_maps(3, 5);
  for (int k = 0; k < 4; ++k)
    for (int64_t t = 0; t < 15; ++t) CHECK((*maps.inv[k])[(*maps.map[k])[t]] == t);
}

TEST_CASE("cross_merge of cross_scan with identity transform is exactly 4x") {
  Rng rng(9);
  T grid = T::uniform({3, 4, 6}, rng, -2, 2);
  auto ds = cross_scan<double>(nullptr, grid);
  T merged = cross_merge<double>(nullptr, ds.seq, ds.maps, 3);
  CHECK(merged.shape() == grid.shape());
  for (int64_t i = 0; i < grid.numel(); ++i)
    CHECK(merged.data()[i] == 4.0 * grid.data()[i]);  // bit-exact

  // one direction zeroed -> 3x under identity transform
  auto zeroed = ds.seq;
  zeroed[2] = T::zeros({24, 3});
  T m3 = cross_merge<double>(nullptr, zeroed, ds.maps, 3);
  for (int64_t i = 0; i < grid.numel(); ++i)
    CHECK(m3.data()[i] == doctest::Approx(3.0 * grid.data()[i]).epsilon(1e-14));
}

TEST_CASE("cross_merge equals an independent inverse-permute-and-sum oracle") {
  Rng rng(11);
  const int64_t c = 2, a = 3, l = 4, n = a * l;
  auto maps = build_scan_maps(a, l);
  std::array<T, 4> ys;
  for (int k = 0; k < 4; ++k) ys[k] = T::uniform({n, c}, rng, -2, 2);
  T merged = cross_merge<double>(nullptr, ys, maps, c);
  for (int64_t g = 0; g < n; ++g)
    for (int64_t ch = 0; ch < c; ++ch) {
      double expect = 0.0;  // oracle: scan map[k] for the position holding g
      for (int k = 0; k < 4; ++k)
        for (int64_t t = 0; t < n; ++t)
          if ((*maps.map[k])[t] == g) expect += ys[k].at({t, ch});
      CHECK(merged.at({ch, g / l, g % l}) == doctest::Approx(expect).epsilon(1e-12));
    }
  CHECK_THROWS(cross_merge<double>(nullptr, {ys[0], ys[1], ys[2], T::zeros({n + 1, c})}, maps, c));
}

TEST_CASE("single voxel with feedthrough S6: abss = 12x input") {
  T x = T::from_data({2, 1, 1, 1}, {1.5, -2.0});
  auto p = feedthrough_abss(2, 4);
  T y = abss_forward<double>(nullptr, x, p);
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(18.0).epsilon(1e-12));
  CHECK(y.at({1, 0, 0, 0}) == doctest::Approx(-24.0).epsilon(1e-12));
}

TEST_CASE("feedthrough S6 makes abss 12x identity on arbitrary volumes") {
  Rng rng(13);
  T x = T::uniform({3, 2, 4, 3}, rng, -2, 2);
  auto p = feedthrough_abss(3, 4);
  T y = abss_forward<double>(nullptr, x, p);
  CHECK(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::abs(y.data()[i] - 12.0 * x.data()[i]) < 1e-10);
}

TEST_CASE("abss output shape equals input shape") {
  Rng rng(17);
  Rng prng(19);
  for (auto dims : std::vector<Shape>{{2, 3, 3, 2}, {1, 1, 1, 1}, {4, 2, 2, 5}}) {
    T x = T::uniform(dims, rng, -1, 1);
    auto p = init_abss_params<double>(dims[0], 3, prng);
    CHECK(abss_forward<double>(nullptr, x, p).shape() == dims);
  }
}

TEST_CASE("abss end-to-end gradient vs finite differences") {
  Rng rng(23);
  Rng prng(29);
  T x = T::uniform({2, 3, 3, 2}, rng, -1, 1);
  auto p = init_abss_params<double>(2, 2, prng);
  auto f = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, abss_forward(t, v, p))); };
  CHECK(finite_diff_check(f, x, 1e-4, 1e-3).pass);
  // and through one plane's parameters
  auto fa = [&](Tape<double>* t, const T& v) {
    AbssParams<double> q = p;
    q.coronal.a_log = v;
    return sum(t, silu(t, abss_forward(t, x, q)));
  };
  CHECK(finite_diff_check(fa, p.coronal.a_log, 1e-4, 1e-3).pass);
  auto fc = [&](Tape<double>* t, const T& v) {
    AbssParams<double> q = p;
    q.sagittal.c_proj = v;
    return sum(t, silu(t, abss_forward(t, x, q)));
  };
  CHECK(finite_diff_check(fc, p.sagittal.c_proj, 1e-4, 1e-3).pass);
}

TEST_CASE("plane symmetry: swapping H/W with swapped plane parameters permutes the output") {
  // Under an H<->W swap the sagittal and coronal rearrangements trade places
  // exactly (identical plane tensors), so with parameters moved along the
  // swapped planes their contributions are bit-identical up to the inverse
  // permutation. The axial plane's in-slice flatten transposes under the
  // swap, which reorders its sequences, so it is held order-insensitive
  // (feedthrough) here; the traversal machinery itself is what is checked.
  Rng rng(31);
  Rng prng(37);
  T x = T::uniform({2, 3, 4, 2}, rng, -1, 1);
  AbssParams<double> p;
  p.sagittal = init_ssm_params<double>(2, 3, prng);
  p.coronal = init_ssm_params<double>(2, 3, prng);
  p.axial = feedthrough_params(2, 3);
  T y = abss_forward<double>(nullptr, x, p);

  T xp = permute<double>(nullptr, x, {0, 2, 1, 3});
  AbssParams<double> pp;
  pp.sagittal = p.coronal;
  pp.coronal = p.sagittal;
  pp.axial = p.axial;
  T yp = abss_forward<double>(nullptr, xp, pp);
  T yp_back = permute<double>(nullptr, yp, {0, 2, 1, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == yp_back.data()[i]);
}
