#pragma once

#include "srma/ssm.hpp"

// Anatomy-Based Selective Scan: a [C,H,W,D] volume is rearranged into three
// anatomical plane tensors, each plane grid is unfolded into four directional
// sequences (SS2D convention), every sequence runs through the plane's S6,
// the directional outputs fold back through the inverse traversals and sum,
// and the three plane results are added in fixed (sagittal, coronal, axial)
// order.

namespace srma {

enum class Plane { Sagittal, Coronal, Axial };  // height-, width-, depth-indexed

/// f_h = [C,H,W*D], f_w = [C,W,H*D], f_d = [C,D,H*W]; all are lossless
/// permutations of the voxel set (row-major over the trailing two axes).
template <typename S>
Tensor<S> plane_rearrange(Tape<S>* tape, const Tensor<S>& x, Plane plane) {
  require(x.dim() == 4, "plane_rearrange input must be [C,H,W,D]");
  const int64_t c = x.extent(0), H = x.extent(1), W = x.extent(2), D = x.extent(3);
  switch (plane) {
    case Plane::Sagittal:
      return reshape(tape, x, {c, H, W * D});
    case Plane::Coronal:
      return reshape(tape, permute(tape, x, {0, 2, 1, 3}), {c, W, H * D});
    case Plane::Axial:
      return reshape(tape, permute(tape, x, {0, 3, 1, 2}), {c, D, H * W});
  }
  fail("unreachable");
}

/// Inverse of plane_rearrange.
template <typename S>
Tensor<S> plane_restore(Tape<S>* tape, const Tensor<S>& f, Plane plane,
                        std::array<int64_t, 4> dims) {
  const auto [c, H, W, D] = dims;
  switch (plane) {
    case Plane::Sagittal:
      return reshape(tape, f, {c, H, W, D});
    case Plane::Coronal:
      return permute(tape, reshape(tape, f, {c, W, H, D}), {0, 2, 1, 3});
    case Plane::Axial:
      return permute(tape, reshape(tape, f, {c, D, H, W}), {0, 2, 3, 1});
  }
  fail("unreachable");
}

/// Traversal orders of an A x L grid, one bijective index map per direction:
/// 0 row-major, 1 column-major (transposed row-major), 2 and 3 their exact
/// reversals. map[t] is the grid index visited at sequence position t.
struct ScanMaps {
  std::array<std::shared_ptr<const std::vector<int64_t>>, 4> map, inv;
  int64_t a = 0, l = 0;
};

inline ScanMaps build_scan_maps(int64_t a, int64_t l) {
  ScanMaps m;
  m.a = a;
  m.l = l;
  const int64_t n = a * l;
  auto d0 = std::make_shared<std::vector<int64_t>>(n);
  auto d1 = std::make_shared<std::vector<int64_t>>(n);
  auto d2 = std::make_shared<std::vector<int64_t>>(n);
  auto d3 = std::make_shared<std::vector<int64_t>>(n);
  for (int64_t t = 0; t < n; ++t) {
    (*d0)[t] = t;
    const int64_t row = t % a, col = t / a;
    (*d1)[t] = row * l + col;
    (*d2)[t] = n - 1 - t;
    (*d3)[t] = (n - 1 - t) % a * l + (n - 1 - t) / a;
  }
  std::array<std::shared_ptr<std::vector<int64_t>>, 4> fwd{d0, d1, d2, d3};
  for (int k = 0; k < 4; ++k) {
    auto iv = std::make_shared<std::vector<int64_t>>(n);
    for (int64_t t = 0; t < n; ++t) (*iv)[(*fwd[k])[t]] = t;
    m.map[k] = fwd[k];
    m.inv[k] = iv;
  }
  return m;
}

/// Four directional sequences ([A*L, C] each) of one plane tensor, plus the
/// traversal maps needed to fold outputs back.
template <typename S>
struct DirectionalSequences {
  std::array<Tensor<S>, 4> seq;
  ScanMaps maps;
  int64_t c = 0;
};

namespace detail {

/// out[t, ch] = f[ch, map[t]]; backward scatters through inv.
template <typename S>
Tensor<S> seq_from_plane(Tape<S>* tape, const Tensor<S>& f,
                         std::shared_ptr<const std::vector<int64_t>> map,
                         std::shared_ptr<const std::vector<int64_t>> inv) {
  const int64_t c = f.extent(0);
  const int64_t n = f.numel() / c;
  Tensor<S> out = make_out<S>({n, c});
  const S* fd = f.data();
  S* od = out.mutable_data();
  const int64_t* mp = map->data();
  parallel_for(0, n, 512, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const int64_t g = mp[t];
      for (int64_t ch = 0; ch < c; ++ch) od[t * c + ch] = fd[ch * n + g];
    }
  });
  if (tracing(tape, f)) {
    out.set_requires_grad(true);
    auto fi = f.impl_ptr();
    auto oi = out.impl_ptr();
    tape->record(oi.get(), [fi, oi, inv, n, c]() {
      if (oi->grad.empty() || !fi->requires_grad) return;
      fi->ensure_grad();
      const S* g = oi->grad.data();
      S* gf = fi->grad.data();
      const int64_t* iv = inv->data();
      parallel_for(0, n, 512, [&](int64_t lo, int64_t hi) {
        for (int64_t gg = lo; gg < hi; ++gg) {
          const int64_t t = iv[gg];
          for (int64_t ch = 0; ch < c; ++ch) gf[ch * n + gg] += g[t * c + ch];
        }
      });
    });
  }
  return out;
}

/// out[ch, g] = (y0 + y1) + (y2 + y3) read back through each direction's
/// inverse map. Pairwise order keeps the identity-transform case bit-exact.
template <typename S>
Tensor<S> plane_from_seqs(Tape<S>* tape, const std::array<Tensor<S>, 4>& ys,
                          const ScanMaps& maps, int64_t c) {
  const int64_t n = maps.a * maps.l;
  for (const auto& y : ys)
    require(y.dim() == 2 && y.extent(0) == n && y.extent(1) == c,
            "plane_from_seqs: direction output shape mismatch");
  Tensor<S> out = make_out<S>({c, maps.a, maps.l});
  std::array<const S*, 4> yd{ys[0].data(), ys[1].data(), ys[2].data(), ys[3].data()};
  std::array<const int64_t*, 4> iv{maps.inv[0]->data(), maps.inv[1]->data(),
                                   maps.inv[2]->data(), maps.inv[3]->data()};
  S* od = out.mutable_data();
  parallel_for(0, n, 512, [&](int64_t lo, int64_t hi) {
    for (int64_t g = lo; g < hi; ++g) {
      const int64_t t0 = iv[0][g] * c, t1 = iv[1][g] * c, t2 = iv[2][g] * c, t3 = iv[3][g] * c;
      for (int64_t ch = 0; ch < c; ++ch)
        od[ch * n + g] = (yd[0][t0 + ch] + yd[1][t1 + ch]) + (yd[2][t2 + ch] + yd[3][t3 + ch]);
    }
  });
  check_finite(out, "plane_from_seqs");
  const bool need = tracing(tape, ys[0], ys[1], ys[2], ys[3]);
  if (need) {
    out.set_requires_grad(true);
    auto oi = out.impl_ptr();
    std::array<std::shared_ptr<TensorImpl<S>>, 4> yi{ys[0].impl_ptr(), ys[1].impl_ptr(),
                                                     ys[2].impl_ptr(), ys[3].impl_ptr()};
    auto maps_copy = maps;
    tape->record(oi.get(), [oi, yi, maps_copy, n, c]() {
      if (oi->grad.empty()) return;
      const S* g = oi->grad.data();
      for (int k = 0; k < 4; ++k) {
        if (!yi[k]->requires_grad) continue;
        yi[k]->ensure_grad();
        S* gy = yi[k]->grad.data();
        const int64_t* mp = maps_copy.map[k]->data();
        parallel_for(0, n, 512, [&](int64_t lo, int64_t hi) {
          for (int64_t t = lo; t < hi; ++t) {
            const int64_t gg = mp[t];
            for (int64_t ch = 0; ch < c; ++ch) gy[t * c + ch] += g[ch * n + gg];
          }
        });
      }
    });
  }
  return out;
}

}  // namespace detail

/// Unfold a plane tensor into the four directional sequences.
template <typename S>
DirectionalSequences<S> cross_scan(Tape<S>* tape, const Tensor<S>& plane_feat) {
  require(plane_feat.dim() == 3, "cross_scan input must be [C,A,L]");
  DirectionalSequences<S> ds;
  ds.c = plane_feat.extent(0);
  ds.maps = build_scan_maps(plane_feat.extent(1), plane_feat.extent(2));
  for (int k = 0; k < 4; ++k)
    ds.seq[k] = detail::seq_from_plane(tape, plane_feat, ds.maps.map[k], ds.maps.inv[k]);
  return ds;
}

/// Fold four directional outputs back onto the plane grid and sum them.
template <typename S>
Tensor<S> cross_merge(Tape<S>* tape, const std::array<Tensor<S>, 4>& outputs,
                      const ScanMaps& maps, int64_t c) {
  return detail::plane_from_seqs(tape, outputs, maps, c);
}

/// One SsmParams per plane, shared by that plane's four directions.
template <typename S>
struct AbssParams {
  SsmParams<S> sagittal, coronal, axial;

  const SsmParams<S>& for_plane(Plane p) const {
    switch (p) {
      case Plane::Sagittal:
        return sagittal;
      case Plane::Coronal:
        return coronal;
      case Plane::Axial:
        return axial;
    }
    fail("unreachable");
  }
};

template <typename S>
AbssParams<S> init_abss_params(int64_t d, int64_t n, Rng& rng) {
  AbssParams<S> p;
  p.sagittal = init_ssm_params<S>(d, n, rng);
  p.coronal = init_ssm_params<S>(d, n, rng);
  p.axial = init_ssm_params<S>(d, n, rng);
  return p;
}

/// Y = sum over planes of restore(cross_merge(S6(cross_scan(rearrange(x))))).
template <typename S>
Tensor<S> abss_forward(Tape<S>* tape, const Tensor<S>& x, const AbssParams<S>& params) {
  require(x.dim() == 4, "abss_forward input must be [C,H,W,D]");
  const std::array<int64_t, 4> dims{x.extent(0), x.extent(1), x.extent(2), x.extent(3)};
  Tensor<S> acc;
  for (Plane plane : {Plane::Sagittal, Plane::Coronal, Plane::Axial}) {
    Tensor<S> f = plane_rearrange(tape, x, plane);
    DirectionalSequences<S> ds = cross_scan(tape, f);
    std::array<Tensor<S>, 4> ys;
    for (int k = 0; k < 4; ++k) ys[k] = selective_scan(tape, ds.seq[k], params.for_plane(plane));
    Tensor<S> merged = cross_merge(tape, ys, ds.maps, ds.c);
    Tensor<S> restored = plane_restore(tape, merged, plane, dims);
    acc = acc.defined() ? add(tape, acc, restored) : restored;
  }
  return acc;
}

}  // namespace srma
