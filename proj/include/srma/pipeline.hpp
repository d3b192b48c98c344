#pragma once

#include <functional>

#include "srma/abss.hpp"
#include "srma/fdcheck.hpp"
#include "srma/io.hpp"
#include "srma/loss.hpp"
#include "srma/metrics.hpp"
#include "srma/nifti.hpp"

// End-to-end workflows shared by the CLI and the acceptance suite.

namespace srma {

// ---------------------------------------------------------------------------
// synthetic overfit case
// ---------------------------------------------------------------------------

struct SphereCase {
  Tensor<float> input;   // [1,H,W,D]
  Tensor<float> target;  // [1,H,W,D], binary
  BinaryMask mask;
};

/// Centered-sphere segmentation volume: bright sphere on a dark background
/// with mild noise.
inline SphereCase make_sphere_case(int64_t H, int64_t W, int64_t D, uint64_t seed) {
  Rng rng(seed);
  const double ch = (H - 1) / 2.0, cw = (W - 1) / 2.0, cd = (D - 1) / 2.0;
  const double radius = 0.35 * static_cast<double>(std::min({H, W, D}));
  std::vector<float> in(H * W * D), tg(H * W * D);
  std::vector<uint8_t> mk(H * W * D);
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < W; ++w)
      for (int64_t d = 0; d < D; ++d) {
        const double r = std::sqrt((h - ch) * (h - ch) + (w - cw) * (w - cw) +
                                   (d - cd) * (d - cd));
        const bool inside = r <= radius;
        const int64_t i = (h * W + w) * D + d;
        in[i] = static_cast<float>((inside ? 1.0 : -1.0) + 0.25 * rng.uniform(-1, 1));
        tg[i] = inside ? 1.0f : 0.0f;
        mk[i] = inside ? 1 : 0;
      }
  SphereCase c;
  c.input = Tensor<float>::from_data({1, H, W, D}, std::move(in));
  c.target = Tensor<float>::from_data({1, H, W, D}, std::move(tg));
  c.mask = BinaryMask::create({H, W, D}, std::move(mk));
  return c;
}

/// Threshold logits at probability 0.5 (logit 0); ties go to background.
inline BinaryMask mask_from_logits(const Tensor<float>& logits) {
  std::vector<uint8_t> v(logits.numel());
  const float* d = logits.data();
  for (int64_t i = 0; i < logits.numel(); ++i) v[i] = d[i] > 0.0f ? 1 : 0;
  return BinaryMask::create({logits.extent(1), logits.extent(2), logits.extent(3)},
                            std::move(v));
}

// ---------------------------------------------------------------------------
// overfit loop
// ---------------------------------------------------------------------------

struct OverfitStep {
  int64_t step;
  double loss, dice_term, ce_term;
};

struct OverfitResult {
  double final_dice = 0.0;
  int64_t steps = 0;
};

/// Single-volume training on the synthetic sphere; deterministic for a
/// fixed seed. Logs one record per step through on_step.
inline OverfitResult run_overfit(const NetworkConfig& cfg, int64_t H, int64_t W, int64_t D,
                                 int64_t steps, double lr, uint64_t seed,
                                 const std::function<void(const OverfitStep&)>& on_step) {
  SphereCase data = make_sphere_case(H, W, D, seed + 1);
  auto w = build_weights<float>(cfg, seed);
  w.set_requires_grad(true);
  AdamState st;
  AdamConfig adam;
  adam.lr = lr;
  LossWeights<float> lw;
  for (int64_t step = 1; step <= steps; ++step) {
    Tape<float> tape;
    auto out = forward(&tape, data.input, w, cfg);
    auto loss = total_loss(&tape, out, data.target, lw);
    w.zero_grads();
    tape.backward(loss.total);
    adam_step(w, st, adam);
    if (on_step)
      on_step({step, static_cast<double>(loss.total.value()), loss.dice_term, loss.ce_term});
  }
  w.set_requires_grad(false);
  auto out = forward<float>(nullptr, data.input, w, cfg);
  OverfitResult r;
  r.steps = steps;
  r.final_dice = overlap_metrics(mask_from_logits(out.final_logits), data.mask).dice;
  return r;
}

// ---------------------------------------------------------------------------
// inference / evaluation
// ---------------------------------------------------------------------------

/// Read a volume, run the network, write the thresholded mask. Deterministic:
/// identical weights and input produce a byte-identical output file.
inline void run_infer(const std::string& weights_prefix, const std::string& input_path,
                      const std::string& output_path, double threshold,
                      const NetworkConfig& cfg) {
  NiftiVolume vol = read_nifti(input_path);
  auto w = build_weights<float>(cfg, 0);
  load_weights(w, weights_prefix);
  Tensor<float> x =
      Tensor<float>::from_data({1, vol.dims[0], vol.dims[1], vol.dims[2]}, vol.voxels);
  auto out = forward<float>(nullptr, x, w, cfg);
  const float* d = out.final_logits.data();
  std::vector<uint8_t> mv(out.final_logits.numel());
  for (int64_t i = 0; i < out.final_logits.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(d[i])));
    mv[i] = p > threshold ? 1 : 0;  // ties go to background
  }
  write_nifti_mask(output_path, BinaryMask::create(vol.dims, std::move(mv)), vol.spacing);
}

inline CaseReport run_eval(const std::string& pred_path, const std::string& gt_path,
                           bool spacing_from_header) {
  NiftiVolume pv = read_nifti(pred_path);
  NiftiVolume gv = read_nifti(gt_path);
  BinaryMask pred = mask_from_volume(pv);
  BinaryMask gt = mask_from_volume(gv);
  Spacing sp = spacing_from_header ? gv.spacing : Spacing{1, 1, 1};
  std::string case_id = pred_path;
  if (auto pos = case_id.find_last_of('/'); pos != std::string::npos)
    case_id = case_id.substr(pos + 1);
  if (auto pos = case_id.find('.'); pos != std::string::npos) case_id = case_id.substr(0, pos);
  return evaluate_case(case_id, pred, gt, sp);
}

// ---------------------------------------------------------------------------
// gradient check suite (criterion: elementary ops 1e-4, composites 1e-3)
// ---------------------------------------------------------------------------

struct GradCheck {
  std::string op;
  std::string instance;
  double max_rel_err;
  double tol;
  bool pass;
};

inline std::vector<GradCheck> run_gradient_suite() {
  using T = Tensor<double>;
  std::vector<GradCheck> results;
  const double h = 1e-4;
  auto record = [&](const std::string& op, const std::string& inst, FdReport rep, double tol) {
    results.push_back({op, inst, rep.max_rel_err, tol, rep.max_rel_err < tol});
  };

  {  // pointwise
    Rng rng(11);
    int i = 0;
    for (Shape shape : {Shape{7}, Shape{3, 4}, Shape{2, 3, 2}}) {
      T x = T::uniform(shape, rng, -2, 2);
      for (auto [fn, name] :
           std::vector<std::pair<Pointwise, const char*>>{{Pointwise::Silu, "silu"},
                                                          {Pointwise::Sigmoid, "sigmoid"},
                                                          {Pointwise::Softplus, "softplus"}}) {
        auto f = [&](Tape<double>* t, const T& v) { return sum(t, pointwise(t, v, fn)); };
        record("pointwise", std::string(name) + "#" + std::to_string(i),
               finite_diff_check(f, x, h, 1e-4), 1e-4);
      }
      T y = T::uniform(shape, rng, 0.5, 2.0);
      auto fm = [&](Tape<double>* t, const T& v) { return sum(t, mul(t, v, y)); };
      record("pointwise", "mul#" + std::to_string(i), finite_diff_check(fm, x, h, 1e-4), 1e-4);
      ++i;
    }
  }
  {  // matmul
    Rng rng(13);
    int i = 0;
    for (auto [m, k, n] : std::vector<std::array<int64_t, 3>>{{3, 4, 5}, {1, 7, 2}, {6, 2, 6}}) {
      T a = T::uniform({m, k}, rng, -2, 2);
      T b = T::uniform({k, n}, rng, -2, 2);
      auto fa = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, matmul(t, v, b))); };
      record("matmul", "a#" + std::to_string(i), finite_diff_check(fa, a, h, 1e-4), 1e-4);
      auto fb = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, matmul(t, a, v))); };
      record("matmul", "b#" + std::to_string(i), finite_diff_check(fb, b, h, 1e-4), 1e-4);
      ++i;
    }
  }
  {  // conv3d
    Rng rng(17);
    struct Inst {
      int64_t cin, cout, k, s, p, g;
      Shape xs;
    };
    int i = 0;
    for (const Inst& in : {Inst{2, 3, 3, 1, 1, 1, {2, 4, 4, 4}}, Inst{3, 3, 3, 1, 1, 3, {3, 4, 4, 4}},
                           Inst{4, 2, 2, 2, 0, 1, {4, 4, 4, 4}}}) {
      T x = T::uniform(in.xs, rng, -1, 1);
      T k = T::uniform({in.cout, in.cin / in.g, in.k, in.k, in.k}, rng, -0.5, 0.5);
      T b = T::uniform({in.cout}, rng, -0.5, 0.5);
      auto fx = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, conv3d(t, v, k, b, in.s, in.p, in.g)));
      };
      record("conv3d", "x#" + std::to_string(i), finite_diff_check(fx, x, h, 1e-4), 1e-4);
      auto fk = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, conv3d(t, x, v, b, in.s, in.p, in.g)));
      };
      record("conv3d", "kernel#" + std::to_string(i), finite_diff_check(fk, k, h, 1e-4), 1e-4);
      auto fb = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, conv3d(t, x, k, v, in.s, in.p, in.g)));
      };
      record("conv3d", "bias#" + std::to_string(i), finite_diff_check(fb, b, h, 1e-4), 1e-4);
      ++i;
    }
  }
  {  // layer_norm
    Rng rng(19);
    int i = 0;
    for (auto [rows, c] : std::vector<std::array<int64_t, 2>>{{6, 5}, {1, 8}, {10, 3}}) {
      T x = T::uniform({rows, c}, rng, -2, 2);
      T g = T::uniform({c}, rng, 0.5, 1.5);
      T b = T::uniform({c}, rng, -0.5, 0.5);
      auto fx = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, layer_norm(t, v, v.extent(v.dim() - 1), g, b, 1e-5)));
      };
      record("layer_norm", "x#" + std::to_string(i), finite_diff_check(fx, x, h, 1e-4), 1e-4);
      auto fg = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, layer_norm(t, x, c, v, b, 1e-5)));
      };
      record("layer_norm", "gamma#" + std::to_string(i), finite_diff_check(fg, g, h, 1e-4), 1e-4);
      ++i;
    }
  }
  {  // trilinear_resize
    Rng rng(23);
    int i = 0;
    for (auto [src, dst] : std::vector<std::pair<Shape, std::array<int64_t, 3>>>{
             {{2, 3, 3, 2}, {5, 4, 3}}, {{1, 4, 4, 4}, {2, 2, 2}}, {{2, 2, 5, 3}, {3, 5, 6}}}) {
      T x = T::uniform(src, rng, -2, 2);
      auto f = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, trilinear_resize(t, v, dst)));
      };
      record("trilinear_resize", "#" + std::to_string(i), finite_diff_check(f, x, h, 1e-4), 1e-4);
      ++i;
    }
  }
  {  // selective_scan
    Rng rng(29);
    int i = 0;
    for (auto [L, d, n] : std::vector<std::array<int64_t, 3>>{{5, 3, 4}, {2, 1, 1}, {8, 2, 3}}) {
      Rng prng(100 + i);
      SsmParams<double> p = init_ssm_params<double>(d, n, prng);
      T u = T::uniform({L, d}, rng, -1.5, 1.5);
      auto fu = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, selective_scan(t, v, p)));
      };
      record("selective_scan", "u#" + std::to_string(i), finite_diff_check(fu, u, h, 1e-3), 1e-3);
      auto fa = [&](Tape<double>* t, const T& v) {
        SsmParams<double> q = p;
        q.a_log = v;
        return sum(t, silu(t, selective_scan(t, u, q)));
      };
      record("selective_scan", "a_log#" + std::to_string(i),
             finite_diff_check(fa, p.a_log, h, 1e-3), 1e-3);
      ++i;
    }
  }
  {  // abss_forward
    Rng rng(31);
    int i = 0;
    for (Shape shape : {Shape{2, 3, 3, 2}, Shape{1, 2, 2, 2}, Shape{3, 2, 3, 2}}) {
      Rng prng(200 + i);
      AbssParams<double> p = init_abss_params<double>(shape[0], 2, prng);
      T x = T::uniform(shape, rng, -1, 1);
      auto f = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, abss_forward(t, v, p)));
      };
      record("abss_forward", "x#" + std::to_string(i), finite_diff_check(f, x, h, 1e-3), 1e-3);
      ++i;
    }
  }
  {  // sabmamba_forward / gsc_forward / srma_forward
    for (int i = 0; i < 3; ++i) {
      Rng rng(300 + i);
      BlockConfig<double> bc;
      bc.channels = 2;
      bc.state_dim = 2;
      bc.mlp_ratio = 2.0;
      bc.eps = 1e-5;
      WeightStore<double> w;
      init::sabmamba(w, "sab", bc, rng);
      init::gsc(w, "gsc", 2, rng);
      init::sabmamba(w, "srma.sab_in", bc, rng);
      init::conv(w, "srma.conv_att", 2, 2, 3, rng);
      init::sabmamba(w, "srma.sab_out", bc, rng);
      init::conv(w, "srma.conv_ref", 2, 2, 3, rng);
      init::conv(w, "srma.conv_head", 2, 1, 1, rng);

      T x = T::uniform({2, 2, 2, 2}, rng, -1, 1);
      auto fs = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, sabmamba_forward(t, v, w, "sab", bc)));
      };
      record("sabmamba_forward", "x#" + std::to_string(i), finite_diff_check(fs, x, h, 1e-3),
             1e-3);

      T xg = T::uniform({2, 4, 4, 4}, rng, -1, 1);
      auto fg = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, gsc_forward(t, v, w, "gsc")));
      };
      record("gsc_forward", "x#" + std::to_string(i), finite_diff_check(fg, xg, h, 1e-3), 1e-3);

      T ff = T::uniform({2, 4, 4, 2}, rng, -1, 1);
      T sn = T::uniform({1, 2, 2, 1}, rng, -1, 1);
      auto fr = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, srma_forward(t, v, sn, w, "srma", bc)));
      };
      record("srma_forward", "f#" + std::to_string(i), finite_diff_check(fr, ff, h, 1e-3), 1e-3);
      auto fr2 = [&](Tape<double>* t, const T& v) {
        return sum(t, silu(t, srma_forward(t, ff, v, w, "srma", bc)));
      };
      record("srma_forward", "s#" + std::to_string(i), finite_diff_check(fr2, sn, h, 1e-3), 1e-3);
    }
  }
  {  // dice_ce_loss
    Rng rng(41);
    LossWeights<double> lw;
    for (int i = 0; i < 3; ++i) {
      T z = T::uniform({1, 4, 4, 2}, rng, -2, 2);
      std::vector<double> tv(32, 0.0);
      for (size_t j = 0; j < tv.size(); j += (2 + i)) tv[j] = 1.0;
      T tgt = T::from_data({1, 4, 4, 2}, std::move(tv));
      auto f = [&](Tape<double>* t, const T& v) { return dice_ce_loss(t, v, tgt, lw).total; };
      record("dice_ce_loss", "logits#" + std::to_string(i), finite_diff_check(f, z, h, 1e-4),
             1e-4);
    }
  }
  return results;
}

}  // namespace srma
