#pragma once

#include "srma/abss.hpp"
#include "srma/weights.hpp"

// Composite building blocks, all pure functions of (input, named weights).
// "Linear layer" on volumetric tensors means per-voxel channel mixing, i.e.
// a matmul over the flattened [C, H*W*D] view.

namespace srma {

template <typename S>
struct BlockConfig {
  int64_t channels = 0;
  int64_t state_dim = 16;
  double mlp_ratio = 4.0;
  S eps = S(1e-5);

  void validate() const {
    require(channels > 0, "BlockConfig: channels must be positive");
    require(mlp_ratio > 0, "BlockConfig: mlp_ratio must be positive");
    require(state_dim > 0, "BlockConfig: state_dim must be positive");
  }

  int64_t mlp_hidden() const {
    return std::max<int64_t>(1, static_cast<int64_t>(std::llround(mlp_ratio * channels)));
  }
};

// ---------------------------------------------------------------------------
// registration (Kaiming-uniform fan-in weights, zero biases, unit gammas)
// ---------------------------------------------------------------------------

namespace init {

// Kaiming-uniform over fan-in, U(+-sqrt(1/fan_in)) (the PyTorch conv/linear
// convention); biases start at zero.

template <typename S>
void linear(WeightStore<S>& w, const std::string& px, int64_t cin, int64_t cout, Rng& rng) {
  const double b = std::sqrt(1.0 / static_cast<double>(cin));
  w.add(px + ".weight", Tensor<S>::uniform({cout, cin}, rng, -b, b));
  w.add(px + ".bias", Tensor<S>::zeros({cout}));
}

template <typename S>
void conv(WeightStore<S>& w, const std::string& px, int64_t cin_per_group, int64_t cout,
          int64_t k, Rng& rng) {
  const double fan_in = static_cast<double>(cin_per_group * k * k * k);
  const double b = std::sqrt(1.0 / fan_in);
  w.add(px + ".weight", Tensor<S>::uniform({cout, cin_per_group, k, k, k}, rng, -b, b));
  w.add(px + ".bias", Tensor<S>::zeros({cout}));
}

/// For convs feeding a normalization, where a bias would cancel exactly.
template <typename S>
void conv_nobias(WeightStore<S>& w, const std::string& px, int64_t cin_per_group,
                 int64_t cout, int64_t k, Rng& rng) {
  const double fan_in = static_cast<double>(cin_per_group * k * k * k);
  const double b = std::sqrt(1.0 / fan_in);
  w.add(px + ".weight", Tensor<S>::uniform({cout, cin_per_group, k, k, k}, rng, -b, b));
}

template <typename S>
void norm(WeightStore<S>& w, const std::string& px, int64_t c) {
  w.add(px + ".gamma", Tensor<S>::filled({c}, S(1)));
  w.add(px + ".beta", Tensor<S>::zeros({c}));
}

template <typename S>
void ssm(WeightStore<S>& w, const std::string& px, int64_t d, int64_t n, Rng& rng) {
  SsmParams<S> p = init_ssm_params<S>(d, n, rng);
  w.add(px + ".a_log", p.a_log);
  w.add(px + ".d_skip", p.d_skip);
  w.add(px + ".dt_in.weight", p.dt_in);
  w.add(px + ".dt_out.weight", p.dt_out);
  w.add(px + ".dt_out.bias", p.dt_bias);
  w.add(px + ".b_proj.weight", p.b_proj);
  w.add(px + ".c_proj.weight", p.c_proj);
}

template <typename S>
void abm(WeightStore<S>& w, const std::string& px, const BlockConfig<S>& cfg, Rng& rng) {
  const int64_t c = cfg.channels;
  linear(w, px + ".proj_in", c, c, rng);
  conv(w, px + ".dw", 1, c, 3, rng);  // depthwise, groups = C
  linear(w, px + ".pw", c, c, rng);
  ssm(w, px + ".ssm_sag", c, cfg.state_dim, rng);
  ssm(w, px + ".ssm_cor", c, cfg.state_dim, rng);
  ssm(w, px + ".ssm_axi", c, cfg.state_dim, rng);
  norm(w, px + ".ln", c);
  linear(w, px + ".proj_out", c, c, rng);
}

template <typename S>
void sabmamba(WeightStore<S>& w, const std::string& px, const BlockConfig<S>& cfg, Rng& rng) {
  norm(w, px + ".ln1", cfg.channels);
  abm(w, px + ".abm", cfg, rng);
  norm(w, px + ".ln2", cfg.channels);
  linear(w, px + ".mlp.fc1", cfg.channels, cfg.mlp_hidden(), rng);
  linear(w, px + ".mlp.fc2", cfg.mlp_hidden(), cfg.channels, rng);
}

template <typename S>
void gsc(WeightStore<S>& w, const std::string& px, int64_t c, Rng& rng) {
  conv_nobias(w, px + ".conv_a", c, c, 3, rng);
  norm(w, px + ".norm_a", c);
  conv_nobias(w, px + ".conv_b", c, c, 1, rng);
  norm(w, px + ".norm_b", c);
  conv(w, px + ".conv_out", c, c, 3, rng);
}

}  // namespace init

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Tensor<S> linear_ch(Tape<S>* tape, const Tensor<S>& x2d, const WeightStore<S>& w,
                    const std::string& px) {
  return add_bias_ch0(tape, matmul(tape, w.get(px + ".weight"), x2d), w.get(px + ".bias"));
}

/// Layer normalization over the channel axis of [C,H,W,D].
template <typename S>
Tensor<S> layer_norm_ch(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                        const std::string& px, S eps) {
  const int64_t c = x.extent(0);
  const int64_t v = x.numel() / c;
  Tensor<S> xt = permute(tape, reshape(tape, x, {c, v}), {1, 0});
  Tensor<S> ln = layer_norm(tape, xt, c, w.get(px + ".gamma"), w.get(px + ".beta"), eps);
  return reshape(tape, permute(tape, ln, {1, 0}), x.shape());
}

template <typename S>
SsmParams<S> ssm_view(const WeightStore<S>& w, const std::string& px, int64_t d, int64_t n) {
  SsmParams<S> p;
  p.d = d;
  p.n = n;
  p.r = dt_rank_for(d);
  p.a_log = w.get(px + ".a_log");
  p.d_skip = w.get(px + ".d_skip");
  p.dt_in = w.get(px + ".dt_in.weight");
  p.dt_out = w.get(px + ".dt_out.weight");
  p.dt_bias = w.get(px + ".dt_out.bias");
  p.b_proj = w.get(px + ".b_proj.weight");
  p.c_proj = w.get(px + ".c_proj.weight");
  return p;
}

template <typename S>
AbssParams<S> abss_view(const WeightStore<S>& w, const std::string& px,
                        const BlockConfig<S>& cfg) {
  AbssParams<S> p;
  p.sagittal = ssm_view(w, px + ".ssm_sag", cfg.channels, cfg.state_dim);
  p.coronal = ssm_view(w, px + ".ssm_cor", cfg.channels, cfg.state_dim);
  p.axial = ssm_view(w, px + ".ssm_axi", cfg.channels, cfg.state_dim);
  return p;
}

}  // namespace detail

/// ABM: linear -> depthwise separable conv -> SiLU -> ABSS -> LN -> linear.
/// Shape preserving.
template <typename S>
Tensor<S> abm_forward(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                      const std::string& px, const BlockConfig<S>& cfg) {
  const int64_t c = x.extent(0);
  require(c == cfg.channels, "abm_forward channel mismatch");
  const int64_t v = x.numel() / c;
  Tensor<S> t = detail::linear_ch(tape, reshape(tape, x, {c, v}), w, px + ".proj_in");
  t = conv3d(tape, reshape(tape, t, x.shape()), w.get(px + ".dw.weight"),
             w.get(px + ".dw.bias"), 1, 1, c);
  t = detail::linear_ch(tape, reshape(tape, t, {c, v}), w, px + ".pw");
  t = silu(tape, reshape(tape, t, x.shape()));
  t = abss_forward(tape, t, detail::abss_view(w, px, cfg));
  t = detail::layer_norm_ch(tape, t, w, px + ".ln", cfg.eps);
  t = detail::linear_ch(tape, reshape(tape, t, {c, v}), w, px + ".proj_out");
  return reshape(tape, t, x.shape());
}

/// x1 = x + ABM(LN(x)); x2 = x1 + MLP(LN(x1)). MLP is per-voxel
/// linear(C -> ratio*C) -> SiLU -> linear(-> C).
template <typename S>
Tensor<S> sabmamba_forward(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                           const std::string& px, const BlockConfig<S>& cfg) {
  Tensor<S> x1 = add(tape, x,
                     abm_forward(tape, detail::layer_norm_ch(tape, x, w, px + ".ln1", cfg.eps),
                                 w, px + ".abm", cfg));
  Tensor<S> ln2 = detail::layer_norm_ch(tape, x1, w, px + ".ln2", cfg.eps);
  const int64_t c = x.extent(0);
  const int64_t v = x.numel() / c;
  Tensor<S> h = silu(tape, detail::linear_ch(tape, reshape(tape, ln2, {c, v}), w, px + ".mlp.fc1"));
  Tensor<S> m = detail::linear_ch(tape, h, w, px + ".mlp.fc2");
  return add(tape, x1, reshape(tape, m, x.shape()));
}

/// Gated spatial convolution: y = x + Conv3(phi(Conv3(x)) . phi(Conv1(x))),
/// phi = per-channel instance norm + SiLU.
template <typename S>
Tensor<S> gsc_forward(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                      const std::string& px, S eps = S(1e-5)) {
  Tensor<S> a = conv3d(tape, x, w.get(px + ".conv_a.weight"), 1, 1, 1);
  a = silu(tape, instance_norm(tape, a, w.get(px + ".norm_a.gamma"), w.get(px + ".norm_a.beta"), eps));
  Tensor<S> b = conv3d(tape, x, w.get(px + ".conv_b.weight"), 1, 0, 1);
  b = silu(tape, instance_norm(tape, b, w.get(px + ".norm_b.gamma"), w.get(px + ".norm_b.beta"), eps));
  Tensor<S> g = mul(tape, a, b);
  Tensor<S> o = conv3d(tape, g, w.get(px + ".conv_out.weight"), w.get(px + ".conv_out.bias"), 1, 1, 1);
  return add(tape, x, o);
}

/// Stem: strided k=7 conv, in_channels -> stage-1 channels, halves every
/// spatial extent. Extents must be even.
template <typename S>
Tensor<S> stem_forward(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                       const std::string& px) {
  require(x.dim() == 4, "stem input must be [C,H,W,D]");
  require(x.extent(1) % 2 == 0 && x.extent(2) % 2 == 0 && x.extent(3) % 2 == 0,
          "stem requires even spatial extents");
  return conv3d(tape, x, w.get(px + ".conv.weight"), w.get(px + ".conv.bias"), 2, 3, 1);
}

/// Strided 2x2x2 conv, C -> 2C, halves every spatial extent.
template <typename S>
Tensor<S> downsample(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                     const std::string& px) {
  require(x.dim() == 4, "downsample input must be [C,H,W,D]");
  require(x.extent(1) % 2 == 0 && x.extent(2) % 2 == 0 && x.extent(3) % 2 == 0,
          "downsample requires even spatial extents");
  return conv3d(tape, x, w.get(px + ".conv.weight"), w.get(px + ".conv.bias"), 2, 0, 1);
}

}  // namespace srma
