#pragma once

#include "srma/blocks.hpp"

// Full SRMA-Mamba assembly: stem, four encoder stages (GSC -> SABMamba) with
// downsampling between stages, a coarse 1x1x1 head on the deepest features,
// three reverse-attention decoder stages, and a final refinement conv plus
// full-resolution resize.

namespace srma {

struct NetworkConfig {
  int64_t in_channels = 1;
  std::vector<int64_t> stage_channels{48, 96, 192, 384};
  int64_t state_dim = 16;
  double mlp_ratio = 4.0;
  double ln_eps = 1e-5;

  int64_t num_stages() const { return static_cast<int64_t>(stage_channels.size()); }

  void validate() const {
    require(in_channels >= 1, "NetworkConfig: in_channels must be >= 1");
    require(num_stages() == 4, "NetworkConfig: exactly four stages required");
    require(state_dim >= 1 && mlp_ratio > 0, "NetworkConfig: invalid SSM/MLP settings");
    for (int64_t i = 0; i < num_stages(); ++i) {
      require(stage_channels[i] > 0, "NetworkConfig: channels must be positive");
      if (i > 0)
        require(stage_channels[i] == 2 * stage_channels[i - 1],
                "NetworkConfig: stage channels must strictly double");
    }
  }

  template <typename S>
  BlockConfig<S> block(int64_t stage) const {
    BlockConfig<S> b;
    b.channels = stage_channels[stage];
    b.state_dim = state_dim;
    b.mlp_ratio = mlp_ratio;
    b.eps = static_cast<S>(ln_eps);
    return b;
  }
};

/// Encoder features f1..f4, stage logit maps S4..S1 and the full-resolution
/// logits. f[i] has stage_channels[i] channels at scale 1/2^(i+1); s[i] is
/// the 1-channel map spatially matching f[i].
template <typename S>
struct StageOutputs {
  std::array<Tensor<S>, 4> f;
  std::array<Tensor<S>, 4> s;
  Tensor<S> final_logits;
};

/// Optional dataflow audit: one (consumer, producer-node) event per consumed
/// stage tensor.
struct ForwardTrace {
  std::vector<std::pair<std::string, const void*>> events;
};

template <typename S>
WeightStore<S> build_weights(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  WeightStore<S> w;
  Rng rng(seed);
  init::conv(w, "stem.conv", cfg.in_channels, cfg.stage_channels[0], 7, rng);
  for (int64_t i = 0; i < 4; ++i) {
    const std::string px = "enc" + std::to_string(i + 1);
    init::gsc(w, px + ".gsc", cfg.stage_channels[i], rng);
    init::sabmamba(w, px + ".sab", cfg.block<S>(i), rng);
    if (i < 3)
      init::conv(w, "down" + std::to_string(i + 1) + ".conv", cfg.stage_channels[i],
                 cfg.stage_channels[i + 1], 2, rng);
  }
  init::conv(w, "coarse.conv", cfg.stage_channels[3], 1, 1, rng);
  for (int64_t i = 3; i >= 1; --i) {
    const std::string px = "srma" + std::to_string(i);
    const int64_t c = cfg.stage_channels[i - 1];
    init::sabmamba(w, px + ".sab_in", cfg.block<S>(i - 1), rng);
    init::conv(w, px + ".conv_att", c, c, 3, rng);
    init::sabmamba(w, px + ".sab_out", cfg.block<S>(i - 1), rng);
    init::conv(w, px + ".conv_ref", c, c, 3, rng);
    init::conv(w, px + ".conv_head", c, 1, 1, rng);
  }
  init::conv(w, "final.conv", 1, 1, 3, rng);
  return w;
}

template <typename S>
int64_t param_count(const NetworkConfig& cfg) {
  return build_weights<S>(cfg, 0).param_count();
}

/// stem -> [GSC -> SABMamba] x 4 with downsampling between stages.
/// Spatial extents must be divisible by 16.
template <typename S>
std::array<Tensor<S>, 4> encode(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                                const NetworkConfig& cfg) {
  require(x.dim() == 4 && x.extent(0) == cfg.in_channels, "encode: input must be [Cin,H,W,D]");
  require(x.extent(1) % 16 == 0 && x.extent(2) % 16 == 0 && x.extent(3) % 16 == 0,
          "encode: spatial extents must be divisible by 16");
  std::array<Tensor<S>, 4> f;
  Tensor<S> t = stem_forward(tape, x, w, "stem");
  for (int64_t i = 0; i < 4; ++i) {
    const std::string px = "enc" + std::to_string(i + 1);
    t = gsc_forward(tape, t, w, px + ".gsc", static_cast<S>(cfg.ln_eps));
    t = sabmamba_forward(tape, t, w, px + ".sab", cfg.block<S>(i));
    f[i] = t;
    if (i < 3) t = downsample(tape, t, w, "down" + std::to_string(i + 1));
  }
  return f;
}

/// 1x1x1 conv, deepest channels -> 1 logit channel.
template <typename S>
Tensor<S> coarse_head(Tape<S>* tape, const Tensor<S>& f4, const WeightStore<S>& w) {
  return conv3d(tape, f4, w.get("coarse.conv.weight"), w.get("coarse.conv.bias"), 1, 0, 1);
}

/// Reverse attention weights A = 1 - sigmoid(S): antitone in S, valued in
/// (0,1), erasing confidently segmented regions from attention.
template <typename S>
Tensor<S> reverse_attention(Tape<S>* tape, const Tensor<S>& s_map) {
  return add_scalar(tape, neg(tape, sigmoid(tape, s_map)), S(1));
}

/// One reverse-attention refinement stage:
///   U   = resize(S_{i+1}) to f_i's scale
///   A   = 1 - sigmoid(U)                      (reverse attention, Eq. 5)
///   G   = SABM(f_i)
///   F   = SABM(Conv3(A . G))
///   R   = F + G                               (residual around attention)
///   S_i = Conv1(SiLU(Conv3(R))) + U           (refinement added to coarse)
template <typename S>
Tensor<S> srma_forward(Tape<S>* tape, const Tensor<S>& f_i, const Tensor<S>& s_next,
                       const WeightStore<S>& w, const std::string& px,
                       const BlockConfig<S>& bc, ForwardTrace* trace = nullptr) {
  require(f_i.dim() == 4 && s_next.dim() == 4 && s_next.extent(0) == 1,
          "srma_forward: expects [C,H,W,D] features and [1,h,w,d] map");
  require(2 * s_next.extent(1) == f_i.extent(1) && 2 * s_next.extent(2) == f_i.extent(2) &&
              2 * s_next.extent(3) == f_i.extent(3),
          "srma_forward: coarse map must be at half the feature scale");
  if (trace) {
    trace->events.emplace_back(px + ":f", f_i.impl());
    trace->events.emplace_back(px + ":s_next", s_next.impl());
  }
  const int64_t c = f_i.extent(0);
  Tensor<S> u =
      trilinear_resize(tape, s_next, {f_i.extent(1), f_i.extent(2), f_i.extent(3)});
  Tensor<S> att = reverse_attention(tape, u);
  Tensor<S> g = sabmamba_forward(tape, f_i, w, px + ".sab_in", bc);
  Tensor<S> gated = mul(tape, repeat_channels(tape, att, c), g);
  Tensor<S> fmid = conv3d(tape, gated, w.get(px + ".conv_att.weight"),
                          w.get(px + ".conv_att.bias"), 1, 1, 1);
  Tensor<S> fout = sabmamba_forward(tape, fmid, w, px + ".sab_out", bc);
  Tensor<S> r = add(tape, fout, g);
  Tensor<S> ref = silu(tape, conv3d(tape, r, w.get(px + ".conv_ref.weight"),
                                    w.get(px + ".conv_ref.bias"), 1, 1, 1));
  Tensor<S> head = conv3d(tape, ref, w.get(px + ".conv_head.weight"),
                          w.get(px + ".conv_head.bias"), 1, 0, 1);
  return add(tape, head, u);
}

/// Full forward pass; all intermediate stage maps are retained for deep
/// supervision.
template <typename S>
StageOutputs<S> forward(Tape<S>* tape, const Tensor<S>& x, const WeightStore<S>& w,
                        const NetworkConfig& cfg, ForwardTrace* trace = nullptr) {
  StageOutputs<S> out;
  out.f = encode(tape, x, w, cfg);
  if (trace) trace->events.emplace_back("coarse:f", out.f[3].impl());
  out.s[3] = coarse_head(tape, out.f[3], w);
  for (int64_t i = 3; i >= 1; --i)
    out.s[i - 1] = srma_forward(tape, out.f[i - 1], out.s[i], w, "srma" + std::to_string(i),
                                cfg.block<S>(i - 1), trace);
  Tensor<S> refined =
      conv3d(tape, out.s[0], w.get("final.conv.weight"), w.get("final.conv.bias"), 1, 1, 1);
  out.final_logits =
      trilinear_resize(tape, refined, {x.extent(1), x.extent(2), x.extent(3)});
  return out;
}

}  // namespace srma
