#pragma once

#include "srma/network.hpp"

namespace srma {

template <typename S>
struct LossWeights {
  S w_dice = S(1);
  S w_ce = S(1);
  S smooth = S(1);
  std::array<S, 4> deep_supervision{S(1), S(1), S(1), S(1)};  // for S1..S4

  void validate() const {
    require(w_dice >= S(0) && w_ce >= S(0) && smooth >= S(0), "loss weights must be nonnegative");
    require(w_dice + w_ce > S(0), "w_dice + w_ce must be positive");
    for (S v : deep_supervision) require(v >= S(0), "deep supervision weights must be nonnegative");
  }
};

template <typename S>
struct LossParts {
  Tensor<S> total;
  double dice_term = 0.0;  // unweighted component values, for logging
  double ce_term = 0.0;
};

template <typename S>
void require_binary(const Tensor<S>& t) {
  const S* d = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    require(d[i] == S(0) || d[i] == S(1), "target must be strictly binary");
}

/// Dice + binary cross-entropy on logits. p = sigmoid(logits);
/// dice = 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s); ce in stable logit
/// form; loss = w_dice*dice + w_ce*ce.
template <typename S>
LossParts<S> dice_ce_loss(Tape<S>* tape, const Tensor<S>& logits, const Tensor<S>& target,
                          const LossWeights<S>& lw) {
  require(logits.shape() == target.shape(), "dice_ce_loss shape mismatch");
  lw.validate();
  require_binary(target);
  Tensor<S> p = sigmoid(tape, logits);
  Tensor<S> inter = sum(tape, mul(tape, p, target));
  Tensor<S> sp = sum(tape, p);
  Tensor<S> sg = sum(tape, target);
  Tensor<S> num = add_scalar(tape, scale(tape, inter, S(2)), lw.smooth);
  Tensor<S> den = add_scalar(tape, add(tape, sp, sg), lw.smooth);
  Tensor<S> dice = add_scalar(tape, neg(tape, div(tape, num, den)), S(1));
  Tensor<S> ce = bce_with_logits_mean(tape, logits, target);
  LossParts<S> parts;
  parts.dice_term = static_cast<double>(dice.value());
  parts.ce_term = static_cast<double>(ce.value());
  parts.total = add(tape, scale(tape, dice, lw.w_dice), scale(tape, ce, lw.w_ce));
  return parts;
}

/// Nearest-neighbor target downsampling by an integer factor per axis
/// (src index = floor(dst * factor)); preserves binariness exactly.
template <typename S>
Tensor<S> downsample_target_nearest(const Tensor<S>& target, int64_t factor) {
  require(target.dim() == 4 && target.extent(0) == 1, "target must be [1,H,W,D]");
  const int64_t H = target.extent(1), W = target.extent(2), D = target.extent(3);
  require(H % factor == 0 && W % factor == 0 && D % factor == 0,
          "target extents must divide the downsample factor");
  const int64_t Ho = H / factor, Wo = W / factor, Do = D / factor;
  std::vector<S> out(static_cast<size_t>(Ho * Wo * Do));
  const S* td = target.data();
  for (int64_t h = 0; h < Ho; ++h)
    for (int64_t w = 0; w < Wo; ++w)
      for (int64_t d = 0; d < Do; ++d)
        out[(h * Wo + w) * Do + d] = td[((h * factor) * W + w * factor) * D + d * factor];
  return Tensor<S>::from_data({1, Ho, Wo, Do}, std::move(out));
}

/// Deep-supervised total: loss(final) + sum_i dsw_i * loss(S_i, target at
/// S_i's scale), i = 1..4 in ascending order.
template <typename S>
LossParts<S> total_loss(Tape<S>* tape, const StageOutputs<S>& out, const Tensor<S>& target,
                        const LossWeights<S>& lw) {
  LossParts<S> fin = dice_ce_loss(tape, out.final_logits, target, lw);
  Tensor<S> acc = fin.total;
  for (int64_t i = 1; i <= 4; ++i) {
    if (lw.deep_supervision[i - 1] == S(0)) continue;
    Tensor<S> tgt = downsample_target_nearest(target, int64_t(1) << i);
    LossParts<S> li = dice_ce_loss(tape, out.s[i - 1], tgt, lw);
    acc = add(tape, acc, scale(tape, li.total, lw.deep_supervision[i - 1]));
  }
  LossParts<S> parts;
  parts.total = acc;
  parts.dice_term = fin.dice_term;
  parts.ce_term = fin.ce_term;
  return parts;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moment buffers (kept in double) plus the shared step count.
struct AdamState {
  int64_t step = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

/// Standard bias-corrected Adam update, in place on the weight store, in
/// deterministic name order. Parameters without an accumulated gradient are
/// treated as having zero gradient.
template <typename S>
void adam_step(WeightStore<S>& w, AdamState& st, const AdamConfig& cfg) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (const auto& name : w.names()) {
    const Tensor<S>& p = w.get(name);
    const int64_t n = p.numel();
    auto& mv = st.moments[name];
    if (mv.first.empty()) {
      mv.first.assign(n, 0.0);
      mv.second.assign(n, 0.0);
    }
    require(static_cast<int64_t>(mv.first.size()) == n, "adam state shape mismatch: " + name);
    const bool has_g = p.has_grad();
    const S* g = has_g ? p.grad().data() : nullptr;
    S* data = const_cast<Tensor<S>&>(p).mutable_data();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = has_g ? static_cast<double>(g[i]) : 0.0;
      require(std::isfinite(gi), "adam_step: non-finite gradient in " + name);
      mv.first[i] = cfg.beta1 * mv.first[i] + (1.0 - cfg.beta1) * gi;
      mv.second[i] = cfg.beta2 * mv.second[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mv.first[i] / bc1;
      const double vhat = mv.second[i] / bc2;
      data[i] = static_cast<S>(static_cast<double>(data[i]) -
                               cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace srma
