#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srma/fdcheck.hpp"
#include "srma/loss.hpp"

using namespace srma;
using T = Tensor<double>;

namespace {

T checker_target(Shape shape, int64_t period) {
  std::vector<double> tv(shape_numel(shape), 0.0);
  for (size_t i = 0; i < tv.size(); i += period) tv[i] = 1.0;
  return T::from_data(std::move(shape), std::move(tv));
}

}  // namespace

TEST_CASE("dice_ce fixed values") {
  LossWeights<double> lw;

  // zero logits: CE term is exactly ln 2 regardless of target
  for (int64_t period : {2, 3, 5}) {
    T z = T::zeros({1, 2, 2, 2});
    auto parts = dice_ce_loss<double>(nullptr, z, checker_target({1, 2, 2, 2}, period), lw);
    CHECK(parts.ce_term == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  // saturated correct logits with s -> 0: loss -> 0
  {
    LossWeights<double> lw0;
    lw0.smooth = 1e-9;
    T tgt = checker_target({1, 2, 2, 2}, 2);
    std::vector<double> zv(8);
    for (int64_t i = 0; i < 8; ++i) zv[i] = tgt.data()[i] > 0.5 ? 50.0 : -50.0;
    auto parts = dice_ce_loss<double>(nullptr, T::from_data({1, 2, 2, 2}, zv), tgt, lw0);
    CHECK(parts.total.value() < 1e-6);
  }

  // all-background target, zero logits, s=1: dice = 1 - 1/(sum p + 1)
  {
    T z = T::zeros({1, 2, 2, 2});
    T tgt = T::zeros({1, 2, 2, 2});
    auto parts = dice_ce_loss<double>(nullptr, z, tgt, lw);
    const double sp = 8 * 0.5;
    CHECK(parts.dice_term == doctest::Approx(1.0 - 1.0 / (sp + 1.0)).epsilon(1e-12));
  }

  // errors: shape mismatch and non-binary target
  T z = T::zeros({1, 2, 2, 2});
  CHECK_THROWS(dice_ce_loss<double>(nullptr, z, T::zeros({1, 2, 2, 4}), lw));
  CHECK_THROWS(dice_ce_loss<double>(nullptr, z, T::filled({1, 2, 2, 2}, 0.5), lw));
  LossWeights<double> bad;
  bad.w_dice = 0;
  bad.w_ce = 0;
  CHECK_THROWS(dice_ce_loss<double>(nullptr, z, T::zeros({1, 2, 2, 2}), bad));
}

TEST_CASE("loss is nonnegative and d(loss)/d(logits) matches finite differences") {
  Rng rng(3);
  LossWeights<double> lw;
  for (int rep = 0; rep < 3; ++rep) {
    T z = T::uniform({1, 8, 8, 8}, rng, -2, 2);
    T tgt = checker_target({1, 8, 8, 8}, 2 + rep);
    auto parts = dice_ce_loss<double>(nullptr, z, tgt, lw);
    CHECK(parts.total.value() >= 0.0);
    auto f = [&](Tape<double>* t, const T& v) { return dice_ce_loss(t, v, tgt, lw).total; };
    CHECK(finite_diff_check(f, z, 1e-5, 1e-4).pass);
  }
}

TEST_CASE("total_loss assembly matches a hand-built term sum") {
  NetworkConfig cfg;
  cfg.stage_channels = {2, 4, 8, 16};
  cfg.state_dim = 2;
  cfg.mlp_ratio = 2.0;
  auto w = build_weights<double>(cfg, 5);
  Rng rng(7);
  T x = T::uniform({1, 16, 16, 16}, rng, -0.5, 0.5);
  T target = checker_target({1, 16, 16, 16}, 2);
  auto out = forward<double>(nullptr, x, w, cfg);

  LossWeights<double> lw;
  lw.deep_supervision = {0.5, 1.0, 0.25, 2.0};
  auto got = total_loss<double>(nullptr, out, target, lw);

  double expect = dice_ce_loss<double>(nullptr, out.final_logits, target, lw).total.value();
  for (int64_t i = 1; i <= 4; ++i) {
    T tgt_i = downsample_target_nearest(target, int64_t(1) << i);
    expect += lw.deep_supervision[i - 1] *
              dice_ce_loss<double>(nullptr, out.s[i - 1], tgt_i, lw).total.value();
  }
  CHECK(got.total.value() == doctest::Approx(expect).epsilon(1e-12));

  // zero deep-supervision weights reduce to the final-logits loss alone
  LossWeights<double> lw0;
  lw0.deep_supervision = {0, 0, 0, 0};
  auto only_final = total_loss<double>(nullptr, out, target, lw0);
  CHECK(only_final.total.value() ==
        doctest::Approx(dice_ce_loss<double>(nullptr, out.final_logits, target, lw0).total.value())
            .epsilon(1e-14));
}

TEST_CASE("nearest downsampling preserves binariness and picks floor(i*scale)") {
  T t = checker_target({1, 8, 8, 8}, 3);
  T d = downsample_target_nearest(t, 2);
  CHECK(d.shape() == Shape{1, 4, 4, 4});
  for (int64_t h = 0; h < 4; ++h)
    for (int64_t w = 0; w < 4; ++w)
      for (int64_t dd = 0; dd < 4; ++dd)
        CHECK(d.at({0, h, w, dd}) == t.at({0, 2 * h, 2 * w, 2 * dd}));
}

TEST_CASE("adam: zero gradient leaves weights unchanged at step 1") {
  WeightStore<double> w;
  w.add("p", T::from_data({3}, {1.0, -2.0, 0.5}, true));
  AdamState st;
  AdamConfig cfg;
  adam_step(w, st, cfg);  // no grads accumulated anywhere
  CHECK(w.get("p").at({0}) == 1.0);
  CHECK(w.get("p").at({1}) == -2.0);
  CHECK(w.get("p").at({2}) == 0.5);
  CHECK(st.step == 1);
}

TEST_CASE("adam: first update is -lr * sign(g), eps-damped") {
  for (double g : {0.3, -4.0, 1e-3}) {
    WeightStore<double> w;
    T p = T::from_data({1}, {1.0}, true);
    w.add("p", p);
    p.impl()->ensure_grad();
    p.impl()->grad[0] = g;
    AdamState st;
    AdamConfig cfg;
    cfg.lr = 0.01;
    adam_step(w, st, cfg);
    const double update = w.get("p").value() - 1.0;
    CHECK(update == doctest::Approx(-cfg.lr * (g > 0 ? 1.0 : -1.0)).epsilon(1e-5));
  }
}

TEST_CASE("adam: gradient-scale invariance of the first step in the eps->0 limit") {
  for (double scale : {2.0, 10.0}) {
    auto run = [&](double g) {
      WeightStore<double> w;
      T p = T::from_data({1}, {1.0}, true);
      w.add("p", p);
      p.impl()->ensure_grad();
      p.impl()->grad[0] = g;
      AdamState st;
      AdamConfig cfg;
      cfg.lr = 0.01;
      cfg.eps = 1e-12;
      adam_step(w, st, cfg);
      return w.get("p").value();
    };
    CHECK(std::abs(run(0.37) - run(0.37 * scale)) < 1e-6);
  }
}

TEST_CASE("adam: 200 steps on f(theta)=theta^2 reach |theta| < 1e-2") {
  // Momentum makes the iterate cross zero and oscillate with a decaying
  // envelope (standard underdamped Adam dynamics), so the descent assertion
  // is on the per-window envelope rather than step-to-step monotonicity.
  WeightStore<double> w;
  T p = T::from_data({1}, {1.0}, true);
  w.add("p", p);
  AdamState st;
  AdamConfig cfg;
  cfg.lr = 0.1;
  std::array<double, 4> window_max{0, 0, 0, 0};
  for (int step = 0; step < 200; ++step) {
    // d(theta^2)/dtheta = 2 theta
    p.zero_grad();
    p.impl()->ensure_grad();
    p.impl()->grad[0] = 2.0 * p.value();
    adam_step(w, st, cfg);
    auto& mx = window_max[static_cast<size_t>(step / 50)];
    mx = std::max(mx, std::abs(p.value()));
  }
  CHECK(window_max[1] < window_max[0]);
  CHECK(window_max[2] < window_max[1]);
  CHECK(window_max[3] < window_max[2]);
  CHECK(std::abs(p.value()) < 1e-2);
}

TEST_CASE("adam: shape mismatch and non-finite gradients raise") {
  WeightStore<double> w;
  T p = T::from_data({2}, {1.0, 2.0}, true);
  w.add("p", p);
  AdamState st;
  st.moments["p"] = {std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)};
  AdamConfig cfg;
  CHECK_THROWS(adam_step(w, st, cfg));

  WeightStore<double> w2;
  T q = T::from_data({1}, {1.0}, true);
  w2.add("q", q);
  q.impl()->ensure_grad();
  q.impl()->grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState st2;
  CHECK_THROWS(adam_step(w2, st2, cfg));
}

TEST_CASE("training log line fields are exposed per step") {
  // the overfit CLI logs {step, loss, dice_term, ce_term}; LossParts carries
  // the component values used there
  LossWeights<double> lw;
  T z = T::zeros({1, 2, 2, 2});
  auto parts = dice_ce_loss<double>(nullptr, z, checker_target({1, 2, 2, 2}, 2), lw);
  CHECK(parts.total.value() == doctest::Approx(parts.dice_term + parts.ce_term).epsilon(1e-12));
}
