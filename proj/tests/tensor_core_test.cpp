#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "srma/fdcheck.hpp"
#include "srma/ops.hpp"

using namespace srma;
using T = Tensor<double>;

namespace {

T randt(Rng& rng, Shape shape, double lo = -2, double hi = 2, bool rg = false) {
  return T::uniform(std::move(shape), rng, lo, hi, rg);
}

}  // namespace

TEST_CASE("pointwise fixed values") {
  T z = T::zeros({3});
  CHECK(sigmoid<double>(nullptr, z).at({0}) == 0.5);
  CHECK(silu<double>(nullptr, z).at({0}) == 0.0);
  // softplus vs naive ln(1+e^x)
  for (double x : {-20.0, -1.0, 0.0, 1.0, 20.0}) {
    T t = T::scalar(x);
    const double got = softplus<double>(nullptr, t).value();
    const double ref = std::log1p(std::exp(x));
    CHECK(std::abs(got - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("binary ops require matching shapes; non-finite raises") {
  T a = T::zeros({2, 3});
  T b = T::zeros({3, 2});
  CHECK_THROWS(add<double>(nullptr, a, b));
  T one = T::filled({2}, 1.0);
  T zero = T::zeros({2});
  CHECK_THROWS(div<double>(nullptr, one, zero));  // inf output is an error
}

TEST_CASE("matmul examples") {
  T a = T::from_data({2, 2}, {1, 2, 3, 4});
  T eye = T::from_data({2, 2}, {1, 0, 0, 1});
  T ai = matmul<double>(nullptr, a, eye);
  CHECK(std::memcmp(ai.data(), a.data(), 4 * sizeof(double)) == 0);

  T ones = T::from_data({2, 1}, {1, 1});
  T prod = matmul<double>(nullptr, a, ones);
  CHECK(prod.at({0, 0}) == 3.0);
  CHECK(prod.at({1, 0}) == 7.0);
}

TEST_CASE("matmul gradient: ones x b^T, verified two ways") {
  Rng rng(11);
  T a = randt(rng, {3, 4});
  T b = randt(rng, {4, 5});
  // closed form: d(sum(a b))/da = ones(3,5) x b^T
  Tape<double> tape;
  T al = T::from_data(a.shape(), a.values(), true);
  T loss = sum(&tape, matmul(&tape, al, b));
  tape.backward(loss);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t k = 0; k < 4; ++k) {
      double expect = 0;
      for (int64_t j = 0; j < 5; ++j) expect += b.at({k, j});
      CHECK(al.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  auto rep = finite_diff_check(
      [&](Tape<double>* t, const T& x) { return sum(t, matmul(t, x, b)); }, a, 1e-4, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("conv3d identity kernel and shape arithmetic") {
  Rng rng(3);
  T x = randt(rng, {1, 3, 4, 5});
  T k1 = T::filled({1, 1, 1, 1, 1}, 1.0);
  T y = conv3d<double>(nullptr, x, k1, 1, 0, 1);
  CHECK(y.shape() == x.shape());
  CHECK(std::memcmp(y.data(), x.data(), x.numel() * sizeof(double)) == 0);

  T x8 = randt(rng, {1, 8, 8, 8});
  T k2 = randt(rng, {2, 1, 2, 2, 2});
  T y2 = conv3d<double>(nullptr, x8, k2, 2, 0, 1);
  CHECK(y2.shape() == Shape{2, 4, 4, 4});

  CHECK_THROWS(conv3d<double>(nullptr, randt(rng, {1, 2, 2, 2}), randt(rng, {1, 1, 5, 5, 5}), 1, 0, 1));
}

TEST_CASE("conv3d all-ones 3x3x3 kernel on one-hot input counts the clipped neighborhood") {
  const int64_t H = 4, W = 4, D = 4;
  for (auto [ph, pw, pd] : std::vector<std::array<int64_t, 3>>{{2, 1, 3}, {0, 0, 0}, {3, 3, 3}}) {
    std::vector<double> xv(H * W * D, 0.0);
    xv[(ph * W + pw) * D + pd] = 1.0;
    T x = T::from_data({1, H, W, D}, std::move(xv));
    T k = T::filled({1, 1, 3, 3, 3}, 1.0);
    T y = conv3d<double>(nullptr, x, k, 1, 1, 1);
    // direct summation oracle
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w)
        for (int64_t d = 0; d < D; ++d) {
          const bool near = std::abs(h - ph) <= 1 && std::abs(w - pw) <= 1 && std::abs(d - pd) <= 1;
          CHECK(y.at({0, h, w, d}) == (near ? 1.0 : 0.0));
        }
  }
}

TEST_CASE("conv3d depthwise degenerate case equals pointwise scaling") {
  Rng rng(5);
  const int64_t c = 4;
  T x = randt(rng, {c, 3, 3, 2});
  std::vector<double> kv(c);
  for (auto& v : kv) v = rng.uniform(-2, 2);
  T k = T::from_data({c, 1, 1, 1, 1}, std::vector<double>(kv));
  T y = conv3d<double>(nullptr, x, k, 1, 0, c);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < 18; ++i)
      CHECK(y.data()[ch * 18 + i] == x.data()[ch * 18 + i] * kv[ch]);
}

TEST_CASE("conv3d gradients vs finite differences") {
  Rng rng(17);
  T x = randt(rng, {2, 4, 4, 4}, -1, 1);
  T k = randt(rng, {3, 2, 3, 3, 3}, -0.5, 0.5);
  T b = randt(rng, {3}, -0.5, 0.5);
  auto fx = [&](Tape<double>* t, const T& v) { return sum(t, conv3d(t, v, k, b, 1, 1, 1)); };
  CHECK(finite_diff_check(fx, x, 1e-4, 1e-4).pass);
  auto fk = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, conv3d(t, x, v, b, 1, 1, 1))); };
  CHECK(finite_diff_check(fk, k, 1e-4, 1e-4).pass);
  auto fb = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, conv3d(t, x, k, v, 1, 1, 1))); };
  CHECK(finite_diff_check(fb, b, 1e-4, 1e-4).pass);

  // strided + grouped variants
  T xd = randt(rng, {4, 4, 4, 4}, -1, 1);
  T kd = randt(rng, {4, 1, 3, 3, 3}, -0.5, 0.5);
  auto fdk = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, conv3d(t, xd, v, 1, 1, 4))); };
  CHECK(finite_diff_check(fdk, kd, 1e-4, 1e-4).pass);
  T ks = randt(rng, {2, 4, 2, 2, 2}, -0.5, 0.5);
  auto fsx = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, conv3d(t, v, ks, 2, 0, 1))); };
  CHECK(finite_diff_check(fsx, xd, 1e-4, 1e-4).pass);
}

TEST_CASE("layer_norm constant input gives zeros, stats match oracle") {
  T x = T::filled({4, 6}, 3.25);
  T gamma = T::filled({6}, 1.0);
  T beta = T::zeros({6});
  T y = layer_norm<double>(nullptr, x, 6, gamma, beta, 1e-5);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);

  Rng rng(23);
  T xr = randt(rng, {50, 8});
  T g2 = T::from_data({8}, {1.5, 0.5, 2, 1, 0.25, 3, 1, 0.75});
  T b2 = T::from_data({8}, {0.1, -0.2, 0.3, 0, 1, -1, 0.5, 0.25});
  T yr = layer_norm<double>(nullptr, xr, 8, g2, b2, 1e-12);
  // per-row statistics oracle: mean ~ mean(beta@gamma-weighted)...
  for (int64_t r = 0; r < 50; ++r) {
    // output row mean of (y - beta)/gamma should be ~0 and var ~1
    double m = 0, v = 0;
    for (int64_t i = 0; i < 8; ++i) {
      const double z = (yr.at({r, i}) - b2.at({i})) / g2.at({i});
      m += z;
    }
    m /= 8;
    for (int64_t i = 0; i < 8; ++i) {
      const double z = (yr.at({r, i}) - b2.at({i})) / g2.at({i});
      v += (z - m) * (z - m);
    }
    v /= 8;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
  CHECK_THROWS(layer_norm<double>(nullptr, xr, 7, g2, b2, 1e-5));
}

TEST_CASE("layer_norm gradients vs finite differences") {
  Rng rng(29);
  T x = randt(rng, {6, 5});
  T gamma = randt(rng, {5}, 0.5, 1.5);
  T beta = randt(rng, {5}, -0.5, 0.5);
  auto fx = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, layer_norm(t, v, 5, gamma, beta, 1e-5)));
  };
  CHECK(finite_diff_check(fx, x, 1e-4, 1e-4).pass);
  auto fg = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, layer_norm(t, x, 5, v, beta, 1e-5)));
  };
  CHECK(finite_diff_check(fg, gamma, 1e-4, 1e-4).pass);
  auto fb = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, layer_norm(t, x, 5, gamma, v, 1e-5)));
  };
  CHECK(finite_diff_check(fb, beta, 1e-4, 1e-4).pass);
}

TEST_CASE("instance_norm gradient vs finite differences") {
  Rng rng(31);
  T x = randt(rng, {3, 4, 2, 2});
  T gamma = randt(rng, {3}, 0.5, 1.5);
  T beta = randt(rng, {3}, -0.5, 0.5);
  auto fx = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, instance_norm(t, v, gamma, beta, 1e-5)));
  };
  CHECK(finite_diff_check(fx, x, 1e-4, 1e-4).pass);
  auto fg = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, instance_norm(t, x, v, beta, 1e-5)));
  };
  CHECK(finite_diff_check(fg, gamma, 1e-4, 1e-4).pass);
}

TEST_CASE("trilinear identity, constant, ramp") {
  Rng rng(37);
  T x = randt(rng, {2, 3, 4, 5});
  T same = trilinear_resize<double>(nullptr, x, {3, 4, 5});
  CHECK(std::memcmp(same.data(), x.data(), x.numel() * sizeof(double)) == 0);

  T c = T::filled({1, 2, 2, 2}, 2.75);
  T up = trilinear_resize<double>(nullptr, c, {5, 4, 6});
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up.data()[i] == doctest::Approx(2.75).epsilon(1e-12));

  // doubling a linear ramp along D reproduces the ramp at interior points
  const int64_t D = 8;
  std::vector<double> ramp(D);
  for (int64_t i = 0; i < D; ++i) ramp[i] = 0.5 + 0.25 * static_cast<double>(i);
  T r = T::from_data({1, 1, 1, D}, std::move(ramp));
  T r2 = trilinear_resize<double>(nullptr, r, {1, 1, 2 * D});
  for (int64_t j = 1; j + 1 < 2 * D; ++j) {
    const double src = (j + 0.5) * 0.5 - 0.5;
    const double expect = 0.5 + 0.25 * src;
    CHECK(r2.at({0, 0, 0, j}) == doctest::Approx(expect).epsilon(1e-6));
  }

  CHECK_THROWS(trilinear_resize<double>(nullptr, x, {0, 4, 5}));
}

TEST_CASE("trilinear gradient vs finite differences") {
  Rng rng(41);
  T x = randt(rng, {2, 3, 3, 2});
  auto fup = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, trilinear_resize(t, v, {5, 4, 3})));
  };
  CHECK(finite_diff_check(fup, x, 1e-4, 1e-4).pass);
  auto fdown = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, trilinear_resize(t, v, {2, 2, 2})));
  };
  CHECK(finite_diff_check(fdown, x, 1e-4, 1e-4).pass);
}

TEST_CASE("backward: analytic cases") {
  Rng rng(43);
  // loss = sum(x^2) -> grad = 2x exactly
  T x = randt(rng, {7});
  Tape<double> tape;
  T xl = T::from_data(x.shape(), x.values(), true);
  T loss = sum(&tape, mul(&tape, xl, xl));
  tape.backward(loss);
  for (int64_t i = 0; i < 7; ++i) CHECK(xl.grad()[i] == 2.0 * xl.data()[i]);

  // two uses of the same leaf: gradient sums both paths
  Tape<double> t2;
  T yl = T::from_data({3}, {1, 2, 3}, true);
  T c1 = T::from_data({3}, {2, 2, 2});
  T c2 = T::from_data({3}, {5, 5, 5});
  T l2 = sum(&t2, add(&t2, mul(&t2, yl, c1), mul(&t2, yl, c2)));
  t2.backward(l2);
  for (int64_t i = 0; i < 3; ++i) CHECK(yl.grad()[i] == 7.0);

  // errors: non-scalar loss, node not on tape
  Tape<double> t3;
  T v = T::from_data({2}, {1, 2}, true);
  T w = mul(&t3, v, v);
  CHECK_THROWS(t3.backward(w));
  CHECK_THROWS(t3.backward(v));
}

TEST_CASE("backward: composed op matches finite differences") {
  Rng rng(47);
  T a = randt(rng, {3, 4});
  T b = randt(rng, {4, 2});
  auto fa = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, matmul(t, v, b))); };
  CHECK(finite_diff_check(fa, a, 1e-4, 1e-4).pass);
  auto fb = [&](Tape<double>* t, const T& v) { return sum(t, silu(t, matmul(t, a, v))); };
  CHECK(finite_diff_check(fb, b, 1e-4, 1e-4).pass);
}

TEST_CASE("finite_diff_check contract") {
  T x = T::from_data({4}, {1, -2, 0.5, 3});
  auto rep = finite_diff_check([](Tape<double>* t, const T& v) { return sum(t, v); }, x, 1e-4, 1e-8);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-10);
  CHECK_THROWS(finite_diff_check([](Tape<double>* t, const T& v) { return sum(t, v); }, x, 0.0, 1e-4));
}

TEST_CASE("reshape and permute are exact bijections") {
  Rng rng(53);
  T x = randt(rng, {2, 3, 4, 5});
  T p = permute<double>(nullptr, x, {2, 0, 3, 1});
  CHECK(p.shape() == Shape{4, 2, 5, 3});
  T back = permute<double>(nullptr, p, {1, 3, 0, 2});
  CHECK(back.shape() == x.shape());
  CHECK(std::memcmp(back.data(), x.data(), x.numel() * sizeof(double)) == 0);

  T r = reshape<double>(nullptr, x, {6, 20});
  T rback = reshape<double>(nullptr, r, x.shape());
  CHECK(std::memcmp(rback.data(), x.data(), x.numel() * sizeof(double)) == 0);

  auto fp = [&](Tape<double>* t, const T& v) {
    return sum(t, silu(t, permute(t, v, {2, 0, 3, 1})));
  };
  CHECK(finite_diff_check(fp, x, 1e-4, 1e-4).pass);
}

TEST_CASE("pointwise gradient suite (>=3 instances each)") {
  Rng rng(59);
  for (Shape shape : {Shape{7}, Shape{3, 4}, Shape{2, 3, 2}}) {
    T x = randt(rng, shape);
    for (auto fn : {Pointwise::Sigmoid, Pointwise::Silu, Pointwise::Softplus, Pointwise::Exp,
                    Pointwise::Neg}) {
      auto f = [&](Tape<double>* t, const T& v) { return sum(t, pointwise(t, v, fn)); };
      CHECK(finite_diff_check(f, x, 1e-4, 1e-4).pass);
    }
    T y = randt(rng, shape, 0.5, 2.0);
    auto fm = [&](Tape<double>* t, const T& v) { return sum(t, mul(t, v, y)); };
    CHECK(finite_diff_check(fm, x, 1e-4, 1e-4).pass);
    auto fd = [&](Tape<double>* t, const T& v) { return sum(t, div(t, v, y)); };
    CHECK(finite_diff_check(fd, x, 1e-4, 1e-4).pass);
    auto fs = [&](Tape<double>* t, const T& v) { return sum(t, scale(t, v, 1.7)); };
    CHECK(finite_diff_check(fs, x, 1e-4, 1e-4).pass);
  }
}

TEST_CASE("determinism: identical results across thread counts") {
  Rng rng(61);
  T x = randt(rng, {4, 8, 8, 8});
  T k = randt(rng, {8, 4, 3, 3, 3});
  T b = randt(rng, {8});
  std::vector<double> ref;
  for (int nt : {1, 2, 8}) {
    set_num_threads(nt);
    T y = conv3d<double>(nullptr, x, k, b, 1, 1, 1);
    T g = T::from_data({8}, {1, 0.5, 2, 1, 1, 1, 0.25, 1});
    T bt = T::zeros({8});
    T z = layer_norm<double>(nullptr, reshape<double>(nullptr, y, {y.numel() / 8, 8}), 8, g, bt, 1e-5);
    if (ref.empty()) {
      ref = z.values();
    } else {
      CHECK(std::memcmp(ref.data(), z.data(), ref.size() * sizeof(double)) == 0);
    }
  }
  set_num_threads(2);
}

namespace {

// Direct-summation conv oracle, plain loops.
std::vector<double> conv_oracle(const T& x, const T& k, int64_t stride, int64_t pad,
                                int64_t groups) {
  const int64_t cin = x.extent(0), H = x.extent(1), W = x.extent(2), D = x.extent(3);
  const int64_t cout = k.extent(0), cpg = k.extent(1), kk = k.extent(2);
  const int64_t Ho = (H + 2 * pad - kk) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kk) / stride + 1;
  const int64_t Do = (D + 2 * pad - kk) / stride + 1;
  const int64_t coutpg = cout / groups;
  std::vector<double> out(cout * Ho * Wo * Do, 0.0);
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow)
        for (int64_t od = 0; od < Do; ++od) {
          double acc = 0;
          const int64_t g = co / coutpg;
          for (int64_t cl = 0; cl < cpg; ++cl)
            for (int64_t a = 0; a < kk; ++a)
              for (int64_t b = 0; b < kk; ++b)
                for (int64_t c = 0; c < kk; ++c) {
                  const int64_t ih = oh * stride - pad + a;
                  const int64_t iw = ow * stride - pad + b;
                  const int64_t id = od * stride - pad + c;
                  if (ih < 0 || ih >= H || iw < 0 || iw >= W || id < 0 || id >= D) continue;
                  acc += x.at({g * cpg + cl, ih, iw, id}) *
                         k.at({co, cl, a, b, c});
                }
          out[((co * Ho + oh) * Wo + ow) * Do + od] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv3d equals the direct-summation oracle on degenerate geometries") {
  Rng rng(71);
  struct G {
    Shape xs;
    int64_t cout, k, s, p, g;
  };
  for (const G& geo : {G{{2, 2, 2, 1}, 3, 3, 1, 1, 1}, G{{1, 1, 1, 1}, 2, 3, 1, 1, 1},
                       G{{2, 5, 1, 2}, 2, 3, 1, 1, 1}, G{{3, 4, 4, 2}, 3, 3, 1, 1, 3},
                       G{{2, 6, 6, 6}, 4, 7, 2, 3, 1}, G{{2, 3, 3, 3}, 2, 1, 1, 0, 1},
                       G{{4, 4, 2, 2}, 2, 2, 2, 0, 1}}) {
    T x = randt(rng, geo.xs);
    T k = randt(rng, {geo.cout, geo.xs[0] / geo.g, geo.k, geo.k, geo.k}, -0.6, 0.6);
    T y = conv3d<double>(nullptr, x, k, geo.s, geo.p, geo.g);
    auto ref = conv_oracle(x, k, geo.s, geo.p, geo.g);
    REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    // and gradients on the same geometry
    auto fx = [&](Tape<double>* t, const T& v) {
      return sum(t, silu(t, conv3d(t, v, k, geo.s, geo.p, geo.g)));
    };
    CHECK(finite_diff_check(fx, x, 1e-4, 1e-4).pass);
    auto fk = [&](Tape<double>* t, const T& v) {
      return sum(t, silu(t, conv3d(t, x, v, geo.s, geo.p, geo.g)));
    };
    CHECK(finite_diff_check(fk, k, 1e-4, 1e-4).pass);
  }
}
