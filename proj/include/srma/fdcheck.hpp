#pragma once

#include <functional>

#include "srma/ops.hpp"

namespace srma {

struct FdReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int64_t coords_checked = 0;
};

/// Central-difference check of the tape gradient of a scalar-valued function
/// f(tape, x) with respect to x. Runs in the precision of S; gradient
/// verification is meaningful in double. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
template <typename S, typename F>
FdReport finite_diff_check(F&& f, const Tensor<S>& x, double h, double tol) {
  require(h > 0.0, "finite_diff_check: step h must be positive");
  require(tol > 0.0, "finite_diff_check: tolerance must be positive");

  // analytic gradient
  Tensor<S> leaf = Tensor<S>::from_data(x.shape(), x.values(), true);
  Tape<S> tape;
  Tensor<S> loss = f(&tape, leaf);
  require(loss.numel() == 1, "finite_diff_check: f must be scalar-valued");
  tape.backward(loss);
  std::vector<S> analytic = leaf.has_grad() ? leaf.grad() : std::vector<S>(x.numel(), S(0));

  FdReport rep;
  rep.coords_checked = x.numel();
  std::vector<S> base = x.values();
  for (int64_t i = 0; i < x.numel(); ++i) {
    std::vector<S> vp = base, vm = base;
    vp[i] = static_cast<S>(static_cast<double>(vp[i]) + h);
    vm[i] = static_cast<S>(static_cast<double>(vm[i]) - h);
    const double fp =
        static_cast<double>(f(nullptr, Tensor<S>::from_data(x.shape(), std::move(vp))).value());
    const double fm =
        static_cast<double>(f(nullptr, Tensor<S>::from_data(x.shape(), std::move(vm))).value());
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(analytic[i]);
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace srma
