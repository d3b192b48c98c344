#pragma once

#include <cmath>
#include <memory>
#include <utility>

#include "srma/common.hpp"
#include "srma/kernels.hpp"
#include "srma/parallel.hpp"
#include "srma/rng.hpp"

namespace srma {

namespace detail {

template <typename S>
struct TensorImpl {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  const void* tape_tag = nullptr;  // tape that produced this node, if any

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

/// Shared-ownership handle to a dense nd-array. Values are immutable after
/// creation except for the grad slot (and explicit in-place optimizer
/// updates between tape lifetimes).
template <typename S>
class Tensor {
 public:
  using Impl = detail::TensorImpl<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S value, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    int64_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    int64_t n = shape_numel(shape);
    require(n == static_cast<int64_t>(data.size()),
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(S value) { return from_data({1}, {value}); }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false) {
    int64_t n = shape_numel(shape);
    std::vector<S> data(static_cast<size_t>(n));
    for (auto& v : data) v = static_cast<S>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(data), requires_grad);
  }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int64_t dim() const { return static_cast<int64_t>(p_->shape.size()); }
  int64_t extent(int64_t axis) const { return p_->shape[static_cast<size_t>(axis)]; }
  int64_t numel() const { return p_->numel(); }

  const S* data() const { return p_->data.data(); }
  S* mutable_data() { return p_->data.data(); }
  const std::vector<S>& values() const { return p_->data; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool v) { p_->requires_grad = v; }

  bool has_grad() const { return !p_->grad.empty(); }
  const std::vector<S>& grad() const {
    require(has_grad(), "tensor has no gradient");
    return p_->grad;
  }
  void zero_grad() { p_->grad.clear(); }

  S value() const {
    require(numel() == 1, "value() requires a scalar tensor");
    return p_->data[0];
  }

  S at(std::initializer_list<int64_t> idx) const {
    int64_t lin = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      lin = lin * p_->shape[k] + i;
      ++k;
    }
    return p_->data[static_cast<size_t>(lin)];
  }

  Impl* impl() const { return p_.get(); }
  std::shared_ptr<Impl> impl_ptr() const { return p_; }

  /// Deep copy of values (gradient state is not copied).
  Tensor clone() const {
    auto t = from_data(p_->shape, p_->data, p_->requires_grad);
    return t;
  }

 private:
  explicit Tensor(std::shared_ptr<Impl> p) : p_(std::move(p)) {}
  std::shared_ptr<Impl> p_;
};

/// NaN/Inf anywhere in a result is an error, not a state.
template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  const int64_t bad = kern::active<S>().find_nonfinite(t.data(), t.numel());
  if (bad >= 0)
    fail(std::string(op) + ": non-finite output at index " + std::to_string(bad));
}

}  // namespace srma
