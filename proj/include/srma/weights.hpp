#pragma once

#include <unordered_map>

#include "srma/tensor.hpp"

namespace srma {

/// Flat name -> tensor map for every learnable parameter, with deterministic
/// (insertion) iteration order.
template <typename S>
class WeightStore {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    require(map_.find(name) == map_.end(), "duplicate weight name: " + name);
    order_.push_back(name);
    auto [it, ok] = map_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  const Tensor<S>& get(const std::string& name) const {
    auto it = map_.find(name);
    require(it != map_.end(), "unknown weight name: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return map_.find(name) != map_.end(); }

  /// Swap in a same-shape tensor (weight loading, parameter substitution).
  void replace(const std::string& name, Tensor<S> t) {
    auto it = map_.find(name);
    require(it != map_.end(), "unknown weight name: " + name);
    require(it->second.shape() == t.shape(), "replace shape mismatch for " + name);
    it->second = std::move(t);
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& name : order_) n += map_.at(name).numel();
    return n;
  }

  void set_requires_grad(bool v) {
    for (const auto& name : order_) map_.at(name).set_requires_grad(v);
  }

  void zero_grads() {
    for (const auto& name : order_) map_.at(name).zero_grad();
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<S>> map_;
};

}  // namespace srma
