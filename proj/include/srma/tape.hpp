#pragma once

#include <functional>

#include "srma/tensor.hpp"

namespace srma {

/// Ordered record of executed operations. Ops append their backward rule as
/// they run, so the record is topologically sorted by construction; replaying
/// it in reverse visits each node exactly once. Gradients accumulate
/// additively across fan-out in that fixed reverse order.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(detail::TensorImpl<S>* out, std::function<void()> backward_fn) {
    out->tape_tag = this;
    records_.push_back(std::move(backward_fn));
  }

  size_t size() const { return records_.size(); }

  void clear() { records_.clear(); }

  /// Populate d(loss)/d(leaf) for every requires_grad leaf reachable from
  /// loss. The loss must be a scalar produced on this tape.
  void backward(const Tensor<S>& loss) {
    require(loss.defined(), "backward: undefined loss tensor");
    require(loss.numel() == 1, "backward: loss must be scalar");
    require(loss.impl()->tape_tag == this, "backward: loss node is not on this tape");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = S(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> records_;
};

/// True when the op should register a backward rule.
template <typename S, typename... Ts>
bool tracing(Tape<S>* tape, const Ts&... inputs) {
  if (!tape) return false;
  return (... || inputs.requires_grad());
}

}  // namespace srma
