#pragma once

#include <unordered_map>
#include <vector>

#include "adnnperf/autodiff.hpp"

namespace adnnperf {

// Adaptive-moment first-order optimizer. One instance per network; moment
// state is keyed by parameter node and survives across steps. Per-parameter
// updates are independent, so state-map iteration order cannot affect the
// result.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the gradients currently stored on the params.
  // grad_scale -1.0 turns the update into ascent (used by the discriminator,
  // which maximizes its objective).
  void step(const std::vector<ad::Value>& params, double grad_scale = 1.0);

  void reset() {
    state_.clear();
    t_ = 0;
  }

  double learning_rate() const { return lr_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<ad::Node*, Moments> state_;
};

}  // namespace adnnperf
