#include "adnnperf/optim.hpp"

#include <cmath>

namespace adnnperf {

void Adam::step(const std::vector<ad::Value>& params, double grad_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const ad::Value& p : params) {
    ad::Node* node = p.raw();
    if (node->grad.data.empty()) continue;  // never touched by backward()
    Moments& mom = state_[node];
    if (mom.m.data.empty()) {
      mom.m = Tensor(node->value.shape);
      mom.v = Tensor(node->value.shape);
    }
    for (std::size_t i = 0; i < node->value.data.size(); ++i) {
      const double g = node->grad.data[i] * grad_scale;
      mom.m.data[i] = beta1_ * mom.m.data[i] + (1.0 - beta1_) * g;
      mom.v.data[i] = beta2_ * mom.v.data[i] + (1.0 - beta2_) * g * g;
      const double mhat = mom.m.data[i] / bc1;
      const double vhat = mom.v.data[i] / bc2;
      node->value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace adnnperf
