#pragma once

#include "adnnperf/tensor.hpp"

// Perturbation budget: the (p, epsilon) ball that defines when a generated
// sample still counts as an unnoticeable transformation of its seed, plus
// the projection operator shared by the GAN pipeline and the iterative
// baseline.
namespace adnnperf {

enum class NormOrder { l2, linf };

struct PerturbationBudget {
  NormOrder norm_order = NormOrder::linf;
  double epsilon = 0.03;

  void validate() const;
};

const char* norm_order_name(NormOrder order);

// p-norm of a single perturbation tensor (any shape, flattened).
double pnorm(const Tensor& delta, NormOrder order);

// True when sample stays inside the budget ball around x (with `slack`
// absolute tolerance on the norm) and every entry lies in [0,1].
bool budget_compliant(const Tensor& x, const Tensor& sample,
                      const PerturbationBudget& budget, double slack = 0.0);

// Projects delta = (x_perturbed - x) onto the epsilon-ball, then clamps the
// result into [0,1] entrywise. Bit-exactly idempotent: the output always
// passes budget_compliant with zero slack, and a compliant input is returned
// verbatim, so clip(clip(s)) == clip(s).
Tensor clip_sample(const Tensor& x, const Tensor& x_perturbed,
                   const PerturbationBudget& budget);

}  // namespace adnnperf
