#pragma once

#include <vector>

#include "adnnperf/adnn.hpp"
#include "adnnperf/budget.hpp"
#include "adnnperf/suite.hpp"
#include "adnnperf/tensor.hpp"

// Per-sample iterative baseline: projected gradient ascent on the target's
// soft computational cost, minus a small perturbation penalty. Where the
// learned generator pays its optimization cost once at training time, this
// baseline pays per sample — the comparison axis for every efficiency and
// equal-time-budget measurement.
namespace adnnperf {

struct IterConfig {
  int max_iterations = 300;
  double balance_weight = 1e-6;  // weight of the perturbation-norm penalty
  // Per-iteration step. 0 means epsilon/10: sign steps for Linf, normalized
  // gradient steps for L2.
  double step_size = 0.0;
  double temperature = 0.1;  // soft-cost gate temperature
  PerturbationBudget budget;

  double effective_step() const;
  void validate() const;  // ConfigError
};

struct IterAttackResult {
  Tensor x_bar;          // [C,H,W]: the best iterate found
  double seconds = 0.0;  // wall clock for the whole optimization loop
  // Set when a non-finite objective or gradient cut the loop short; x_bar is
  // still the best iterate seen up to that point.
  bool gradient_warning = false;
  // Best objective seen so far, recorded once per gradient step plus once
  // for the final iterate; never decreasing.
  std::vector<double> objective_trajectory;
};

// Runs up to max_iterations projected-gradient steps from x (a single [C,H,W]
// sample in [0,1]) and returns the iterate with the highest objective
// soft_cost(x_bar) - balance_weight * ||x_bar - x||_p. Every iterate passes
// through the same projection operator as the learned generator, so the
// result satisfies the identical budget guarantees. Deterministic: no
// randomness anywhere in the loop.
IterAttackResult iterative_attack(const AdnnModel& model, const Tensor& x,
                                  const IterConfig& config);

// Applies iterative_attack to each row of seeds [N,C,H,W] sequentially (the
// per-sample wall clock is the point of this producer) and packages the
// results in the same suite schema the learned generator emits.
TestSuite baseline_suite(const AdnnModel& model, const Tensor& seeds,
                         const IterConfig& config);

}  // namespace adnnperf
