#pragma once

#include <vector>

#include "adnnperf/trace.hpp"

// Hardware-independent computational cost accounting. Counts are
// multiply-accumulate based (2 floating-point operations per MAC, the most
// common published convention); element-wise activations, pooling and bias
// additions are not counted. Only a consistent convention matters, since
// every reported number is an increment or a ratio.
namespace adnnperf {

struct LayerShape {
  enum class Kind { conv, dense };
  Kind kind = Kind::conv;
  // conv: kernel k, channels cin -> cout, output spatial hout x wout
  int k = 0, cin = 0, cout = 0, hout = 0, wout = 0;
  // dense: din -> dout
  int din = 0, dout = 0;

  static LayerShape conv(int k, int cin, int cout, int hout, int wout);
  static LayerShape dense(int din, int dout);
};

// Exact integer count represented as a real:
//   conv  = 2 * k^2 * cin * cout * hout * wout
//   dense = 2 * din * dout
double block_flops(const LayerShape& shape);
// A block made of several counted layers costs their sum.
double block_flops(const std::vector<LayerShape>& shapes);

// Per-model cost decomposition: the always-executed prefix/suffix (stem,
// gates, classifier) versus the per-block gated weights W_i.
struct CostProfile {
  std::vector<double> block_weights;  // W_i, index-aligned with blocks
  double stem_flops = 0.0;
  double total = 0.0;  // stem_flops + sum(block_weights), exactly

  static CostProfile make(std::vector<double> weights, double stem);
  void validate() const;
};

// g_f(x): stem plus the weights of every activated block. For early
// termination the trace's activated[] already encodes the executed prefix,
// so the same sum applies.
double hard_cost(const BlockTrace& trace, const CostProfile& profile);

// Differentiable relaxation: stem + sum_i W_i * logistic((g_i - tau_i)/T).
// Smooth everywhere; approaches hard_cost as T -> 0 away from thresholds.
double soft_cost(const std::vector<double>& gate_scores,
                 const std::vector<double>& thresholds,
                 const CostProfile& profile, double temperature);

// Analytic d(soft_cost)/d(gate_scores).
std::vector<double> soft_cost_gradient(const std::vector<double>& gate_scores,
                                       const std::vector<double>& thresholds,
                                       const CostProfile& profile,
                                       double temperature);

// (cost - stem) / (total - stem), mapping [stem, total] onto [0,1].
double normalized_cost(double cost, const CostProfile& profile);

}  // namespace adnnperf
