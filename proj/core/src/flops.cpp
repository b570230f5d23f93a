#include "adnnperf/flops.hpp"

#include <cmath>
#include <string>

#include "adnnperf/errors.hpp"

namespace adnnperf {

namespace {
double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace

LayerShape LayerShape::conv(int k, int cin, int cout, int hout, int wout) {
  LayerShape s;
  s.kind = Kind::conv;
  s.k = k;
  s.cin = cin;
  s.cout = cout;
  s.hout = hout;
  s.wout = wout;
  return s;
}

LayerShape LayerShape::dense(int din, int dout) {
  LayerShape s;
  s.kind = Kind::dense;
  s.din = din;
  s.dout = dout;
  return s;
}

double block_flops(const LayerShape& shape) {
  if (shape.kind == LayerShape::Kind::conv) {
    if (shape.k <= 0 || shape.cin <= 0 || shape.cout <= 0 || shape.hout <= 0 ||
        shape.wout <= 0) {
      throw ConfigError("block_flops: non-positive convolution dimension");
    }
    return 2.0 * shape.k * shape.k * shape.cin * shape.cout * shape.hout * shape.wout;
  }
  if (shape.din <= 0 || shape.dout <= 0) {
    throw ConfigError("block_flops: non-positive dense dimension");
  }
  return 2.0 * shape.din * shape.dout;
}

double block_flops(const std::vector<LayerShape>& shapes) {
  double total = 0.0;
  for (const LayerShape& s : shapes) total += block_flops(s);
  return total;
}

CostProfile CostProfile::make(std::vector<double> weights, double stem) {
  CostProfile p;
  p.block_weights = std::move(weights);
  p.stem_flops = stem;
  p.total = stem;
  for (double w : p.block_weights) p.total += w;
  p.validate();
  return p;
}

void CostProfile::validate() const {
  if (stem_flops < 0.0) throw ConfigError("CostProfile: negative stem_flops");
  double sum = stem_flops;
  for (double w : block_weights) {
    if (w < 0.0) throw ConfigError("CostProfile: negative block weight");
    sum += w;
  }
  if (sum != total) {
    throw ConfigError("CostProfile: total " + std::to_string(total) +
                      " != stem + sum(weights) " + std::to_string(sum));
  }
}

double hard_cost(const BlockTrace& trace, const CostProfile& profile) {
  if (trace.activated.size() != profile.block_weights.size()) {
    throw ShapeError("hard_cost: trace has " + std::to_string(trace.activated.size()) +
                     " blocks, profile has " +
                     std::to_string(profile.block_weights.size()));
  }
  double cost = profile.stem_flops;
  for (std::size_t i = 0; i < trace.activated.size(); ++i) {
    if (trace.activated[i]) cost += profile.block_weights[i];
  }
  return cost;
}

double soft_cost(const std::vector<double>& gate_scores,
                 const std::vector<double>& thresholds,
                 const CostProfile& profile, double temperature) {
  if (temperature <= 0.0) throw ConfigError("soft_cost: temperature must be positive");
  if (gate_scores.size() != profile.block_weights.size() ||
      thresholds.size() != profile.block_weights.size()) {
    throw ShapeError("soft_cost: gate/threshold/weight length mismatch");
  }
  double cost = profile.stem_flops;
  for (std::size_t i = 0; i < gate_scores.size(); ++i) {
    cost += profile.block_weights[i] *
            logistic((gate_scores[i] - thresholds[i]) / temperature);
  }
  return cost;
}

std::vector<double> soft_cost_gradient(const std::vector<double>& gate_scores,
                                       const std::vector<double>& thresholds,
                                       const CostProfile& profile,
                                       double temperature) {
  if (temperature <= 0.0)
    throw ConfigError("soft_cost_gradient: temperature must be positive");
  if (gate_scores.size() != profile.block_weights.size() ||
      thresholds.size() != profile.block_weights.size()) {
    throw ShapeError("soft_cost_gradient: gate/threshold/weight length mismatch");
  }
  std::vector<double> grad(gate_scores.size());
  for (std::size_t i = 0; i < gate_scores.size(); ++i) {
    const double s = logistic((gate_scores[i] - thresholds[i]) / temperature);
    grad[i] = profile.block_weights[i] * s * (1.0 - s) / temperature;
  }
  return grad;
}

double normalized_cost(double cost, const CostProfile& profile) {
  const double denom = profile.total - profile.stem_flops;
  if (denom <= 0.0) {
    throw ConfigError("normalized_cost: degenerate profile, total == stem_flops");
  }
  if (cost < profile.stem_flops - 1e-9 || cost > profile.total + 1e-9) {
    throw NumericError("normalized_cost: cost " + std::to_string(cost) +
                       " outside [" + std::to_string(profile.stem_flops) + ", " +
                       std::to_string(profile.total) + "]");
  }
  return (cost - profile.stem_flops) / denom;
}

}  // namespace adnnperf
