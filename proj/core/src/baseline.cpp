#include "adnnperf/baseline.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "adnnperf/autodiff.hpp"
#include "adnnperf/errors.hpp"

namespace adnnperf {

namespace {

using Clock = std::chrono::steady_clock;

Tensor with_batch_dim(const Tensor& x) {
  Tensor out({1, x.dim(0), x.dim(1), x.dim(2)});
  out.data = x.data;
  return out;
}

Tensor strip_batch_dim(const Tensor& x) {
  Tensor out({x.dim(1), x.dim(2), x.dim(3)});
  out.data = x.data;
  return out;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Objective value and its input gradient at one iterate. The graph is small
// and rebuilt per step; parameters stay frozen because only the input leaf
// asks for a gradient.
struct Eval {
  double objective = 0.0;
  Tensor grad;
  bool finite = false;
};

Eval eval_objective(const AdnnModel& model, const Tensor& x_bar,
                    const Tensor& seed, const IterConfig& config) {
  Eval out;
  ad::Value xv = ad::leaf(x_bar, true);
  const SoftForward sf = model.forward_soft(xv, config.temperature, false);
  const ad::Value cost = ad::mean_all(sf.norm_soft_cost);
  const ad::Value delta = ad::sub(xv, ad::constant(seed));
  const ad::Value pen = config.budget.norm_order == NormOrder::linf
                            ? ad::maxabs_rows(delta)
                            : ad::l2norm_rows(delta);
  const ad::Value obj = ad::sub(
      cost, ad::mul_scalar(ad::mean_all(pen), config.balance_weight));
  out.objective = obj.val()[0];
  if (!std::isfinite(out.objective)) return out;
  ad::backward(obj);
  out.grad = xv.grad();
  out.finite = all_finite(out.grad);
  return out;
}

}  // namespace

double IterConfig::effective_step() const {
  return step_size > 0.0 ? step_size : budget.epsilon / 10.0;
}

void IterConfig::validate() const {
  budget.validate();
  if (max_iterations < 1)
    throw ConfigError("IterConfig.max_iterations must be >= 1, got " +
                      std::to_string(max_iterations));
  if (!(balance_weight >= 0.0))
    throw ConfigError("IterConfig.balance_weight must be >= 0");
  if (step_size < 0.0)
    throw ConfigError("IterConfig.step_size must be >= 0 (0 = epsilon/10)");
  if (!(temperature > 0.0))
    throw ConfigError("IterConfig.temperature must be > 0");
}

IterAttackResult iterative_attack(const AdnnModel& model, const Tensor& x,
                                  const IterConfig& config) {
  config.validate();
  const InputShape& in = model.spec().input_shape;
  if (x.ndim() != 3 || x.dim(0) != in.channels || x.dim(1) != in.height ||
      x.dim(2) != in.width)
    throw ShapeError("iterative_attack expects one [C,H,W] sample matching "
                     "the model input");

  const Tensor seed = with_batch_dim(x);
  const double step = config.effective_step();

  IterAttackResult res;
  res.objective_trajectory.reserve(
      static_cast<std::size_t>(config.max_iterations) + 1);

  const auto t0 = Clock::now();
  Tensor x_bar = seed;
  Tensor best = seed;
  double best_obj = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < config.max_iterations; ++it) {
    const Eval e = eval_objective(model, x_bar, seed, config);
    if (!std::isfinite(e.objective) || !e.finite) {
      res.gradient_warning = true;
      break;
    }
    if (e.objective > best_obj) {
      best_obj = e.objective;
      best = x_bar;
    }
    res.objective_trajectory.push_back(best_obj);

    Tensor stepped = x_bar;
    if (config.budget.norm_order == NormOrder::linf) {
      for (std::size_t j = 0; j < stepped.data.size(); ++j) {
        const double g = e.grad.data[j];
        stepped.data[j] += step * (g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0));
      }
    } else {
      double norm = 0.0;
      for (double g : e.grad.data) norm += g * g;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        const double scale = step / norm;
        for (std::size_t j = 0; j < stepped.data.size(); ++j)
          stepped.data[j] += scale * e.grad.data[j];
      }
    }
    x_bar = clip_sample(seed, stepped, config.budget);
  }

  if (!res.gradient_warning) {
    // One last forward to score the final projected iterate; it never ran
    // through eval inside the loop.
    ad::Value xv = ad::leaf(x_bar, false);
    const SoftForward sf = model.forward_soft(xv, config.temperature, false);
    double obj = sf.norm_soft_cost.val()[0];
    Tensor delta = x_bar;
    for (std::size_t j = 0; j < delta.data.size(); ++j)
      delta.data[j] -= seed.data[j];
    obj -= config.balance_weight * pnorm(delta, config.budget.norm_order);
    if (std::isfinite(obj)) {
      if (obj > best_obj) {
        best_obj = obj;
        best = x_bar;
      }
    } else {
      res.gradient_warning = true;
    }
    res.objective_trajectory.push_back(best_obj);
  }

  res.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  res.x_bar = strip_batch_dim(best);
  return res;
}

TestSuite baseline_suite(const AdnnModel& model, const Tensor& seeds,
                         const IterConfig& config) {
  config.validate();
  if (seeds.ndim() != 4)
    throw ShapeError("baseline_suite expects seeds of shape [N,C,H,W]");

  TestSuite suite;
  suite.budget = config.budget;
  suite.producer = Producer::iterative_baseline;
  const int n = seeds.dim(0);
  suite.entries.reserve(static_cast<std::size_t>(n));

  const std::int64_t row = seeds.numel() / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    SuiteEntry e;
    e.seed_id = i;
    e.seed = Tensor({seeds.dim(1), seeds.dim(2), seeds.dim(3)});
    std::copy(seeds.data.begin() + i * row, seeds.data.begin() + (i + 1) * row,
              e.seed.data.begin());

    IterAttackResult r = iterative_attack(model, e.seed, config);
    e.generated = std::move(r.x_bar);
    e.gen_time_seconds = r.seconds;
    suite.entries.push_back(std::move(e));
  }

  // Traces and costs come from one batched pass per side, outside the timed
  // region, exactly as the learned producer fills its entries.
  Tensor gen({n, seeds.dim(1), seeds.dim(2), seeds.dim(3)});
  for (int i = 0; i < n; ++i)
    std::copy(suite.entries[static_cast<std::size_t>(i)].generated.data.begin(),
              suite.entries[static_cast<std::size_t>(i)].generated.data.end(),
              gen.data.begin() + i * row);
  const HardForward hs = model.forward_hard(seeds);
  const HardForward hg = model.forward_hard(gen);
  for (int i = 0; i < n; ++i) {
    auto& e = suite.entries[static_cast<std::size_t>(i)];
    e.seed_trace = hs.traces[static_cast<std::size_t>(i)];
    e.generated_trace = hg.traces[static_cast<std::size_t>(i)];
    e.seed_cost = hs.flops[static_cast<std::size_t>(i)];
    e.generated_cost = hg.flops[static_cast<std::size_t>(i)];
  }
  return suite;
}

}  // namespace adnnperf
