#include "adnnperf/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "adnnperf/errors.hpp"

namespace adnnperf {

namespace {

using Clock = std::chrono::steady_clock;

Tensor with_batch_dim(const Tensor& x) {
  Tensor out({1, x.dim(0), x.dim(1), x.dim(2)});
  out.data = x.data;
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median absolute deviation, the dispersion gauge for timing repeats.
double mad_of(const std::vector<double>& v, double med) {
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double s : v) dev.push_back(std::fabs(s - med));
  return median_of(std::move(dev));
}

std::vector<double> timed_repeats(const AdnnModel& model, const Tensor& x,
                                  int repeats) {
  // Warm-up doubles as a scale probe: passes shorter than the timing
  // window get batched so each repeat measures at least ~200us of work,
  // keeping clock granularity out of the medians.
  const auto w0 = Clock::now();
  (void)model.forward_hard(x);
  const double rough =
      std::chrono::duration<double>(Clock::now() - w0).count();
  constexpr double kWindow = 200e-6;
  const int k =
      rough >= kWindow
          ? 1
          : static_cast<int>(
                std::min(1000.0, std::ceil(kWindow / std::max(rough, 1e-9))));

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    for (int i = 0; i < k; ++i) (void)model.forward_hard(x);
    out.push_back(std::chrono::duration<double>(Clock::now() - t0).count() /
                  static_cast<double>(k));
  }
  return out;
}

Tensor stack_generated(const TestSuite& suite) {
  const auto& first = suite.entries.front().generated;
  const int n = static_cast<int>(suite.entries.size());
  Tensor out({n, first.dim(0), first.dim(1), first.dim(2)});
  const std::int64_t row = first.numel();
  for (int i = 0; i < n; ++i)
    std::copy(suite.entries[static_cast<std::size_t>(i)].generated.data.begin(),
              suite.entries[static_cast<std::size_t>(i)].generated.data.end(),
              out.data.begin() + i * row);
  return out;
}

Tensor stack_seeds(const TestSuite& suite) {
  const auto& first = suite.entries.front().seed;
  const int n = static_cast<int>(suite.entries.size());
  Tensor out({n, first.dim(0), first.dim(1), first.dim(2)});
  const std::int64_t row = first.numel();
  for (int i = 0; i < n; ++i)
    std::copy(suite.entries[static_cast<std::size_t>(i)].seed.data.begin(),
              suite.entries[static_cast<std::size_t>(i)].seed.data.end(),
              out.data.begin() + i * row);
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot open for writing: " + path);
  return out;
}

}  // namespace

double i_flops(const SuiteEntry& entry) {
  if (!(entry.seed_cost > 0.0))
    throw NumericError("i_flops needs a positive seed cost, got " +
                       std::to_string(entry.seed_cost));
  return (entry.generated_cost - entry.seed_cost) / entry.seed_cost * 100.0;
}

LatencyMeasurement i_latency(const AdnnModel& model, const SuiteEntry& entry,
                             int repeats) {
  if (repeats < 10)
    throw ConfigError("i_latency needs at least 10 repeats, got " +
                      std::to_string(repeats));
  LatencyMeasurement m;
  m.seed_samples = timed_repeats(model, with_batch_dim(entry.seed), repeats);
  m.generated_samples =
      timed_repeats(model, with_batch_dim(entry.generated), repeats);
  m.seed_median_seconds = median_of(m.seed_samples);
  m.generated_median_seconds = median_of(m.generated_samples);

  if (m.seed_median_seconds <= 0.0 || m.generated_median_seconds <= 0.0) {
    m.unreliable = true;  // clock too coarse for this host
    return m;
  }
  m.percent = (m.generated_median_seconds - m.seed_median_seconds) /
              m.seed_median_seconds * 100.0;
  const double rel_seed =
      mad_of(m.seed_samples, m.seed_median_seconds) / m.seed_median_seconds;
  const double rel_gen = mad_of(m.generated_samples, m.generated_median_seconds) /
                         m.generated_median_seconds;
  m.unreliable = rel_seed > 0.25 || rel_gen > 0.25;
  return m;
}

int degradation_success(const TestSuite& suite) {
  int eta = 0;
  for (const auto& e : suite.entries)
    if (e.generated_cost > e.seed_cost) ++eta;
  return eta;
}

double block_coverage(const TestSuite& suite, const AdnnModel& model) {
  const int n = model.spec().num_blocks();
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  for (const auto& e : suite.entries)
    for (int i = 0; i < n; ++i)
      if (e.generated_trace.activated[static_cast<std::size_t>(i)])
        covered[static_cast<std::size_t>(i)] = true;
  int hit = 0;
  for (bool c : covered) hit += c ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(n);
}

double block_coverage_raw(const TestSuite& suite, const AdnnModel& model) {
  const int n = model.spec().num_blocks();
  std::int64_t total = 0;
  for (const auto& e : suite.entries) total += e.generated_trace.activated_count();
  return static_cast<double>(total) / static_cast<double>(n);
}

double pcc(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size())
    throw ShapeError("pcc arguments differ in length");
  if (xs.size() < 2) throw ShapeError("pcc needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw NumericError("pcc is undefined for a zero-variance argument");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

EfficiencyDistribution efficiency_distribution(const TestSuite& suite,
                                               int bins) {
  if (bins < 1) throw ConfigError("efficiency_distribution needs bins >= 1");
  EfficiencyDistribution dist;
  dist.seed_counts.assign(static_cast<std::size_t>(bins), 0);
  dist.generated_counts.assign(static_cast<std::size_t>(bins), 0);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& e : suite.entries) {
    lo = std::min({lo, e.seed_cost, e.generated_cost});
    hi = std::max({hi, e.seed_cost, e.generated_cost});
    dist.seed_mean += e.seed_cost;
    dist.generated_mean += e.generated_cost;
  }
  if (suite.entries.empty()) {
    lo = 0.0;
    hi = 1.0;
  } else {
    dist.seed_mean /= static_cast<double>(suite.entries.size());
    dist.generated_mean /= static_cast<double>(suite.entries.size());
    if (lo == hi) hi = lo + 1.0;  // all costs equal: one degenerate span
  }
  dist.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b)
    dist.bin_edges[static_cast<std::size_t>(b)] =
        lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);

  const auto bin_of = [&](double v) {
    const int b =
        static_cast<int>(static_cast<double>(bins) * (v - lo) / (hi - lo));
    return std::clamp(b, 0, bins - 1);
  };
  for (const auto& e : suite.entries) {
    ++dist.seed_counts[static_cast<std::size_t>(bin_of(e.seed_cost))];
    ++dist.generated_counts[static_cast<std::size_t>(bin_of(e.generated_cost))];
  }
  return dist;
}

void save_distribution_csv(const EfficiencyDistribution& dist,
                           const std::string& path) {
  std::ofstream out = open_out(path);
  out << "bin_low,bin_high,seed_count,generated_count\n";
  char buf[128];
  for (std::size_t b = 0; b + 1 < dist.bin_edges.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%d\n", dist.bin_edges[b],
                  dist.bin_edges[b + 1], dist.seed_counts[b],
                  dist.generated_counts[b]);
    out << buf;
  }
}

std::vector<SweepRow> sweep_suite(const AdnnModel& model,
                                  const TestSuite& suite,
                                  const std::vector<double>& taus) {
  std::vector<SweepRow> rows;
  rows.reserve(taus.size());
  if (suite.entries.empty()) {
    for (double tau : taus) rows.push_back({tau, 0.0, 0.0, 0});
    return rows;
  }
  const Tensor seeds = stack_seeds(suite);
  const Tensor gen = stack_generated(suite);
  const int nblocks = model.spec().num_blocks();
  for (double tau : taus) {
    const AdnnModel swept = set_thresholds(
        model, std::vector<double>(static_cast<std::size_t>(nblocks), tau));
    const HardForward hs = swept.forward_hard(seeds);
    const HardForward hg = swept.forward_hard(gen);
    SweepRow row;
    row.tau = tau;
    row.max_i_flops = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < suite.entries.size(); ++i) {
      SuiteEntry e;
      e.seed_cost = hs.flops[i];
      e.generated_cost = hg.flops[i];
      const double f = i_flops(e);
      row.mean_i_flops += f;
      row.max_i_flops = std::max(row.max_i_flops, f);
      if (e.generated_cost > e.seed_cost) ++row.eta;
    }
    row.mean_i_flops /= static_cast<double>(suite.entries.size());
    rows.push_back(row);
  }
  return rows;
}

std::vector<SweepRow> threshold_sweep(const AdnnModel& model,
                                      const Generator& generator,
                                      const std::vector<double>& taus,
                                      const Tensor& seeds) {
  const TestSuite suite = generate(generator, model, seeds, generator.budget());
  return sweep_suite(model, suite, taus);
}

void save_sweep_csv(const std::vector<SweepRow>& rows,
                    const std::string& path) {
  std::ofstream out = open_out(path);
  out << "tau,max_i_flops,mean_i_flops,eta\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d\n", r.tau,
                  r.max_i_flops, r.mean_i_flops, r.eta);
    out << buf;
  }
}

OverheadReport overhead_report(const TestSuite& gan_suite,
                               const TestSuite& baseline_suite,
                               double training_time_seconds) {
  if (gan_suite.entries.empty() || baseline_suite.entries.empty())
    throw ConfigError("overhead_report needs non-empty suites on both sides");
  OverheadReport rep;
  rep.training_time_seconds = training_time_seconds;
  for (const auto& e : gan_suite.entries)
    rep.gan_per_sample_seconds += e.gen_time_seconds;
  rep.gan_per_sample_seconds /= static_cast<double>(gan_suite.entries.size());
  for (const auto& e : baseline_suite.entries)
    rep.baseline_per_sample_seconds += e.gen_time_seconds;
  rep.baseline_per_sample_seconds /=
      static_cast<double>(baseline_suite.entries.size());

  rep.crossover_exists =
      rep.baseline_per_sample_seconds > rep.gan_per_sample_seconds;
  if (rep.crossover_exists)
    rep.crossover_n =
        training_time_seconds /
        (rep.baseline_per_sample_seconds - rep.gan_per_sample_seconds);
  return rep;
}

void save_overhead_csv(const OverheadReport& report, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "quantity,value\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "gan_per_sample_seconds,%.17g\n",
                report.gan_per_sample_seconds);
  out << buf;
  std::snprintf(buf, sizeof buf, "baseline_per_sample_seconds,%.17g\n",
                report.baseline_per_sample_seconds);
  out << buf;
  std::snprintf(buf, sizeof buf, "training_time_seconds,%.17g\n",
                report.training_time_seconds);
  out << buf;
  out << "crossover_exists," << (report.crossover_exists ? "yes" : "no")
      << "\n";
  std::snprintf(buf, sizeof buf, "crossover_n,%.17g\n", report.crossover_n);
  out << buf;
}

LatencyStudy latency_cost_study(const AdnnModel& model, const Tensor& inputs,
                                int repeats) {
  if (repeats < 10)
    throw ConfigError("latency_cost_study needs at least 10 repeats");
  if (inputs.ndim() != 4)
    throw ShapeError("latency_cost_study expects inputs of shape [N,C,H,W]");
  LatencyStudy study;
  const int n = inputs.dim(0);
  const std::int64_t row = inputs.numel() / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    Tensor x({1, inputs.dim(1), inputs.dim(2), inputs.dim(3)});
    std::copy(inputs.data.begin() + i * row,
              inputs.data.begin() + (i + 1) * row, x.data.begin());
    study.costs.push_back(model.forward_hard(x).flops[0]);
    const std::vector<double> samples = timed_repeats(model, x, repeats);
    const double med = median_of(samples);
    study.median_seconds.push_back(med);
    if (med <= 0.0 || mad_of(samples, med) > 0.25 * med)
      study.unreliable = true;
  }
  study.pearson = pcc(study.costs, study.median_seconds);
  return study;
}

void MetricsReport::validate() const {
  if (entries > 0 && max_i_flops < mean_i_flops)
    throw NumericError("report invariant broken: max I-FLOPs below mean");
  if (latency_measured && entries > 0 && max_i_latency < mean_i_latency)
    throw NumericError("report invariant broken: max I-Latency below mean");
  if (eta < 0 || eta > entries)
    throw NumericError("report invariant broken: eta outside [0, entries]");
  if (coverage < 0.0 || coverage > 1.0)
    throw NumericError("report invariant broken: coverage outside [0,1]");
}

MetricsReport evaluate_suite(const AdnnModel& model, const TestSuite& suite,
                             const EvalOptions& options) {
  MetricsReport rep;
  rep.producer = suite.producer;
  rep.entries = static_cast<int>(suite.entries.size());
  rep.coverage = block_coverage(suite, model);
  rep.coverage_raw = block_coverage_raw(suite, model);
  rep.eta = degradation_success(suite);

  if (!suite.entries.empty()) {
    rep.max_i_flops = -std::numeric_limits<double>::infinity();
    rep.max_perturbation = 0.0;
    for (const auto& e : suite.entries) {
      const double f = i_flops(e);
      rep.mean_i_flops += f;
      rep.max_i_flops = std::max(rep.max_i_flops, f);
      Tensor delta = e.generated;
      for (std::size_t j = 0; j < delta.data.size(); ++j)
        delta.data[j] -= e.seed.data[j];
      const double norm = pnorm(delta, suite.budget.norm_order);
      rep.mean_perturbation += norm;
      rep.max_perturbation = std::max(rep.max_perturbation, norm);
      rep.mean_gen_seconds += e.gen_time_seconds;
      rep.total_gen_seconds += e.gen_time_seconds;
    }
    const double n = static_cast<double>(suite.entries.size());
    rep.mean_i_flops /= n;
    rep.mean_perturbation /= n;
    rep.mean_gen_seconds /= n;
  }

  if (options.latency_repeats > 0 && !suite.entries.empty()) {
    rep.latency_measured = true;
    rep.max_i_latency = -std::numeric_limits<double>::infinity();
    for (const auto& e : suite.entries) {
      const LatencyMeasurement m = i_latency(model, e, options.latency_repeats);
      rep.mean_i_latency += m.percent;
      rep.max_i_latency = std::max(rep.max_i_latency, m.percent);
      rep.latency_unreliable = rep.latency_unreliable || m.unreliable;
    }
    rep.mean_i_latency /= static_cast<double>(suite.entries.size());
  }

  if (!options.sweep_taus.empty())
    rep.sweep = sweep_suite(model, suite, options.sweep_taus);

  rep.validate();
  return rep;
}

void save_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "metric,value\n";
  char buf[160];
  const auto num = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s,%.17g\n", key, v);
    out << buf;
  };
  out << "producer," << producer_name(report.producer) << "\n";
  out << "entries," << report.entries << "\n";
  num("mean_i_flops_percent", report.mean_i_flops);
  num("max_i_flops_percent", report.max_i_flops);
  out << "eta," << report.eta << "\n";
  num("coverage", report.coverage);
  num("coverage_raw", report.coverage_raw);
  num("mean_perturbation", report.mean_perturbation);
  num("max_perturbation", report.max_perturbation);
  num("mean_gen_seconds", report.mean_gen_seconds);
  num("total_gen_seconds", report.total_gen_seconds);
  if (report.latency_measured) {
    num("mean_i_latency_percent", report.mean_i_latency);
    num("max_i_latency_percent", report.max_i_latency);
    out << "latency_unreliable," << (report.latency_unreliable ? "yes" : "no")
        << "\n";
  } else {
    out << "mean_i_latency_percent,unmeasured\n";
    out << "max_i_latency_percent,unmeasured\n";
  }
  out << "i_energy,unavailable\n";
  for (const auto& r : report.sweep) {
    std::snprintf(buf, sizeof buf, "sweep_max_i_flops_tau_%.17g,%.17g\n",
                  r.tau, r.max_i_flops);
    out << buf;
  }
}

void save_report_text(const MetricsReport& report, const std::string& path) {
  std::ofstream out = open_out(path);
  char buf[160];
  out << "suite metrics (" << producer_name(report.producer) << ", "
      << report.entries << " entries)\n";
  std::snprintf(buf, sizeof buf, "  I-FLOPs    mean %8.3f%%   max %8.3f%%\n",
                report.mean_i_flops, report.max_i_flops);
  out << buf;
  if (report.latency_measured) {
    std::snprintf(buf, sizeof buf,
                  "  I-Latency  mean %8.3f%%   max %8.3f%%%s\n",
                  report.mean_i_latency, report.max_i_latency,
                  report.latency_unreliable ? "   (unreliable)" : "");
    out << buf;
  } else {
    out << "  I-Latency  unmeasured\n";
  }
  out << "  I-Energy   unavailable (needs a power monitor)\n";
  std::snprintf(buf, sizeof buf, "  eta        %d of %d\n", report.eta,
                report.entries);
  out << buf;
  std::snprintf(buf, sizeof buf, "  coverage   %.6f (raw %.6f)\n",
                report.coverage, report.coverage_raw);
  out << buf;
  std::snprintf(buf, sizeof buf, "  |delta|    mean %.6g   max %.6g\n",
                report.mean_perturbation, report.max_perturbation);
  out << buf;
  std::snprintf(buf, sizeof buf, "  gen time   mean %.6gs   total %.6gs\n",
                report.mean_gen_seconds, report.total_gen_seconds);
  out << buf;
  if (!report.sweep.empty()) {
    out << "  threshold sweep (tau: max / mean I-FLOPs %, eta)\n";
    for (const auto& r : report.sweep) {
      std::snprintf(buf, sizeof buf, "    %.2f: %9.3f / %9.3f   %d\n", r.tau,
                    r.max_i_flops, r.mean_i_flops, r.eta);
      out << buf;
    }
  }
}

}  // namespace adnnperf
