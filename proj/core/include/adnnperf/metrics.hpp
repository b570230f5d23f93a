#pragma once

#include <string>
#include <vector>

#include "adnnperf/adnn.hpp"
#include "adnnperf/gan.hpp"
#include "adnnperf/suite.hpp"

// Measurement over test suites: computational-increase metrics, validity
// counts, block coverage, cost/latency correlation, distribution exports,
// threshold sensitivity, and producer overhead accounting. Everything here
// is recomputable from a persisted suite plus the model that produced it;
// reports carry no hidden state.
namespace adnnperf {

// Percentage increase in activated computation for one entry:
// (generated_cost - seed_cost) / seed_cost * 100. NumericError when the
// seed cost is not positive.
double i_flops(const SuiteEntry& entry);

struct LatencyMeasurement {
  double percent = 0.0;  // median-to-median percentage increase
  double seed_median_seconds = 0.0;
  double generated_median_seconds = 0.0;
  std::vector<double> seed_samples;  // raw timed repeats, for dispersion
  std::vector<double> generated_samples;
  // High dispersion (median absolute deviation above a quarter of the
  // median) or an unresolvable clock flags the number instead of failing.
  bool unreliable = false;
};

// Median-of-repeats wall-clock increase for one entry. Runs one untimed
// warm-up pass per side, then `repeats` timed passes (at least 10).
// Assumes a quiet host; measurements must not run concurrently.
LatencyMeasurement i_latency(const AdnnModel& model, const SuiteEntry& entry,
                             int repeats = 10);

// Number of entries whose generated sample costs strictly more than its
// seed. Strict ">": an equal-cost pair demonstrates nothing.
int degradation_success(const TestSuite& suite);

// Fraction of decision blocks activated by at least one generated sample
// (union semantics), in [0,1]. The literal per-sample indicator sum over
// the block count — which exceeds 1 for multi-sample suites — is exposed
// as block_coverage_raw for transparency.
double block_coverage(const TestSuite& suite, const AdnnModel& model);
double block_coverage_raw(const TestSuite& suite, const AdnnModel& model);

// Standard Pearson correlation. ShapeError on size mismatch or fewer than
// two points; NumericError when either argument has zero variance.
double pcc(const std::vector<double>& xs, const std::vector<double>& ys);

struct EfficiencyDistribution {
  std::vector<double> bin_edges;  // size bins+1, shared by both rows
  std::vector<int> seed_counts;
  std::vector<int> generated_counts;
  double seed_mean = 0.0;
  double generated_mean = 0.0;
};

// Histogram of seed vs generated costs over shared bins spanning both
// cost ranges. Deterministic: same suite, same table.
EfficiencyDistribution efficiency_distribution(const TestSuite& suite,
                                               int bins = 20);
void save_distribution_csv(const EfficiencyDistribution& dist,
                           const std::string& path);

struct SweepRow {
  double tau = 0.0;
  double max_i_flops = 0.0;
  double mean_i_flops = 0.0;
  int eta = 0;
};

// Re-scores an existing suite's stored inputs under re-thresholded copies
// of the model: the generated samples are fixed; only the gate thresholds
// move. One row per tau.
std::vector<SweepRow> sweep_suite(const AdnnModel& model,
                                  const TestSuite& suite,
                                  const std::vector<double>& taus);

// Generates one suite from `seeds` with the (tau=0.5-trained) generator,
// then re-scores it at each threshold in `taus`.
std::vector<SweepRow> threshold_sweep(const AdnnModel& model,
                                      const Generator& generator,
                                      const std::vector<double>& taus,
                                      const Tensor& seeds);
void save_sweep_csv(const std::vector<SweepRow>& rows,
                    const std::string& path);

struct OverheadReport {
  double gan_per_sample_seconds = 0.0;       // online mean
  double baseline_per_sample_seconds = 0.0;  // online mean
  double training_time_seconds = 0.0;        // GAN's one-off cost
  bool crossover_exists = false;
  // Smallest sample count where training_time + n * gan_per_sample drops
  // below n * baseline_per_sample; meaningful only when crossover_exists.
  double crossover_n = 0.0;

  double gan_total(double n) const {
    return training_time_seconds + n * gan_per_sample_seconds;
  }
  double baseline_total(double n) const {
    return n * baseline_per_sample_seconds;
  }
};

OverheadReport overhead_report(const TestSuite& gan_suite,
                               const TestSuite& baseline_suite,
                               double training_time_seconds);
void save_overhead_csv(const OverheadReport& report, const std::string& path);

// Per-input cost vs median latency across a batch of inputs: the
// correlation study behind treating FLOPs as the optimization proxy.
struct LatencyStudy {
  std::vector<double> costs;
  std::vector<double> median_seconds;
  double pearson = 0.0;
  bool unreliable = false;  // any per-input measurement was flagged
};
LatencyStudy latency_cost_study(const AdnnModel& model, const Tensor& inputs,
                                int repeats = 10);

struct MetricsReport {
  Producer producer = Producer::deepperform;
  int entries = 0;
  double mean_i_flops = 0.0;
  double max_i_flops = 0.0;
  int eta = 0;
  double coverage = 0.0;
  double coverage_raw = 0.0;
  double mean_perturbation = 0.0;  // budget's own norm order
  double max_perturbation = 0.0;
  double mean_gen_seconds = 0.0;
  double total_gen_seconds = 0.0;
  bool latency_measured = false;
  bool latency_unreliable = false;
  double mean_i_latency = 0.0;
  double max_i_latency = 0.0;
  std::vector<SweepRow> sweep;  // present when options request it
  // Energy increase needs a physical power monitor; the column is reserved
  // in every export and always marked unavailable here.
  bool i_energy_available = false;

  // max >= mean for each increment metric, eta <= entries, coverage in
  // [0,1]. Throws NumericError on violation.
  void validate() const;
};

struct EvalOptions {
  int latency_repeats = 0;         // 0 skips latency measurement
  std::vector<double> sweep_taus;  // empty skips the sweep table
};

MetricsReport evaluate_suite(const AdnnModel& model, const TestSuite& suite,
                             const EvalOptions& options = {});

// Key,value CSV and an aligned structured-text rendering. Both contain the
// same numbers; both include the reserved unavailable energy column.
void save_report_csv(const MetricsReport& report, const std::string& path);
void save_report_text(const MetricsReport& report, const std::string& path);

}  // namespace adnnperf
