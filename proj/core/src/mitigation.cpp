#include "adnnperf/mitigation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "adnnperf/errors.hpp"
#include "adnnperf/hash.hpp"
#include "adnnperf/optim.hpp"
#include "adnnperf/rng.hpp"

namespace adnnperf {

namespace {

using nlohmann::json;

Tensor gather_batch(const Tensor& x, const std::vector<int>& order, int begin,
                    int count) {
  std::vector<int> shp = x.shape;
  shp[0] = count;
  Tensor out(std::move(shp));
  const std::size_t row = x.data.size() / x.dim(0);
  for (int j = 0; j < count; ++j) {
    const int src = order[begin + j];
    std::copy(x.data.begin() + src * row, x.data.begin() + (src + 1) * row,
              out.data.begin() + static_cast<std::size_t>(j) * row);
  }
  return out;
}

// Stacks one side of every entry into a [N, C, H, W] batch.
Tensor stack_side(const TestSuite& suite, bool generated) {
  const Tensor& probe =
      generated ? suite.entries.front().generated : suite.entries.front().seed;
  std::vector<int> shp = probe.shape;
  shp.insert(shp.begin(), static_cast<int>(suite.entries.size()));
  Tensor out(std::move(shp));
  const std::size_t row = probe.data.size();
  for (std::size_t i = 0; i < suite.entries.size(); ++i) {
    const Tensor& t =
        generated ? suite.entries[i].generated : suite.entries[i].seed;
    if (t.data.size() != row)
      throw ShapeError("suite entries carry samples of different shapes");
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + i * row);
  }
  return out;
}

// Mean percentage increase in executed flops across paired batches,
// recomputed on the given model.
double mean_i_flops_on(const AdnnModel& model, const Tensor& seeds,
                       const Tensor& gens, int batch_size) {
  const int total = seeds.dim(0);
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  double sum = 0.0;
  for (int at = 0; at < total; at += batch_size) {
    const int bs = std::min(batch_size, total - at);
    const HardForward hs = model.forward_hard(gather_batch(seeds, idx, at, bs));
    const HardForward hg = model.forward_hard(gather_batch(gens, idx, at, bs));
    for (int j = 0; j < bs; ++j)
      sum += (hg.flops[j] - hs.flops[j]) / hs.flops[j] * 100.0;
  }
  return sum / total;
}

// Classification loss matching the reference training recipe: final head for
// skip models, deep supervision over every head for early termination.
ad::Value task_loss(const AdnnModel& model, const SoftForward& sf,
                    const std::vector<int>& yb) {
  if (model.spec().mechanism == Mechanism::conditional_skipping)
    return ad::cross_entropy_mean(sf.logits, yb);
  ad::Value task;
  for (const ad::Value& z : sf.all_logits) {
    ad::Value ce = ad::cross_entropy_mean(z, yb);
    task = task.defined() ? ad::add(task, ce) : ce;
  }
  return ad::mul_scalar(task, 1.0 / model.spec().num_blocks());
}

std::uint64_t feature_shape_hash(int feature_dim) {
  std::uint64_t h = fnv1a64(std::string("adnnperf.detector.features.v1"));
  return fnv1a64_value(static_cast<std::int64_t>(feature_dim), h);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void RetrainConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw ConfigError("retrain: beta must be finite and >= 0");
  if (epochs < 0) throw ConfigError("retrain: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("retrain: batch_size must be >= 1");
  if (!(learning_rate > 0.0))
    throw ConfigError("retrain: learning_rate must be > 0");
  if (!(temperature > 0.0))
    throw ConfigError("retrain: temperature must be > 0");
}

RetrainResult retrain_adnn(const AdnnModel& model, const TestSuite& suite,
                           const std::vector<int>& labels,
                           const Dataset& heldout, const RetrainConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(suite.entries.size());
  if (n == 0) throw ConfigError("retrain_adnn: empty suite");
  if (labels.size() != static_cast<std::size_t>(n))
    throw ConfigError("retrain_adnn: unlabeled suite: " +
                      std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " entries");
  for (int y : labels)
    if (y < 0 || y >= model.spec().num_classes)
      throw ConfigError("retrain_adnn: label " + std::to_string(y) +
                        " outside [0, " +
                        std::to_string(model.spec().num_classes) + ")");

  const Tensor seeds = stack_side(suite, /*generated=*/false);
  const Tensor gens = stack_side(suite, /*generated=*/true);

  RetrainResult res{model.clone(), {}};
  AdnnModel& m = res.model;
  RetrainReport& rep = res.report;
  rep.mean_i_flops_before = mean_i_flops_on(model, seeds, gens, cfg.batch_size);
  rep.accuracy_before =
      evaluate_accuracy(model, heldout.test_x, heldout.test_y, cfg.batch_size);

  Adam opt(cfg.learning_rate);
  const std::vector<ad::Value> trainables = m.params().trainables();
  Rng order_rng = Rng(cfg.rng_seed).split(1);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double gap_sum = 0.0, ce_sum = 0.0;
    int batches = 0;
    for (int at = 0; at < n; at += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - at);
      std::vector<int> yb(bs);
      for (int j = 0; j < bs; ++j) yb[j] = labels[order[at + j]];

      const SoftForward sf_seed = m.forward_soft(
          ad::constant(gather_batch(seeds, order, at, bs)), cfg.temperature,
          /*training=*/true);
      const SoftForward sf_gen = m.forward_soft(
          ad::constant(gather_batch(gens, order, at, bs)), cfg.temperature,
          /*training=*/true);

      const ad::Value d =
          ad::sub(sf_gen.norm_soft_cost, sf_seed.norm_soft_cost);
      const ad::Value gap = ad::mean_all(ad::mul(d, d));
      const ad::Value ce =
          ad::add(task_loss(m, sf_seed, yb), task_loss(m, sf_gen, yb));
      const ad::Value loss = ad::add(gap, ad::mul_scalar(ce, cfg.beta));
      if (!std::isfinite(loss.val().data[0]))
        throw NumericError("retrain_adnn: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch offset " +
                           std::to_string(at));
      ad::backward(loss);
      opt.step(trainables);
      gap_sum += gap.val().data[0];
      ce_sum += ce.val().data[0];
      ++batches;
    }
    if (epoch == cfg.epochs - 1) {
      rep.final_gap_term = gap_sum / batches;
      rep.final_ce_term = ce_sum / batches;
    }
  }

  rep.epochs_run = cfg.epochs;
  rep.mean_i_flops_after = mean_i_flops_on(m, seeds, gens, cfg.batch_size);
  rep.accuracy_after =
      evaluate_accuracy(m, heldout.test_x, heldout.test_y, cfg.batch_size);
  return res;
}

Tensor extract_features(const AdnnModel& model, const Tensor& x) {
  return model.stem_features(x);
}

std::vector<double> DetectorModel::scores(const Tensor& features) const {
  if (features.ndim() != 2 || features.dim(1) != feature_dim)
    throw ShapeError("detector: features " + shape_str(features.shape) +
                     " do not match the trained feature length " +
                     std::to_string(feature_dim));
  const int n = features.dim(0);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = bias;
    const double* row = features.data.data() +
                        static_cast<std::size_t>(i) * feature_dim;
    for (int j = 0; j < feature_dim; ++j) s += weights.data[j] * row[j];
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

DetectorModel train_detector(const Tensor& features_benign,
                             const Tensor& features_attack,
                             std::uint64_t rng_seed) {
  if (features_benign.ndim() != 2 || features_attack.ndim() != 2)
    throw ShapeError("train_detector: features must be [N, F] matrices, got " +
                     shape_str(features_benign.shape) + " and " +
                     shape_str(features_attack.shape));
  if (features_benign.dim(0) == 0 || features_attack.dim(0) == 0)
    throw ConfigError("train_detector: both classes must be non-empty");
  if (features_benign.dim(1) != features_attack.dim(1))
    throw ShapeError("train_detector: feature lengths differ: " +
                     std::to_string(features_benign.dim(1)) + " vs " +
                     std::to_string(features_attack.dim(1)));

  const int nb = features_benign.dim(0);
  const int na = features_attack.dim(0);
  const int n = nb + na;
  const int f = features_benign.dim(1);

  // Pool rows; benign scores negative, attack positive.
  std::vector<const double*> rows(static_cast<std::size_t>(n));
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < nb; ++i) {
    rows[i] = features_benign.data.data() + static_cast<std::size_t>(i) * f;
    y[i] = -1.0;
  }
  for (int i = 0; i < na; ++i) {
    rows[nb + i] =
        features_attack.data.data() + static_cast<std::size_t>(i) * f;
    y[nb + i] = 1.0;
  }

  // Standardize per dimension so one step size fits every feature scale;
  // the shift and scale are folded back into the weights afterwards.
  std::vector<double> mu(f, 0.0), sd(f, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) mu[j] += rows[i][j];
  for (int j = 0; j < f; ++j) mu[j] /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) {
      const double d = rows[i][j] - mu[j];
      sd[j] += d * d;
    }
  for (int j = 0; j < f; ++j) {
    sd[j] = std::sqrt(sd[j] / n);
    if (sd[j] == 0.0) sd[j] = 1.0;  // constant feature carries no signal
  }

  constexpr double kLambda = 1e-4;  // L2 strength
  constexpr int kEpochs = 300;
  constexpr int kBatch = 64;
  std::vector<double> w(static_cast<std::size_t>(f), 0.0);
  double b = 0.0;

  Rng order_rng = Rng(rng_seed).split(1);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> z(static_cast<std::size_t>(f));

  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    order_rng.shuffle(order);
    const double lr = 0.5 / (1.0 + epoch / 50.0);
    for (int at = 0; at < n; at += kBatch) {
      const int bs = std::min(kBatch, n - at);
      std::vector<double> gw(static_cast<std::size_t>(f), 0.0);
      double gb = 0.0;
      for (int k = 0; k < bs; ++k) {
        const int i = order[at + k];
        double s = b;
        for (int j = 0; j < f; ++j) {
          z[j] = (rows[i][j] - mu[j]) / sd[j];
          s += w[j] * z[j];
        }
        if (y[i] * s < 1.0) {  // hinge subgradient: only violating margins
          for (int j = 0; j < f; ++j) gw[j] -= y[i] * z[j];
          gb -= y[i];
        }
      }
      for (int j = 0; j < f; ++j)
        w[j] -= lr * (gw[j] / bs + 2.0 * kLambda * w[j]);
      b -= lr * gb / bs;
    }
  }

  // Final hinge + L2 loss and accuracy over the training pool.
  double loss = 0.0;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    double s = b;
    for (int j = 0; j < f; ++j) s += w[j] * (rows[i][j] - mu[j]) / sd[j];
    loss += std::max(0.0, 1.0 - y[i] * s);
    if ((s > 0.0) == (y[i] > 0.0)) ++hits;
  }
  loss /= n;
  for (int j = 0; j < f; ++j) loss += kLambda * w[j] * w[j];

  DetectorModel det;
  det.feature_dim = f;
  det.weights = Tensor({f});
  det.bias = b;
  for (int j = 0; j < f; ++j) {
    det.weights.data[j] = w[j] / sd[j];
    det.bias -= w[j] * mu[j] / sd[j];
  }
  det.threshold = 0.0;
  det.epochs_run = kEpochs;
  det.train_accuracy = static_cast<double>(hits) / n;
  det.final_loss = loss;
  return det;
}

DetectorModel train_detector_on_suite(const AdnnModel& model,
                                      const TestSuite& suite,
                                      std::uint64_t rng_seed) {
  if (suite.entries.empty())
    throw ConfigError("train_detector_on_suite: empty suite");
  const Tensor benign = extract_features(model, stack_side(suite, false));
  const Tensor attack = extract_features(model, stack_side(suite, true));
  DetectorModel det = train_detector(benign, attack, rng_seed);
  det.train_seed_ids.reserve(suite.entries.size());
  for (const SuiteEntry& e : suite.entries)
    det.train_seed_ids.push_back(e.seed_id);
  return det;
}

double rank_auc(const std::vector<double>& benign_scores,
                const std::vector<double>& attack_scores) {
  if (benign_scores.empty() || attack_scores.empty())
    throw NumericError("rank_auc: both score sets must be non-empty");
  // Mann-Whitney U via average ranks; ties contribute one half.
  std::vector<std::pair<double, int>> pool;  // (score, is_attack)
  pool.reserve(benign_scores.size() + attack_scores.size());
  for (double s : benign_scores) pool.emplace_back(s, 0);
  for (double s : attack_scores) pool.emplace_back(s, 1);
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_attack = 0.0;
  std::size_t i = 0;
  while (i < pool.size()) {
    std::size_t j = i;
    while (j < pool.size() && pool[j].first == pool[i].first) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) +
                                   static_cast<double>(j));  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (pool[k].second) rank_sum_attack += avg_rank;
    i = j;
  }
  const double na = static_cast<double>(attack_scores.size());
  const double nb = static_cast<double>(benign_scores.size());
  return (rank_sum_attack - na * (na + 1.0) / 2.0) / (na * nb);
}

void assert_disjoint_seed_ids(const TestSuite& train,
                              const TestSuite& heldout) {
  std::unordered_set<int> ids;
  ids.reserve(train.entries.size());
  for (const SuiteEntry& e : train.entries) ids.insert(e.seed_id);
  for (const SuiteEntry& e : heldout.entries)
    if (ids.count(e.seed_id))
      throw ConfigError("seed id " + std::to_string(e.seed_id) +
                        " appears in both the training and held-out suites");
}

DetectorEval evaluate_detector(const DetectorModel& detector,
                               const AdnnModel& model,
                               const TestSuite& heldout, int repeats) {
  if (repeats < 1) throw ConfigError("evaluate_detector: repeats must be >= 1");
  if (heldout.entries.empty())
    throw ConfigError("evaluate_detector: empty suite");
  if (!detector.train_seed_ids.empty()) {
    std::unordered_set<int> ids(detector.train_seed_ids.begin(),
                                detector.train_seed_ids.end());
    for (const SuiteEntry& e : heldout.entries)
      if (ids.count(e.seed_id))
        throw ConfigError("evaluate_detector: seed id " +
                          std::to_string(e.seed_id) +
                          " was part of the detector's training suite");
  }

  const Tensor seeds = stack_side(heldout, false);
  const Tensor gens = stack_side(heldout, true);
  DetectorEval ev;
  ev.auc = rank_auc(detector.scores(extract_features(model, seeds)),
                    detector.scores(extract_features(model, gens)));

  // Screening latency: extract + score one input at a time, as deployment
  // would. Median of per-input medians over a capped sample.
  using clock = std::chrono::steady_clock;
  const int total = seeds.dim(0);
  const int sample = std::min(total, 32);
  const std::size_t row = seeds.data.size() / static_cast<std::size_t>(total);
  std::vector<int> shp = seeds.shape;
  shp[0] = 1;
  Tensor one(std::move(shp));
  std::vector<double> per_input;
  per_input.reserve(static_cast<std::size_t>(sample) * 2);
  for (int i = 0; i < sample; ++i) {
    for (int side = 0; side < 2; ++side) {
      const Tensor& src = side == 0 ? seeds : gens;
      std::copy(src.data.begin() + i * row, src.data.begin() + (i + 1) * row,
                one.data.begin());
      std::vector<double> times(static_cast<std::size_t>(repeats));
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = clock::now();
        const std::vector<double> s =
            detector.scores(extract_features(model, one));
        const auto t1 = clock::now();
        times[static_cast<std::size_t>(r)] =
            std::chrono::duration<double>(t1 - t0).count() + 0.0 * s[0];
      }
      per_input.push_back(median_of(std::move(times)));
    }
  }
  ev.extra_latency_seconds = median_of(std::move(per_input));
  return ev;
}

void save_detector(const DetectorModel& detector, const std::string& path) {
  json j;
  j["format"] = "adnnperf-detector";
  j["version"] = 1;
  j["feature_dim"] = detector.feature_dim;
  j["feature_shape_hash"] = feature_shape_hash(detector.feature_dim);
  j["weights"] = detector.weights.data;
  j["bias"] = detector.bias;
  j["threshold"] = detector.threshold;
  j["train_seed_ids"] = detector.train_seed_ids;
  j["epochs_run"] = detector.epochs_run;
  j["train_accuracy"] = detector.train_accuracy;
  j["final_loss"] = detector.final_loss;
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw ArtifactError("failed writing detector to " + path);
}

DetectorModel load_detector(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open detector file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ArtifactError("malformed detector file " + path + ": " + e.what());
  }
  if (j.value("format", "") != "adnnperf-detector" || j.value("version", 0) != 1)
    throw ArtifactError("not a detector artifact: " + path);

  DetectorModel det;
  det.feature_dim = j.at("feature_dim").get<int>();
  if (j.at("feature_shape_hash").get<std::uint64_t>() !=
      feature_shape_hash(det.feature_dim))
    throw ArtifactError("detector feature-shape hash mismatch in " + path);
  det.weights = Tensor({det.feature_dim});
  const auto w = j.at("weights").get<std::vector<double>>();
  if (w.size() != static_cast<std::size_t>(det.feature_dim))
    throw ArtifactError("detector weight count does not match feature_dim in " +
                        path);
  det.weights.data = w;
  det.bias = j.at("bias").get<double>();
  det.threshold = j.at("threshold").get<double>();
  det.train_seed_ids = j.at("train_seed_ids").get<std::vector<int>>();
  det.epochs_run = j.at("epochs_run").get<int>();
  det.train_accuracy = j.at("train_accuracy").get<double>();
  det.final_loss = j.at("final_loss").get<double>();
  return det;
}

}  // namespace adnnperf
