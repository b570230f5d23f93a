#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adnnperf/adnn.hpp"
#include "adnnperf/dataset.hpp"
#include "adnnperf/suite.hpp"
#include "adnnperf/tensor.hpp"

// Defenses against performance-degrading inputs: hardening a model by
// retraining it on captured seed/generated pairs, and screening incoming
// inputs with a linear detector over first-layer activations. Retraining
// returns a new model and never touches the one it was given; detector
// training sees only feature matrices and cannot mutate a network.
namespace adnnperf {

struct RetrainConfig {
  // Weight on the classification terms relative to the activation-gap term.
  // Large values recover plain supervised training on both halves of each
  // pair; zero optimizes the gap alone and lets accuracy float.
  double beta = 1.0;
  int epochs = 5;
  int batch_size = 64;
  double learning_rate = 1e-3;
  // Temperature of the soft cost surrogate used for the gap term.
  double temperature = 0.1;
  std::uint64_t rng_seed = 0;

  void validate() const;  // throws ConfigError on out-of-range values
};

struct RetrainReport {
  // Mean percentage increase in activated compute over the training pairs,
  // re-scored on the original model and on the hardened one.
  double mean_i_flops_before = 0.0;
  double mean_i_flops_after = 0.0;
  // Top-1 accuracy on the held-out split, before and after.
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  // Last-epoch batch means of the two loss components (the classification
  // term is reported unweighted, i.e. before multiplying by beta).
  double final_gap_term = 0.0;
  double final_ce_term = 0.0;
  int epochs_run = 0;
};

struct RetrainResult {
  AdnnModel model;
  RetrainReport report;
};

// Hardens `model` against a captured attack suite. Each entry contributes
// a pair (x, x'); the loss is
//     mse(soft_cost(x'), soft_cost(x)) + beta * (ce(f(x), y) + ce(f(x'), y))
// where y is the seed's label (the generated sample reuses it) and the soft
// cost is the differentiable activation surrogate at cfg.temperature.
// `labels[i]` labels `suite.entries[i].seed`; an empty or mismatched labels
// vector is a ConfigError ("unlabeled suite"). Accuracy before/after is
// evaluated on `heldout.test_x` / `heldout.test_y`. The input model is
// copied, never mutated. Throws NumericError if the loss turns non-finite.
RetrainResult retrain_adnn(const AdnnModel& model, const TestSuite& suite,
                           const std::vector<int>& labels,
                           const Dataset& heldout, const RetrainConfig& cfg);

// Flattened raw activations of the model's first convolution stage,
// [N, C*H*W]: the detector's feature space. Deterministic; ShapeError on
// inputs that do not match the model's input shape.
Tensor extract_features(const AdnnModel& model, const Tensor& x);

// Linear max-margin classifier over feature vectors. Scores are affine in
// the features: score(f) = weights . f + bias, with positive scores flagged
// as attack. Internally trained on standardized features; the shift/scale
// are folded back into `weights`/`bias` so scoring needs no extra state.
struct DetectorModel {
  Tensor weights;  // [feature_dim]
  double bias = 0.0;
  double threshold = 0.0;  // decision cut on the raw score
  int feature_dim = 0;
  // Seed ids of the suite the detector was trained on, when it was trained
  // from a suite; used to refuse evaluation on overlapping seed sets.
  std::vector<int> train_seed_ids;
  // Training diagnostics.
  int epochs_run = 0;
  double train_accuracy = 0.0;
  double final_loss = 0.0;

  // Scores for a [N, feature_dim] matrix. ShapeError when the feature
  // dimension does not match the one the detector was trained on.
  std::vector<double> scores(const Tensor& features) const;
};

// Trains on two feature matrices, [Nb, F] benign and [Na, F] attack, with
// hinge loss plus L2 regularization via deterministic mini-batch descent.
// ConfigError when either class is empty; ShapeError on mismatched feature
// dimensions.
DetectorModel train_detector(const Tensor& features_benign,
                             const Tensor& features_attack,
                             std::uint64_t rng_seed);

// Convenience wrapper: benign features from the suite's seeds, attack
// features from its generated samples, and the suite's seed ids recorded
// for the disjointness check.
DetectorModel train_detector_on_suite(const AdnnModel& model,
                                      const TestSuite& suite,
                                      std::uint64_t rng_seed);

struct DetectorEval {
  double auc = 0.0;  // rank AUC of attack-vs-benign scores, ties at half
  // Median wall-clock cost of screening one input: feature extraction plus
  // the affine score.
  double extra_latency_seconds = 0.0;
};

// Scores every seed (benign) and generated sample (attack) in a held-out
// suite. ConfigError when the suite shares seed ids with the detector's
// training suite; ShapeError when the model's feature dimension does not
// match the detector.
DetectorEval evaluate_detector(const DetectorModel& detector,
                               const AdnnModel& model,
                               const TestSuite& heldout, int repeats = 5);

// Rank AUC with tied scores credited one half. NumericError when either
// side is empty.
double rank_auc(const std::vector<double>& benign_scores,
                const std::vector<double>& attack_scores);

// Throws ConfigError naming the first shared id when the two suites'
// seed-id sets intersect.
void assert_disjoint_seed_ids(const TestSuite& train, const TestSuite& heldout);

// Single-file JSON artifact carrying the weights and a feature-shape hash;
// loading verifies the hash and throws ArtifactError on mismatch or
// truncation.
void save_detector(const DetectorModel& detector, const std::string& path);
DetectorModel load_detector(const std::string& path);

}  // namespace adnnperf
