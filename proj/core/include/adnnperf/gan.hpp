#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adnnperf/adnn.hpp"
#include "adnnperf/budget.hpp"
#include "adnnperf/dataset.hpp"
#include "adnnperf/layers.hpp"
#include "adnnperf/suite.hpp"

// The learned test generator: an encoder/residual/decoder network that maps
// a seed input to a budget-bounded perturbation, trained adversarially so
// the perturbed inputs (a) look like data to a discriminator, (b) drive the
// target model's soft computational cost toward its maximum, and (c) stay
// small. Once trained, producing a test sample is a single forward pass.
namespace adnnperf {

struct GeneratorSpec {
  int enc1_channels = 8;   // full-resolution encoder width
  int enc2_channels = 16;  // half-resolution width, also the residual width
  int res_blocks = 4;
};

struct DiscriminatorSpec {
  int base_channels = 8;  // doubles at each of the three conv blocks
};

class Generator {
 public:
  Generator() = default;
  // Initialization is a pure function of (spec, input, budget, seed).
  static Generator build(const GeneratorSpec& spec, const InputShape& input,
                         const PerturbationBudget& budget, std::uint64_t seed);

  struct Out {
    ad::Value x_bar;  // clamp01(x + delta): the generated batch
    ad::Value delta;  // bounded raw perturbation, inside the budget ball
  };
  // Differentiable forward. The squashed output head keeps delta inside the
  // epsilon-ball by construction (per-entry for Linf, by a 1/sqrt(D) factor
  // for L2), so training always starts budget-feasible; the hard projection
  // operator applied at generation time is then a verbatim pass-through.
  Out operator()(const ad::Value& x, bool training) const;

  ParamRegistry& params() { return *reg_; }
  const ParamRegistry& params() const { return *reg_; }
  const GeneratorSpec& gspec() const { return spec_; }
  const PerturbationBudget& budget() const { return budget_; }
  const InputShape& input() const { return input_; }

 private:
  GeneratorSpec spec_;
  InputShape input_;
  PerturbationBudget budget_;
  double delta_scale_ = 0.0;
  std::shared_ptr<ParamRegistry> reg_;
  Conv2d enc1_, enc2_;
  mutable BatchNorm2d enc1_bn_, enc2_bn_;
  std::vector<Conv2d> res_;
  mutable std::vector<BatchNorm2d> res_bn_;
  ConvTranspose2d dec1_;
  mutable BatchNorm2d dec1_bn_;
  ConvTranspose2d dec2_;
};

class Discriminator {
 public:
  Discriminator() = default;
  static Discriminator build(const DiscriminatorSpec& spec, const InputShape& input,
                             std::uint64_t seed);

  // Raw (unsquashed) realness scores, one per sample: [B].
  ad::Value operator()(const ad::Value& x, bool training) const;

  ParamRegistry& params() { return *reg_; }
  const ParamRegistry& params() const { return *reg_; }

 private:
  DiscriminatorSpec spec_;
  std::shared_ptr<ParamRegistry> reg_;
  std::vector<Conv2d> convs_;
  mutable std::vector<BatchNorm2d> bns_;
  Dense head_;
  int flat_dim_ = 0;
};

// Discriminator objective on raw scores: mean[log s(r)] + mean[log(1-s(f))]
// with s the logistic squash, computed in softplus form so saturated scores
// stay finite. The graph overload is the training loss term; the plain
// overload is the scalar oracle.
ad::Value gan_loss(const ad::Value& d_real_raw, const ad::Value& d_fake_raw);
double gan_loss(const std::vector<double>& d_real_raw,
                const std::vector<double>& d_fake_raw);

// Degradation objective: mean squared distance between each generated
// sample's normalized soft cost and 1 (the all-blocks-on ceiling).
ad::Value adv_loss(const ad::Value& generated_batch, const AdnnModel& target,
                   double temperature);
double adv_loss_from_costs(const std::vector<double>& normalized_costs);

// Magnitude objective: mean p-norm of the perturbation batch [B,...].
ad::Value per_loss(const ad::Value& perturbation_batch, NormOrder order);
double per_loss(const std::vector<Tensor>& perturbations, NormOrder order);

struct GanTrainConfig {
  double alpha = 1.0;           // weight of the degradation term
  double beta = 0.001;          // weight of the magnitude term
  double learning_rate = 1e-4;
  int max_epochs = 100;
  int early_stop_patience = 10;
  int batch_size = 64;
  double temperature = 0.1;  // soft-cost temperature inside the degradation term
  PerturbationBudget budget;
  std::uint64_t rng_seed = 0;

  GeneratorSpec generator;
  DiscriminatorSpec discriminator;

  void validate() const;  // ConfigError on non-positive weights/rates
};

struct GanEpochStats {
  int epoch = 0;
  double gan = 0.0, adv = 0.0, per = 0.0, total = 0.0;  // means over batches
  double val_objective = 0.0;  // val adv + beta * val per
  double seconds = 0.0;
};

struct GanTrainResult {
  Generator generator;
  Discriminator discriminator;
  std::vector<GanEpochStats> history;
  int best_epoch = -1;  // epoch whose weights the generator carries
};

// Adversarial training against a frozen target: per batch, one backward pass
// serves both updates — the generator descends gan + alpha*adv + beta*per,
// the discriminator ascends its classification objective (only the gan term
// touches its weights). Early stopping tracks adv + beta*per on the held-out
// split with the configured patience and restores the best weights. The
// target's weights and gradient participation are byte-identical before and
// after. Throws NumericError with epoch/batch diagnostics if a loss turns
// non-finite.
GanTrainResult train_gan(const AdnnModel& target, const Dataset& data,
                         const GanTrainConfig& cfg);

// One forward pass plus projection per seed; per-sample wall-clock covers
// exactly those two steps. Traces and costs for suite bookkeeping are
// computed outside the timed section. seeds is [N,C,H,W].
TestSuite generate(const Generator& gen, const AdnnModel& target,
                   const Tensor& seeds, const PerturbationBudget& budget);

// epoch, gan, adv, per, total, val_objective, seconds — one row per epoch.
void save_history_csv(const std::vector<GanEpochStats>& history,
                      const std::string& path);

}  // namespace adnnperf
