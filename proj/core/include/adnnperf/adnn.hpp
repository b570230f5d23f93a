#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adnnperf/autodiff.hpp"
#include "adnnperf/dataset.hpp"
#include "adnnperf/flops.hpp"
#include "adnnperf/layers.hpp"
#include "adnnperf/trace.hpp"

// Reference adaptive models: small residual networks that spend compute
// input-dependently, either by skipping residual branches (a learned gate per
// block) or by exiting at the first confident classification head. These are
// the systems whose worst-case computational behavior the rest of the
// library probes.
namespace adnnperf {

enum class Mechanism { conditional_skipping, early_termination };

const char* mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);  // ConfigError on unknown

struct BlockSpec {
  int index = 0;
  // W_i: flops charged when the block's gated computation runs. Must equal
  // block_flops(layer_shape); kept explicit so serialized specs are
  // self-checking.
  double flops_weight = 0.0;
  double threshold = 0.5;  // tau_i in [0,1]
  std::vector<LayerShape> layer_shape;
};

struct InputShape {
  int channels = 3, height = 32, width = 32;
  bool operator==(const InputShape&) const = default;
};

struct AdnnSpec {
  Mechanism mechanism = Mechanism::conditional_skipping;
  std::vector<BlockSpec> blocks;  // ordered, indices 0..N-1
  int num_classes = 10;
  InputShape input_shape;

  int num_blocks() const { return static_cast<int>(blocks.size()); }
  std::vector<double> thresholds() const;
  // Throws ConfigError on any violated structural invariant (index gaps,
  // out-of-range thresholds, flops_weight disagreeing with layer_shape,
  // missing exit heads, block shapes inconsistent with the stem output).
  void validate() const;
};

// Default experimental scale: `num_blocks` residual blocks of `channels`
// feature maps at half the input resolution. Runs the full acceptance suite
// on one desktop core.
AdnnSpec make_reference_spec(Mechanism mechanism, int num_blocks = 8,
                             int num_classes = 10, int channels = 16,
                             InputShape input = {});

// Executed (hard-decision) forward pass over a batch.
struct HardForward {
  Tensor logits;                   // [B, num_classes]
  std::vector<BlockTrace> traces;  // one per sample
  // Flop count incremented live as each sample's blocks execute; equals
  // hard_cost(traces[n], cost_profile()) for every n.
  std::vector<double> flops;
};

// Differentiable forward pass over a batch. Per-sample vectors are flat [B].
struct SoftForward {
  ad::Value logits;  // [B, num_classes]
  // Per block: the gate score (skip models) or exit-head confidence
  // (early-termination models), each [B] in [0,1].
  std::vector<ad::Value> gate_scores;
  // (soft cost - stem) / (total - stem), [B] in (0,1): the differentiable
  // stand-in for how much of the gated compute an input triggers.
  ad::Value norm_soft_cost;
  // Early termination: every head's logits [B, num_classes], in block order.
  std::vector<ad::Value> all_logits;
};

class AdnnModel {
 public:
  AdnnModel() = default;

  // Constructs and initializes a model for either mechanism. Weight init is
  // a pure function of (spec, rng_seed).
  static AdnnModel build(const AdnnSpec& spec, std::uint64_t rng_seed);

  const AdnnSpec& spec() const { return spec_; }
  const CostProfile& cost_profile() const { return profile_; }
  ParamRegistry& params() { return *reg_; }
  const ParamRegistry& params() const { return *reg_; }

  // Inference with per-sample execution traces; deterministic, no graph.
  HardForward forward_hard(const Tensor& x) const;

  // Differentiable relaxation: skip models blend each residual branch by
  // logistic((gate - tau)/T); early-termination models run all blocks and
  // weight each block's cost by its probability of being reached (the
  // product of earlier heads' no-exit propensities). training=true
  // normalizes by batch statistics (and updates the running estimates);
  // training=false uses the stored running statistics and therefore agrees
  // with forward_hard sample by sample.
  SoftForward forward_soft(const ad::Value& x, double temperature,
                           bool training = false) const;

  // Early termination only: runs every block unconditionally and returns all
  // head logits as [B, N, num_classes] — lets tests recompute exit decisions
  // from raw scores.
  Tensor forward_all_exits(const Tensor& x) const;

  // Flips whether weights participate in gradient computation. Training
  // requires true (the default); freezing the model while it serves as a
  // differentiable cost oracle skips all weight-gradient work.
  void set_trainable(bool trainable);

  // Deep copy with fresh parameter storage carrying the current values
  // (including normalization running statistics), so the copy trains
  // independently of the source.
  AdnnModel clone() const;

  // Raw stem-convolution output (before normalization), flattened to
  // [N, C*H*W]: a cheap per-input signature computed by the first layer
  // alone, used as the detector feature space.
  Tensor stem_features(const Tensor& x) const;

 private:
  AdnnSpec spec_;
  CostProfile profile_;
  std::shared_ptr<ParamRegistry> reg_;
  // Stem and residual branches are conv + batchnorm + relu; normalization
  // keeps the residual stack trainable at practical learning rates. Its
  // inference form is a per-channel affine map, which the flop convention
  // (multiply-accumulate pairs only) does not count.
  Conv2d stem_;
  mutable BatchNorm2d stem_bn_;
  std::vector<Conv2d> blocks_;
  mutable std::vector<BatchNorm2d> block_bns_;
  std::vector<Dense> gates_;  // conditional skipping
  std::vector<Dense> exits_;  // early termination heads
  Dense classifier_;          // conditional skipping
  int channels_ = 0, hs_ = 0, ws_ = 0;  // feature-map geometry

  friend AdnnModel set_thresholds(const AdnnModel&, const std::vector<double>&);
};

// Mechanism-checked constructors (thin wrappers over AdnnModel::build).
AdnnModel build_skip_model(const AdnnSpec& spec, std::uint64_t rng_seed);
AdnnModel build_early_exit_model(const AdnnSpec& spec, std::uint64_t rng_seed);

// Single entry point used by evaluation code; batch of B inputs yields B
// traces identical to per-sample calls.
HardForward forward_with_trace(const AdnnModel& model, const Tensor& x);

// Returns a model sharing the same weights with replaced comparison
// thresholds; throws ConfigError if any tau is outside [0,1] or the count
// does not match.
AdnnModel set_thresholds(const AdnnModel& model, const std::vector<double>& taus);

struct AdnnTrainConfig {
  int epochs = 5;
  int batch_size = 64;
  double lr = 1e-3;
  // Weight on the mean normalized soft cost: pushes gates toward skipping
  // (or heads toward exiting) on inputs the task loss does not need, which
  // is what leaves headroom between typical and worst-case compute.
  double sparsity_weight = 0.1;
  double temperature = 0.1;
  std::uint64_t rng_seed = 0;
};

// Trains in place and returns top-1 accuracy on the held-out test split.
// Zero epochs leaves the initialization untouched (and still evaluates).
// Throws ConfigError on an empty or mismatched dataset, NumericError if the
// loss turns non-finite.
double train_adnn(AdnnModel& model, const Dataset& data, const AdnnTrainConfig& cfg);

// Batched helpers over the hard forward pass.
double evaluate_accuracy(const AdnnModel& model, const Tensor& x,
                         const std::vector<int>& y, int batch_size = 128);
double mean_activated_fraction(const AdnnModel& model, const Tensor& x,
                               int batch_size = 128);

}  // namespace adnnperf
