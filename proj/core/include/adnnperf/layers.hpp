#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adnnperf/autodiff.hpp"
#include "adnnperf/rng.hpp"

// Parameter-holding layer structs shared by the reference adaptive models,
// the generator and the discriminator. Layers register their tensors in a
// ParamRegistry under stable names so checkpoints and optimizers see one
// flat, ordered view of a network.
namespace adnnperf {

class ParamRegistry {
 public:
  struct Item {
    std::string name;
    ad::Value value;
    bool trainable;
  };

  ad::Value add(const std::string& name, Tensor init, bool trainable = true);

  const std::vector<Item>& items() const { return items_; }
  std::vector<ad::Value> trainables() const;
  ad::Value find(const std::string& name) const;  // throws ArtifactError if absent

  // Total number of scalars across all registered tensors.
  std::int64_t scalar_count() const;

 private:
  std::vector<Item> items_;
};

// He-style fan-in initialization used by every convolution/dense layer.
Tensor init_conv_weight(int cout, int cin, int k, Rng& rng);
Tensor init_tconv_weight(int cin, int cout, int k, Rng& rng);
Tensor init_dense_weight(int din, int dout, Rng& rng);

struct Conv2d {
  ad::Value w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamRegistry& reg, const std::string& name, int cin, int cout, int k,
         int stride, int pad, Rng& rng);
  ad::Value operator()(const ad::Value& x) const {
    return ad::conv2d(x, w, b, stride, pad);
  }
};

struct ConvTranspose2d {
  ad::Value w, b;
  int stride = 1, pad = 0, out_pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamRegistry& reg, const std::string& name, int cin, int cout,
                  int k, int stride, int pad, int out_pad, Rng& rng);
  ad::Value operator()(const ad::Value& x) const {
    return ad::conv_transpose2d(x, w, b, stride, pad, out_pad);
  }
};

struct Dense {
  ad::Value w, b;

  Dense() = default;
  Dense(ParamRegistry& reg, const std::string& name, int din, int dout, Rng& rng);
  ad::Value operator()(const ad::Value& x) const { return ad::dense(x, w, b); }
};

struct BatchNorm2d {
  ad::Value gamma, beta;
  // Running estimates live in the registry as non-trainable tensors so they
  // serialize with the rest of the network.
  ad::Value running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(ParamRegistry& reg, const std::string& name, int channels);

  // training=true normalizes by batch statistics and folds them into the
  // running estimates (hence non-const); training=false uses the stored
  // running estimates.
  ad::Value operator()(const ad::Value& x, bool training);
};

}  // namespace adnnperf
