#include "adnnperf/layers.hpp"

#include <cmath>

namespace adnnperf {

ad::Value ParamRegistry::add(const std::string& name, Tensor init, bool trainable) {
  for (const Item& it : items_) {
    if (it.name == name) throw ShapeError("ParamRegistry: duplicate name " + name);
  }
  ad::Value v = ad::leaf(std::move(init), trainable);
  items_.push_back(Item{name, v, trainable});
  return v;
}

std::vector<ad::Value> ParamRegistry::trainables() const {
  std::vector<ad::Value> out;
  for (const Item& it : items_)
    if (it.trainable) out.push_back(it.value);
  return out;
}

ad::Value ParamRegistry::find(const std::string& name) const {
  for (const Item& it : items_)
    if (it.name == name) return it.value;
  throw ArtifactError("ParamRegistry: no tensor named " + name);
}

std::int64_t ParamRegistry::scalar_count() const {
  std::int64_t n = 0;
  for (const Item& it : items_) n += it.value.val().numel();
  return n;
}

Tensor init_conv_weight(int cout, int cin, int k, Rng& rng) {
  Tensor w(std::vector<int>{cout, cin, k, k});
  const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (double& v : w.data) v = rng.normal(0.0, std);
  return w;
}

Tensor init_tconv_weight(int cin, int cout, int k, Rng& rng) {
  Tensor w(std::vector<int>{cin, cout, k, k});
  const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (double& v : w.data) v = rng.normal(0.0, std);
  return w;
}

Tensor init_dense_weight(int din, int dout, Rng& rng) {
  Tensor w(std::vector<int>{din, dout});
  const double std = std::sqrt(2.0 / static_cast<double>(din));
  for (double& v : w.data) v = rng.normal(0.0, std);
  return w;
}

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int cin, int cout,
               int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  w = reg.add(name + ".w", init_conv_weight(cout, cin, k, rng));
  b = reg.add(name + ".b", Tensor(std::vector<int>{cout}));
}

ConvTranspose2d::ConvTranspose2d(ParamRegistry& reg, const std::string& name,
                                 int cin, int cout, int k, int stride_, int pad_,
                                 int out_pad_, Rng& rng)
    : stride(stride_), pad(pad_), out_pad(out_pad_) {
  w = reg.add(name + ".w", init_tconv_weight(cin, cout, k, rng));
  b = reg.add(name + ".b", Tensor(std::vector<int>{cout}));
}

Dense::Dense(ParamRegistry& reg, const std::string& name, int din, int dout,
             Rng& rng) {
  w = reg.add(name + ".w", init_dense_weight(din, dout, rng));
  b = reg.add(name + ".b", Tensor(std::vector<int>{dout}));
}

BatchNorm2d::BatchNorm2d(ParamRegistry& reg, const std::string& name, int channels) {
  gamma = reg.add(name + ".gamma", Tensor::full({channels}, 1.0));
  beta = reg.add(name + ".beta", Tensor(std::vector<int>{channels}));
  running_mean = reg.add(name + ".running_mean", Tensor(std::vector<int>{channels}),
                         /*trainable=*/false);
  running_var = reg.add(name + ".running_var", Tensor::full({channels}, 1.0),
                        /*trainable=*/false);
}

ad::Value BatchNorm2d::operator()(const ad::Value& x, bool training) {
  if (!training) {
    return ad::batchnorm2d_infer(x, gamma, beta, running_mean.val(),
                                 running_var.val(), eps);
  }
  kern::BnStats saved;
  ad::Value y = ad::batchnorm2d_train(x, gamma, beta, eps, &saved);
  const int C = static_cast<int>(running_mean.val().numel());
  Tensor& rm = running_mean.val();
  Tensor& rv = running_var.val();
  for (int c = 0; c < C; ++c) {
    const double var = 1.0 / (saved.invstd.data[c] * saved.invstd.data[c]) - eps;
    rm.data[c] = (1.0 - momentum) * rm.data[c] + momentum * saved.mean.data[c];
    rv.data[c] = (1.0 - momentum) * rv.data[c] + momentum * var;
  }
  return y;
}

}  // namespace adnnperf
