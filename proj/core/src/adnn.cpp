#include "adnnperf/adnn.hpp"

#include <cmath>
#include <string>

#include "adnnperf/errors.hpp"
#include "adnnperf/rng.hpp"

namespace adnnperf {

namespace {

double sigmoid_s(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                  : std::exp(v) / (1.0 + std::exp(v));
}

// max softmax entry of one logit row, computed in the shifted (stable) form
double max_softmax(const double* z, int k) {
  double m = z[0];
  for (int i = 1; i < k; ++i) m = std::max(m, z[i]);
  double denom = 0.0;
  for (int i = 0; i < k; ++i) denom += std::exp(z[i] - m);
  return 1.0 / denom;  // exp(max - m) == 1
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  std::vector<int> shp = x.shape;
  shp[0] = static_cast<int>(idx.size());
  Tensor out(std::move(shp));
  const std::size_t row = x.data.size() / x.dim(0);
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy(x.data.begin() + idx[j] * row, x.data.begin() + (idx[j] + 1) * row,
              out.data.begin() + j * row);
  return out;
}

void scatter_rows(Tensor& dst, const std::vector<int>& idx, const Tensor& src) {
  const std::size_t row = dst.data.size() / dst.dim(0);
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy(src.data.begin() + j * row, src.data.begin() + (j + 1) * row,
              dst.data.begin() + idx[j] * row);
}

void scatter_add_rows(Tensor& dst, const std::vector<int>& idx, const Tensor& src) {
  const std::size_t row = dst.data.size() / dst.dim(0);
  for (std::size_t j = 0; j < idx.size(); ++j)
    for (std::size_t i = 0; i < row; ++i)
      dst.data[idx[j] * row + i] += src.data[j * row + i];
}

void relu_inplace(Tensor& t) {
  for (double& v : t.data)
    if (v < 0.0) v = 0.0;
}

Tensor bn_infer(const Tensor& x, const BatchNorm2d& bn) {
  return kern::batchnorm2d_infer(x, bn.gamma.val(), bn.beta.val(),
                                 bn.running_mean.val(), bn.running_var.val(),
                                 bn.eps);
}

constexpr int kStemKernel = 3, kStemStride = 2, kStemPad = 1;

int stem_out_dim(int in) { return (in + 2 * kStemPad - kStemKernel) / kStemStride + 1; }

}  // namespace

const char* mechanism_name(Mechanism m) {
  return m == Mechanism::conditional_skipping ? "conditional_skipping"
                                              : "early_termination";
}

Mechanism mechanism_from_name(const std::string& name) {
  if (name == "conditional_skipping") return Mechanism::conditional_skipping;
  if (name == "early_termination") return Mechanism::early_termination;
  throw ConfigError("unknown mechanism \"" + name +
                    "\" (expected conditional_skipping or early_termination)");
}

std::vector<double> AdnnSpec::thresholds() const {
  std::vector<double> t(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) t[i] = blocks[i].threshold;
  return t;
}

void AdnnSpec::validate() const {
  if (blocks.empty()) throw ConfigError("AdnnSpec: needs at least one block");
  if (num_classes < 2) throw ConfigError("AdnnSpec: num_classes must be >= 2");
  if (input_shape.channels < 1 || input_shape.height < 1 || input_shape.width < 1)
    throw ConfigError("AdnnSpec: input dimensions must be positive");

  const int hs = stem_out_dim(input_shape.height);
  const int ws = stem_out_dim(input_shape.width);
  if (hs < 1 || ws < 1)
    throw ConfigError("AdnnSpec: input too small for the strided stem");

  int channels = -1;
  double gated_total = 0.0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& b = blocks[i];
    const std::string at = "AdnnSpec block " + std::to_string(i);
    if (b.index != static_cast<int>(i))
      throw ConfigError(at + ": index " + std::to_string(b.index) +
                        " breaks the 0..N-1 ordering");
    if (b.threshold < 0.0 || b.threshold > 1.0)
      throw ConfigError(at + ": threshold outside [0,1]");
    if (b.layer_shape.empty()) throw ConfigError(at + ": empty layer_shape");

    const LayerShape& body = b.layer_shape.front();
    if (body.kind != LayerShape::Kind::conv || body.cin != body.cout)
      throw ConfigError(at + ": first layer must be a channel-preserving conv");
    if (channels < 0) channels = body.cin;
    if (body.cin != channels)
      throw ConfigError(at + ": channel width differs from block 0");
    if (body.hout != hs || body.wout != ws)
      throw ConfigError(at + ": spatial dims " + std::to_string(body.hout) + "x" +
                        std::to_string(body.wout) + " do not match the stem output " +
                        std::to_string(hs) + "x" + std::to_string(ws));

    if (mechanism == Mechanism::conditional_skipping) {
      if (b.layer_shape.size() != 1)
        throw ConfigError(at + ": skip blocks carry exactly one conv layer");
    } else {
      if (b.layer_shape.size() != 2 ||
          b.layer_shape[1].kind != LayerShape::Kind::dense ||
          b.layer_shape[1].din != channels ||
          b.layer_shape[1].dout != num_classes)
        throw ConfigError(at + ": early-termination blocks need a conv plus a " +
                          std::to_string(channels) + "->" +
                          std::to_string(num_classes) + " exit head");
    }

    const double expected = block_flops(b.layer_shape);
    if (b.flops_weight != expected)
      throw ConfigError(at + ": flops_weight " + std::to_string(b.flops_weight) +
                        " != " + std::to_string(expected) +
                        " derived from layer_shape");
    gated_total += b.flops_weight;
  }
  if (!(gated_total > 0.0))
    throw ConfigError("AdnnSpec: gated blocks carry no flops — nothing is adaptive");
}

AdnnSpec make_reference_spec(Mechanism mechanism, int num_blocks, int num_classes,
                             int channels, InputShape input) {
  AdnnSpec spec;
  spec.mechanism = mechanism;
  spec.num_classes = num_classes;
  spec.input_shape = input;
  const int hs = stem_out_dim(input.height);
  const int ws = stem_out_dim(input.width);
  for (int i = 0; i < num_blocks; ++i) {
    BlockSpec b;
    b.index = i;
    b.threshold = 0.5;
    b.layer_shape = {LayerShape::conv(3, channels, channels, hs, ws)};
    if (mechanism == Mechanism::early_termination)
      b.layer_shape.push_back(LayerShape::dense(channels, num_classes));
    b.flops_weight = block_flops(b.layer_shape);
    spec.blocks.push_back(std::move(b));
  }
  spec.validate();
  return spec;
}

AdnnModel AdnnModel::build(const AdnnSpec& spec, std::uint64_t rng_seed) {
  spec.validate();
  AdnnModel m;
  m.spec_ = spec;
  m.reg_ = std::make_shared<ParamRegistry>();
  m.channels_ = spec.blocks.front().layer_shape.front().cin;
  m.hs_ = stem_out_dim(spec.input_shape.height);
  m.ws_ = stem_out_dim(spec.input_shape.width);

  Rng root(rng_seed);
  Rng stem_rng = root.split(0);
  m.stem_ = Conv2d(*m.reg_, "stem", spec.input_shape.channels, m.channels_,
                   kStemKernel, kStemStride, kStemPad, stem_rng);
  m.stem_bn_ = BatchNorm2d(*m.reg_, "stem.bn", m.channels_);

  const int n = spec.num_blocks();
  std::vector<double> weights;
  for (int i = 0; i < n; ++i) {
    const std::string base = "block" + std::to_string(i);
    Rng conv_rng = root.split(100 + i);
    m.blocks_.emplace_back(*m.reg_, base + ".conv", m.channels_, m.channels_, 3,
                           1, 1, conv_rng);
    m.block_bns_.emplace_back(*m.reg_, base + ".bn", m.channels_);
    if (spec.mechanism == Mechanism::conditional_skipping) {
      Rng gate_rng = root.split(200 + i);
      m.gates_.emplace_back(*m.reg_, base + ".gate", m.channels_, 1, gate_rng);
      // Published gated residual networks run their blocks at very different
      // per-layer rates: early blocks nearly always execute, late ones are
      // skipped for most inputs. Grading the gate bias start points gives the
      // reference model that same regime spread; training refines the rates
      // per input but keeps the blocks straddling distinct thresholds.
      const double f = (i + 0.5) / n;
      const double p = f < 0.375 ? 0.88 : (f < 0.625 ? 0.62 : (f < 0.75 ? 0.45 : 0.28));
      m.gates_.back().b.raw()->value[0] = std::log(p / (1.0 - p));
    } else {
      Rng exit_rng = root.split(300 + i);
      m.exits_.emplace_back(*m.reg_, base + ".exit", m.channels_,
                            spec.num_classes, exit_rng);
    }
    weights.push_back(spec.blocks[i].flops_weight);
  }

  double stem_flops =
      block_flops(LayerShape::conv(kStemKernel, spec.input_shape.channels,
                                   m.channels_, m.hs_, m.ws_));
  if (spec.mechanism == Mechanism::conditional_skipping) {
    Rng cls_rng = root.split(400);
    m.classifier_ = Dense(*m.reg_, "classifier", m.channels_, spec.num_classes,
                          cls_rng);
    // Gates and the classifier execute on every input, so their cost sits in
    // the unconditional bucket.
    stem_flops += n * block_flops(LayerShape::dense(m.channels_, 1));
    stem_flops += block_flops(LayerShape::dense(m.channels_, spec.num_classes));
  }
  m.profile_ = CostProfile::make(std::move(weights), stem_flops);
  return m;
}

HardForward AdnnModel::forward_hard(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != spec_.input_shape.channels ||
      x.dim(2) != spec_.input_shape.height || x.dim(3) != spec_.input_shape.width)
    throw ShapeError("forward: input " + shape_str(x.shape) + " does not match " +
                     "the model input shape");
  const int batch = x.dim(0);
  const int n = spec_.num_blocks();
  const int k = spec_.num_classes;

  HardForward out;
  out.traces.resize(batch);
  out.flops.assign(batch, profile_.stem_flops);
  for (BlockTrace& t : out.traces) {
    t.gate_scores.assign(n, 0.0);
    t.activated.assign(n, false);
  }

  Tensor h = bn_infer(
      kern::conv2d(x, stem_.w.val(), &stem_.b.val(), kStemStride, kStemPad),
      stem_bn_);
  relu_inplace(h);

  if (spec_.mechanism == Mechanism::conditional_skipping) {
    for (int i = 0; i < n; ++i) {
      const Tensor pooled = kern::global_avg_pool(h);
      const Tensor raw = kern::dense(pooled, gates_[i].w.val(), &gates_[i].b.val());
      std::vector<int> active;
      for (int s = 0; s < batch; ++s) {
        const double score = sigmoid_s(raw.data[s]);
        out.traces[s].gate_scores[i] = score;
        if (score > spec_.blocks[i].threshold) {  // strict: ties skip
          out.traces[s].activated[i] = true;
          out.flops[s] += spec_.blocks[i].flops_weight;
          active.push_back(s);
        }
      }
      if (active.empty()) continue;
      Tensor sub = gather_rows(h, active);
      Tensor branch = bn_infer(
          kern::conv2d(sub, blocks_[i].w.val(), &blocks_[i].b.val(), 1, 1),
          block_bns_[i]);
      relu_inplace(branch);
      scatter_add_rows(h, active, branch);
    }
    out.logits = kern::dense(kern::global_avg_pool(h), classifier_.w.val(),
                             &classifier_.b.val());
    for (int s = 0; s < batch; ++s)
      out.traces[s].logits.assign(&out.logits.at2(s, 0), &out.logits.at2(s, 0) + k);
    return out;
  }

  // Early termination: march the shrinking set of still-running samples
  // through the blocks; each head's confidence decides who leaves.
  out.logits = Tensor(std::vector<int>{batch, k});
  std::vector<int> alive(batch);
  for (int s = 0; s < batch; ++s) alive[s] = s;
  for (int i = 0; i < n && !alive.empty(); ++i) {
    Tensor sub = gather_rows(h, alive);
    Tensor branch = bn_infer(
        kern::conv2d(sub, blocks_[i].w.val(), &blocks_[i].b.val(), 1, 1),
        block_bns_[i]);
    relu_inplace(branch);
    for (std::size_t j = 0; j < sub.data.size(); ++j) sub.data[j] += branch.data[j];
    scatter_rows(h, alive, sub);
    const Tensor z = kern::dense(kern::global_avg_pool(sub), exits_[i].w.val(),
                                 &exits_[i].b.val());
    std::vector<int> still;
    for (std::size_t j = 0; j < alive.size(); ++j) {
      const int s = alive[j];
      const double conf = max_softmax(&z.at2(static_cast<int>(j), 0), k);
      out.traces[s].gate_scores[i] = conf;
      out.traces[s].activated[i] = true;
      out.flops[s] += spec_.blocks[i].flops_weight;
      const bool leave = conf > spec_.blocks[i].threshold || i == n - 1;
      if (leave) {
        out.traces[s].exit_index = i;
        out.traces[s].logits.assign(&z.at2(static_cast<int>(j), 0),
                                    &z.at2(static_cast<int>(j), 0) + k);
        for (int c = 0; c < k; ++c)
          out.logits.at2(s, c) = z.at2(static_cast<int>(j), c);
      } else {
        still.push_back(s);
      }
    }
    alive.swap(still);
  }
  return out;
}

Tensor AdnnModel::forward_all_exits(const Tensor& x) const {
  if (spec_.mechanism != Mechanism::early_termination)
    throw ConfigError("forward_all_exits only applies to early-termination models");
  if (x.ndim() != 4) throw ShapeError("forward_all_exits: expected [B,C,H,W]");
  const int batch = x.dim(0);
  const int n = spec_.num_blocks();
  const int k = spec_.num_classes;
  Tensor all(std::vector<int>{batch, n, k});
  Tensor h = bn_infer(
      kern::conv2d(x, stem_.w.val(), &stem_.b.val(), kStemStride, kStemPad),
      stem_bn_);
  relu_inplace(h);
  for (int i = 0; i < n; ++i) {
    Tensor branch = bn_infer(
        kern::conv2d(h, blocks_[i].w.val(), &blocks_[i].b.val(), 1, 1),
        block_bns_[i]);
    relu_inplace(branch);
    for (std::size_t j = 0; j < h.data.size(); ++j) h.data[j] += branch.data[j];
    const Tensor z = kern::dense(kern::global_avg_pool(h), exits_[i].w.val(),
                                 &exits_[i].b.val());
    for (int s = 0; s < batch; ++s)
      for (int c = 0; c < k; ++c)
        all.data[(static_cast<std::size_t>(s) * n + i) * k + c] = z.at2(s, c);
  }
  return all;
}

SoftForward AdnnModel::forward_soft(const ad::Value& x, double temperature,
                                    bool training) const {
  if (!(temperature > 0.0))
    throw ConfigError("forward_soft: temperature must be > 0");
  const int batch = x.val().dim(0);
  const int n = spec_.num_blocks();
  const double inv_t = 1.0 / temperature;
  const double gated = profile_.total - profile_.stem_flops;

  SoftForward sf;
  ad::Value h = ad::relu(stem_bn_(stem_(x), training));
  ad::Value cost;

  if (spec_.mechanism == Mechanism::conditional_skipping) {
    for (int i = 0; i < n; ++i) {
      ad::Value score = ad::sigmoid(ad::reshape(
          gates_[i](ad::global_avg_pool(h)), {batch}));
      sf.gate_scores.push_back(score);
      ad::Value a = ad::sigmoid(ad::mul_scalar(
          ad::add_scalar(score, -spec_.blocks[i].threshold), inv_t));
      ad::Value branch = ad::relu(block_bns_[i](blocks_[i](h), training));
      h = ad::add(h, ad::mul_rowscalar(branch, a));
      ad::Value term = ad::mul_scalar(a, spec_.blocks[i].flops_weight);
      cost = cost.defined() ? ad::add(cost, term) : term;
    }
    sf.logits = classifier_(ad::global_avg_pool(h));
  } else {
    // Execution propensity of block i: the product of "no exit yet" factors
    // of earlier heads. Block 0 always runs.
    ad::Value reach = ad::constant(Tensor::full({batch}, 1.0));
    for (int i = 0; i < n; ++i) {
      h = ad::add(h, ad::relu(block_bns_[i](blocks_[i](h), training)));
      ad::Value z = exits_[i](ad::global_avg_pool(h));
      sf.all_logits.push_back(z);
      ad::Value conf = ad::row_max(ad::softmax_rows(z));
      sf.gate_scores.push_back(conf);
      ad::Value term = ad::mul_scalar(reach, spec_.blocks[i].flops_weight);
      cost = cost.defined() ? ad::add(cost, term) : term;
      if (i + 1 < n) {
        ad::Value s = ad::sigmoid(ad::mul_scalar(
            ad::add_scalar(conf, -spec_.blocks[i].threshold), inv_t));
        ad::Value stay = ad::add_scalar(ad::mul_scalar(s, -1.0), 1.0);
        reach = ad::mul(reach, stay);
      }
    }
    sf.logits = sf.all_logits.back();
  }
  sf.norm_soft_cost = ad::mul_scalar(cost, 1.0 / gated);
  return sf;
}

void AdnnModel::set_trainable(bool trainable) {
  for (const ParamRegistry::Item& it : reg_->items())
    if (it.trainable) it.value.raw()->requires_grad = trainable;
}

AdnnModel AdnnModel::clone() const {
  // Registry layout is a pure function of the spec, so a rebuild produces
  // item-for-item matching storage; only the values need copying over.
  AdnnModel out = build(spec_, 0);
  const auto& src = reg_->items();
  auto& dst = out.reg_->items();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i].value.raw()->value = src[i].value.raw()->value;
  return out;
}

Tensor AdnnModel::stem_features(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != spec_.input_shape.channels ||
      x.dim(2) != spec_.input_shape.height || x.dim(3) != spec_.input_shape.width)
    throw ShapeError("stem_features: input " + shape_str(x.shape) +
                     " does not match the model input shape");
  Tensor h =
      kern::conv2d(x, stem_.w.val(), &stem_.b.val(), kStemStride, kStemPad);
  Tensor out({x.dim(0), static_cast<int>(h.numel() / x.dim(0))});
  out.data = std::move(h.data);
  return out;
}

AdnnModel build_skip_model(const AdnnSpec& spec, std::uint64_t rng_seed) {
  if (spec.mechanism != Mechanism::conditional_skipping)
    throw ConfigError("build_skip_model: spec.mechanism is not conditional_skipping");
  return AdnnModel::build(spec, rng_seed);
}

AdnnModel build_early_exit_model(const AdnnSpec& spec, std::uint64_t rng_seed) {
  if (spec.mechanism != Mechanism::early_termination)
    throw ConfigError("build_early_exit_model: spec.mechanism is not early_termination");
  return AdnnModel::build(spec, rng_seed);
}

HardForward forward_with_trace(const AdnnModel& model, const Tensor& x) {
  return model.forward_hard(x);
}

AdnnModel set_thresholds(const AdnnModel& model, const std::vector<double>& taus) {
  if (taus.size() != static_cast<std::size_t>(model.spec().num_blocks()))
    throw ConfigError("set_thresholds: expected " +
                      std::to_string(model.spec().num_blocks()) + " values, got " +
                      std::to_string(taus.size()));
  for (double t : taus)
    if (t < 0.0 || t > 1.0)
      throw ConfigError("set_thresholds: threshold " + std::to_string(t) +
                        " outside [0,1]");
  AdnnModel out = model;  // weights shared, spec copied
  for (std::size_t i = 0; i < taus.size(); ++i)
    out.spec_.blocks[i].threshold = taus[i];
  return out;
}

}  // namespace adnnperf
