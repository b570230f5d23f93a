#include "adnnperf/gan.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "adnnperf/errors.hpp"
#include "adnnperf/optim.hpp"
#include "adnnperf/rng.hpp"

namespace adnnperf {

namespace {

// Stride-2, k=3, pad=1 output extent (the only downsampling geometry used
// by the encoder and discriminator).
int half_dim(int d) { return (d - 1) / 2 + 1; }

Tensor gather_batch(const Tensor& x, const std::vector<int>& order, int start,
                    int count) {
  const std::int64_t row = x.numel() / x.dim(0);
  Tensor out({count, x.dim(1), x.dim(2), x.dim(3)});
  for (int i = 0; i < count; ++i) {
    const double* src =
        x.data.data() + static_cast<std::int64_t>(order[start + i]) * row;
    std::copy(src, src + row, out.data.begin() + i * row);
  }
  return out;
}

Tensor slice_one(const Tensor& x, int n) {
  const std::int64_t row = x.numel() / x.dim(0);
  Tensor out({1, x.dim(1), x.dim(2), x.dim(3)});
  const double* src = x.data.data() + static_cast<std::int64_t>(n) * row;
  std::copy(src, src + row, out.data.begin());
  return out;
}

Tensor drop_batch_dim(const Tensor& x) {
  Tensor out({x.dim(1), x.dim(2), x.dim(3)});
  out.data = x.data;
  return out;
}

double safe_softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

std::vector<Tensor> snapshot_values(const ParamRegistry& reg) {
  std::vector<Tensor> out;
  out.reserve(reg.items().size());
  for (const auto& item : reg.items()) out.push_back(item.value.val());
  return out;
}

void restore_values(ParamRegistry& reg, const std::vector<Tensor>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i)
    reg.items()[i].value.raw()->value = snap[i];
}

// Temporarily removes a network's weights from gradient computation and
// restores the exact prior flags on scope exit, so serving as a frozen cost
// oracle leaves the model's gradient participation untouched.
class FreezeGuard {
 public:
  explicit FreezeGuard(const ParamRegistry& reg) {
    saved_.reserve(reg.items().size());
    for (const auto& item : reg.items()) {
      ad::Node* n = item.value.raw();
      saved_.emplace_back(n, n->requires_grad);
      n->requires_grad = false;
    }
  }
  ~FreezeGuard() {
    for (auto& [node, flag] : saved_) node->requires_grad = flag;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<ad::Node*, bool>> saved_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Generator

Generator Generator::build(const GeneratorSpec& spec, const InputShape& input,
                           const PerturbationBudget& budget,
                           std::uint64_t seed) {
  budget.validate();
  if (spec.enc1_channels < 1 || spec.enc2_channels < 1 || spec.res_blocks < 0)
    throw ConfigError("generator spec: channel counts must be >= 1");
  if (input.channels < 1 || input.height < 2 || input.width < 2)
    throw ConfigError("generator: input shape too small");
  if (input.height % 2 != 0 || input.width % 2 != 0)
    throw ConfigError(
        "generator: input height/width must be even so the stride-2 "
        "encoder/decoder pair round-trips the shape");

  Generator g;
  g.spec_ = spec;
  g.input_ = input;
  g.budget_ = budget;
  g.reg_ = std::make_shared<ParamRegistry>();
  const double dims = static_cast<double>(input.channels) * input.height *
                      static_cast<double>(input.width);
  // The squashing head lands delta inside the epsilon-ball by construction:
  // per entry for Linf, via the 1/sqrt(D) worst case for L2.
  g.delta_scale_ = budget.norm_order == NormOrder::linf
                       ? budget.epsilon
                       : budget.epsilon / std::sqrt(dims);

  Rng root(seed);
  ParamRegistry& reg = *g.reg_;
  {
    Rng r = root.split(0);
    g.enc1_ = Conv2d(reg, "enc1", input.channels, spec.enc1_channels, 3, 1, 1, r);
  }
  g.enc1_bn_ = BatchNorm2d(reg, "enc1.bn", spec.enc1_channels);
  {
    Rng r = root.split(1);
    g.enc2_ =
        Conv2d(reg, "enc2", spec.enc1_channels, spec.enc2_channels, 3, 2, 1, r);
  }
  g.enc2_bn_ = BatchNorm2d(reg, "enc2.bn", spec.enc2_channels);
  for (int i = 0; i < spec.res_blocks; ++i) {
    Rng r = root.split(100 + static_cast<std::uint64_t>(i));
    const std::string base = "res" + std::to_string(i);
    g.res_.emplace_back(reg, base + ".conv", spec.enc2_channels,
                        spec.enc2_channels, 3, 1, 1, r);
    g.res_bn_.emplace_back(reg, base + ".bn", spec.enc2_channels);
  }
  {
    Rng r = root.split(200);
    g.dec1_ = ConvTranspose2d(reg, "dec1", spec.enc2_channels,
                              spec.enc1_channels, 3, 2, 1, 1, r);
  }
  g.dec1_bn_ = BatchNorm2d(reg, "dec1.bn", spec.enc1_channels);
  {
    Rng r = root.split(201);
    g.dec2_ = ConvTranspose2d(reg, "dec2", spec.enc1_channels, input.channels,
                              3, 1, 1, 0, r);
  }
  return g;
}

Generator::Out Generator::operator()(const ad::Value& x, bool training) const {
  const Tensor& xt = x.val();
  if (xt.ndim() != 4 || xt.dim(1) != input_.channels ||
      xt.dim(2) != input_.height || xt.dim(3) != input_.width)
    throw ShapeError("generator: input batch is " + shape_str(xt.shape) +
                     ", expected [B," + std::to_string(input_.channels) + "," +
                     std::to_string(input_.height) + "," +
                     std::to_string(input_.width) + "]");

  ad::Value h = ad::relu(enc1_bn_(enc1_(x), training));
  h = ad::relu(enc2_bn_(enc2_(h), training));
  for (std::size_t i = 0; i < res_.size(); ++i)
    h = ad::add(h, ad::relu(res_bn_[i](res_[i](h), training)));
  h = ad::relu(dec1_bn_(dec1_(h), training));
  ad::Value raw = dec2_(h);

  Out out;
  out.delta = ad::mul_scalar(ad::tanh_act(raw), delta_scale_);
  out.x_bar = ad::clamp01(ad::add(x, out.delta));
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator Discriminator::build(const DiscriminatorSpec& spec,
                                   const InputShape& input,
                                   std::uint64_t seed) {
  if (spec.base_channels < 1)
    throw ConfigError("discriminator spec: base_channels must be >= 1");
  if (input.channels < 1 || input.height < 2 || input.width < 2)
    throw ConfigError("discriminator: input shape too small");

  Discriminator d;
  d.spec_ = spec;
  d.reg_ = std::make_shared<ParamRegistry>();
  ParamRegistry& reg = *d.reg_;
  Rng root(seed);

  int cin = input.channels, h = input.height, w = input.width;
  int cout = spec.base_channels;
  for (int i = 0; i < 3; ++i) {
    Rng r = root.split(static_cast<std::uint64_t>(i));
    const std::string base = "conv" + std::to_string(i);
    d.convs_.emplace_back(reg, base, cin, cout, 3, 2, 1, r);
    d.bns_.emplace_back(reg, base + ".bn", cout);
    cin = cout;
    cout *= 2;
    h = half_dim(h);
    w = half_dim(w);
  }
  d.flat_dim_ = cin * h * w;
  {
    Rng r = root.split(100);
    d.head_ = Dense(reg, "head", d.flat_dim_, 1, r);
  }
  return d;
}

ad::Value Discriminator::operator()(const ad::Value& x, bool training) const {
  ad::Value h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i)
    h = ad::leaky_relu(bns_[i](convs_[i](h), training), 0.2);
  const int batch = h.val().dim(0);
  h = ad::reshape(h, {batch, flat_dim_});
  h = head_(h);
  return ad::reshape(h, {batch});
}

// ---------------------------------------------------------------------------
// Losses

ad::Value gan_loss(const ad::Value& d_real_raw, const ad::Value& d_fake_raw) {
  if (!d_real_raw.defined() || !d_fake_raw.defined() ||
      d_real_raw.val().numel() == 0 ||
      d_real_raw.val().numel() != d_fake_raw.val().numel())
    throw ShapeError("gan_loss: score batches must be non-empty and equal");
  for (double v : d_real_raw.val().data)
    if (!std::isfinite(v)) throw NumericError("gan_loss: non-finite real score");
  for (double v : d_fake_raw.val().data)
    if (!std::isfinite(v)) throw NumericError("gan_loss: non-finite fake score");
  // log s(r) = -softplus(-r) and log(1 - s(f)) = -softplus(f): both exact and
  // finite for any finite raw score.
  ad::Value real_term =
      ad::mean_all(ad::softplus(ad::mul_scalar(d_real_raw, -1.0)));
  ad::Value fake_term = ad::mean_all(ad::softplus(d_fake_raw));
  return ad::mul_scalar(ad::add(real_term, fake_term), -1.0);
}

double gan_loss(const std::vector<double>& d_real_raw,
                const std::vector<double>& d_fake_raw) {
  if (d_real_raw.empty() || d_real_raw.size() != d_fake_raw.size())
    throw ShapeError("gan_loss: score lists must be non-empty and equal");
  double real_sum = 0.0, fake_sum = 0.0;
  for (double v : d_real_raw) {
    if (!std::isfinite(v)) throw NumericError("gan_loss: non-finite real score");
    real_sum += -safe_softplus(-v);
  }
  for (double v : d_fake_raw) {
    if (!std::isfinite(v)) throw NumericError("gan_loss: non-finite fake score");
    fake_sum += -safe_softplus(v);
  }
  const double n = static_cast<double>(d_real_raw.size());
  return real_sum / n + fake_sum / n;
}

ad::Value adv_loss(const ad::Value& generated_batch, const AdnnModel& target,
                   double temperature) {
  if (temperature <= 0.0)
    throw ConfigError("adv_loss: temperature must be positive");
  SoftForward sf = target.forward_soft(generated_batch, temperature, false);
  ad::Value diff = ad::add_scalar(sf.norm_soft_cost, -1.0);
  return ad::mean_all(ad::mul(diff, diff));
}

double adv_loss_from_costs(const std::vector<double>& normalized_costs) {
  if (normalized_costs.empty())
    throw ShapeError("adv_loss: empty cost batch");
  double sum = 0.0;
  for (double c : normalized_costs) sum += (c - 1.0) * (c - 1.0);
  return sum / static_cast<double>(normalized_costs.size());
}

ad::Value per_loss(const ad::Value& perturbation_batch, NormOrder order) {
  ad::Value rows = order == NormOrder::l2 ? ad::l2norm_rows(perturbation_batch)
                                          : ad::maxabs_rows(perturbation_batch);
  return ad::mean_all(rows);
}

double per_loss(const std::vector<Tensor>& perturbations, NormOrder order) {
  if (perturbations.empty()) return 0.0;
  double sum = 0.0;
  for (const Tensor& t : perturbations) sum += pnorm(t, order);
  return sum / static_cast<double>(perturbations.size());
}

// ---------------------------------------------------------------------------
// Training

void GanTrainConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw ConfigError("train config: alpha and beta must be positive");
  if (!(learning_rate > 0.0))
    throw ConfigError("train config: learning_rate must be positive");
  if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
  if (early_stop_patience < 1)
    throw ConfigError("train config: early_stop_patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(temperature > 0.0))
    throw ConfigError("train config: temperature must be positive");
  budget.validate();
  if (generator.enc1_channels < 1 || generator.enc2_channels < 1 ||
      generator.res_blocks < 0 || discriminator.base_channels < 1)
    throw ConfigError("train config: network widths must be >= 1");
}

GanTrainResult train_gan(const AdnnModel& target, const Dataset& data,
                         const GanTrainConfig& cfg) {
  cfg.validate();
  const InputShape in = target.spec().input_shape;
  if (data.train_x.ndim() != 4 || data.train_x.dim(0) < 1)
    throw ConfigError("train_gan: empty training split");
  if (data.test_x.ndim() != 4 || data.test_x.dim(0) < 1)
    throw ConfigError("train_gan: early stopping needs a held-out split");
  if (data.train_x.dim(1) != in.channels || data.train_x.dim(2) != in.height ||
      data.train_x.dim(3) != in.width)
    throw ConfigError("train_gan: dataset shape " +
                      shape_str(data.train_x.shape) +
                      " does not match the target model input");

  Rng root(cfg.rng_seed);
  GanTrainResult res;
  res.generator = Generator::build(cfg.generator, in, cfg.budget,
                                   root.split(10).next_u64());
  res.discriminator =
      Discriminator::build(cfg.discriminator, in, root.split(11).next_u64());
  Generator& gen = res.generator;
  Discriminator& dis = res.discriminator;

  FreezeGuard freeze(target.params());
  const std::vector<ad::Value> g_params = gen.params().trainables();
  const std::vector<ad::Value> d_params = dis.params().trainables();
  Adam g_opt(cfg.learning_rate), d_opt(cfg.learning_rate);

  const int n_train = data.train_x.dim(0);
  const int n_val = data.test_x.dim(0);
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  const Rng shuffle_root = root.split(12);

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_gen, best_dis;
  int bad_epochs = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng erng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);

    double sum_gan = 0.0, sum_adv = 0.0, sum_per = 0.0, sum_total = 0.0;
    for (int start = 0, batch_idx = 0; start < n_train;
         start += cfg.batch_size, ++batch_idx) {
      const int k = std::min(cfg.batch_size, n_train - start);
      ad::Value xv = ad::constant(gather_batch(data.train_x, order, start, k));

      Generator::Out go = gen(xv, true);
      ad::Value d_real = dis(xv, true);
      ad::Value d_fake = dis(go.x_bar, true);
      ad::Value l_gan = gan_loss(d_real, d_fake);
      ad::Value l_adv = adv_loss(go.x_bar, target, cfg.temperature);
      ad::Value l_per = per_loss(go.delta, cfg.budget.norm_order);
      ad::Value total =
          ad::add(l_gan, ad::add(ad::mul_scalar(l_adv, cfg.alpha),
                                 ad::mul_scalar(l_per, cfg.beta)));

      const double v_gan = l_gan.val()[0], v_adv = l_adv.val()[0],
                   v_per = l_per.val()[0], v_total = total.val()[0];
      if (!std::isfinite(v_total)) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "train_gan: non-finite loss at epoch %d batch %d "
                      "(gan=%g adv=%g per=%g)",
                      epoch, batch_idx, v_gan, v_adv, v_per);
        throw NumericError(msg);
      }

      // One backward serves both updates: the generator descends the full
      // objective; the discriminator ascends it, and since only the gan term
      // touches its weights that is exactly ascending its classification
      // objective.
      ad::backward(total);
      g_opt.step(g_params, 1.0);
      d_opt.step(d_params, -1.0);

      sum_gan += v_gan * k;
      sum_adv += v_adv * k;
      sum_per += v_per * k;
      sum_total += v_total * k;
    }

    // Held-out composite for early stopping; inference-mode normalization,
    // no parameter updates.
    double val_adv = 0.0, val_per = 0.0;
    for (int start = 0; start < n_val; start += cfg.batch_size) {
      const int k = std::min(cfg.batch_size, n_val - start);
      Tensor xb({k, in.channels, in.height, in.width});
      const std::int64_t row = data.test_x.numel() / n_val;
      std::copy(data.test_x.data.begin() + start * row,
                data.test_x.data.begin() + (start + k) * row, xb.data.begin());
      ad::Value xv = ad::constant(std::move(xb));
      Generator::Out go = gen(xv, false);
      val_adv += adv_loss(go.x_bar, target, cfg.temperature).val()[0] * k;
      val_per += per_loss(go.delta, cfg.budget.norm_order).val()[0] * k;
    }
    const double val_obj = (val_adv + cfg.beta * val_per) / n_val;

    GanEpochStats st;
    st.epoch = epoch;
    st.gan = sum_gan / n_train;
    st.adv = sum_adv / n_train;
    st.per = sum_per / n_train;
    st.total = sum_total / n_train;
    st.val_objective = val_obj;
    st.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.history.push_back(st);

    if (val_obj < best_val) {
      best_val = val_obj;
      res.best_epoch = epoch;
      best_gen = snapshot_values(gen.params());
      best_dis = snapshot_values(dis.params());
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.early_stop_patience) {
      break;
    }
  }

  if (res.best_epoch >= 0) {
    restore_values(gen.params(), best_gen);
    restore_values(dis.params(), best_dis);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Generation

TestSuite generate(const Generator& gen, const AdnnModel& target,
                   const Tensor& seeds, const PerturbationBudget& budget) {
  budget.validate();
  if (seeds.ndim() != 4 || seeds.dim(0) < 1)
    throw ShapeError("generate: seeds must be a non-empty [N,C,H,W] batch");
  const int n = seeds.dim(0);

  TestSuite suite;
  suite.budget = budget;
  suite.producer = Producer::deepperform;
  suite.entries.resize(static_cast<std::size_t>(n));

  Tensor generated(seeds.shape);
  const std::int64_t row = seeds.numel() / n;
  for (int i = 0; i < n; ++i) {
    Tensor x = slice_one(seeds, i);
    const auto t0 = std::chrono::steady_clock::now();
    Generator::Out go = gen(ad::constant(x), false);
    Tensor clipped = clip_sample(x, go.x_bar.val(), budget);
    const auto t1 = std::chrono::steady_clock::now();

    SuiteEntry& e = suite.entries[static_cast<std::size_t>(i)];
    e.seed_id = i;
    e.seed = drop_batch_dim(x);
    e.generated = drop_batch_dim(clipped);
    e.gen_time_seconds = std::chrono::duration<double>(t1 - t0).count();
    std::copy(clipped.data.begin(), clipped.data.end(),
              generated.data.begin() + i * row);
  }

  // Bookkeeping outside the timed region: traces and exact executed costs
  // for both sides of every pair.
  HardForward seed_fwd = target.forward_hard(seeds);
  HardForward gen_fwd = target.forward_hard(generated);
  for (int i = 0; i < n; ++i) {
    SuiteEntry& e = suite.entries[static_cast<std::size_t>(i)];
    e.seed_trace = seed_fwd.traces[static_cast<std::size_t>(i)];
    e.generated_trace = gen_fwd.traces[static_cast<std::size_t>(i)];
    e.seed_cost = seed_fwd.flops[static_cast<std::size_t>(i)];
    e.generated_cost = gen_fwd.flops[static_cast<std::size_t>(i)];
  }
  return suite;
}

void save_history_csv(const std::vector<GanEpochStats>& history,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot open history csv for writing: " + path);
  out << "epoch,gan,adv,per,total,val_objective,seconds\n";
  char line[256];
  for (const GanEpochStats& s : history) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n",
                  s.epoch, s.gan, s.adv, s.per, s.total, s.val_objective,
                  s.seconds);
    out << line;
  }
  if (!out.good()) throw ArtifactError("failed writing history csv: " + path);
}

}  // namespace adnnperf
