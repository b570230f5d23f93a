#include <cmath>
#include <limits>
#include <vector>

#include "adnnperf/adnn.hpp"
#include "adnnperf/budget.hpp"
#include "adnnperf/errors.hpp"
#include "adnnperf/gan.hpp"
#include "adnnperf/rng.hpp"
#include "doctest.h"

using namespace adnnperf;

namespace {

Tensor random_images(int n, const InputShape& in, std::uint64_t seed) {
  Tensor x({n, in.channels, in.height, in.width});
  Rng rng(seed);
  for (double& v : x.data) v = rng.uniform();
  return x;
}

Tensor row_of(const Tensor& batch, int n) {
  Tensor out({batch.dim(1), batch.dim(2), batch.dim(3)});
  const std::int64_t row = out.numel();
  std::copy(batch.data.begin() + n * row, batch.data.begin() + (n + 1) * row,
            out.data.begin());
  return out;
}

AdnnModel tiny_skip_model() {
  return AdnnModel::build(
      make_reference_spec(Mechanism::conditional_skipping, 3, 2, 8, {3, 8, 8}),
      11);
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// gan_loss

TEST_CASE("gan_loss: indifferent discriminator scores 2*log(0.5)") {
  // Raw score 0 squashes to exactly 0.5 on both sides.
  const std::vector<double> zeros(4, 0.0);
  const double expected = 2.0 * std::log(0.5);
  CHECK(gan_loss(zeros, zeros) == doctest::Approx(expected).epsilon(1e-12));

  const ad::Value v = gan_loss(ad::constant(Tensor({4})),
                               ad::constant(Tensor({4})));
  CHECK(v.val()[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("gan_loss: a perfect discriminator approaches 0 from below") {
  // Strongly positive raw scores on real, strongly negative on fake.
  const std::vector<double> real{40.0, 40.0};
  const std::vector<double> fake{-40.0, -40.0};
  const double loss = gan_loss(real, fake);
  CHECK(loss <= 0.0);
  CHECK(loss > -1e-15);
}

TEST_CASE("gan_loss: graph value matches the scalar recomputation") {
  Rng rng(21);
  Tensor real({6}), fake({6});
  for (double& v : real.data) v = rng.normal(0.0, 2.0);
  for (double& v : fake.data) v = rng.normal(0.0, 2.0);
  const double oracle =
      gan_loss(std::vector<double>(real.data), std::vector<double>(fake.data));
  const ad::Value graph = gan_loss(ad::constant(real), ad::constant(fake));
  CHECK(graph.val()[0] == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("gan_loss: gradients match central differences of the oracle") {
  Tensor real({3}), fake({3});
  real.data = {0.2, -0.4, 1.0};
  fake.data = {-0.3, 0.7, 0.05};
  ad::Value r = ad::param(real), f = ad::param(fake);
  ad::backward(gan_loss(r, f));

  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    auto nudged = [&](const Tensor& t, double d) {
      std::vector<double> v = t.data;
      v[static_cast<std::size_t>(i)] += d;
      return v;
    };
    const double fd_r = (gan_loss(nudged(real, h), fake.data) -
                         gan_loss(nudged(real, -h), fake.data)) /
                        (2 * h);
    const double fd_f = (gan_loss(real.data, nudged(fake, h)) -
                         gan_loss(real.data, nudged(fake, -h))) /
                        (2 * h);
    CHECK(r.grad()[static_cast<std::size_t>(i)] ==
          doctest::Approx(fd_r).epsilon(1e-5));
    CHECK(f.grad()[static_cast<std::size_t>(i)] ==
          doctest::Approx(fd_f).epsilon(1e-5));
  }
}

TEST_CASE("gan_loss: rejects empty, mismatched and non-finite scores") {
  CHECK_THROWS_AS(gan_loss(std::vector<double>{}, std::vector<double>{}),
                  ShapeError);
  CHECK_THROWS_AS(gan_loss(std::vector<double>{0.1}, std::vector<double>{0.1, 0.2}),
                  ShapeError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(gan_loss(std::vector<double>{nan}, std::vector<double>{0.0}),
                  NumericError);
  Tensor bad({1});
  bad.data = {std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(gan_loss(ad::constant(bad), ad::constant(Tensor({1}))),
                  NumericError);
}

// ---------------------------------------------------------------------------
// adv_loss / per_loss

TEST_CASE("adv_loss oracle: hand-computed mean squared gaps") {
  CHECK(adv_loss_from_costs({1.0}) == 0.0);
  CHECK(adv_loss_from_costs({0.5}) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(adv_loss_from_costs({0.0, 0.5, 1.0, 1.0}) ==
        doctest::Approx(0.3125).epsilon(1e-15));
  CHECK_THROWS_AS(adv_loss_from_costs({}), ShapeError);
}

TEST_CASE("adv_loss graph equals the oracle applied to the soft costs") {
  const AdnnModel model = tiny_skip_model();
  const Tensor x = random_images(4, model.spec().input_shape, 3);
  const SoftForward sf = model.forward_soft(ad::constant(x), 0.1, false);
  const double oracle = adv_loss_from_costs(sf.norm_soft_cost.val().data);
  const ad::Value graph = adv_loss(ad::constant(x), model, 0.1);
  CHECK(graph.val()[0] == doctest::Approx(oracle).epsilon(1e-12));
  CHECK_THROWS_AS(adv_loss(ad::constant(x), model, 0.0), ConfigError);
}

TEST_CASE("per_loss: textbook norms and batch means") {
  Tensor single({1, 2});
  single.data = {3.0, 4.0};
  CHECK(per_loss(ad::constant(single), NormOrder::l2).val()[0] ==
        doctest::Approx(5.0).epsilon(1e-15));

  Tensor linf({1, 3});
  linf.data = {0.01, -0.03, 0.02};
  CHECK(per_loss(ad::constant(linf), NormOrder::linf).val()[0] ==
        doctest::Approx(0.03).epsilon(1e-15));

  CHECK(per_loss(ad::constant(Tensor({2, 5})), NormOrder::l2).val()[0] == 0.0);
  CHECK(per_loss(ad::constant(Tensor({2, 5})), NormOrder::linf).val()[0] == 0.0);

  // Batch mean over rows: norms 5 and 13 average to 9.
  Tensor both({2, 2});
  both.data = {3.0, 4.0, 5.0, 12.0};
  CHECK(per_loss(ad::constant(both), NormOrder::l2).val()[0] ==
        doctest::Approx(9.0).epsilon(1e-15));

  // Plain-tensor overload agrees.
  Tensor a({2}), b({2});
  a.data = {3.0, 4.0};
  b.data = {5.0, 12.0};
  CHECK(per_loss(std::vector<Tensor>{a, b}, NormOrder::l2) ==
        doctest::Approx(9.0).epsilon(1e-15));
  CHECK(per_loss(std::vector<Tensor>{}, NormOrder::l2) == 0.0);
}

// ---------------------------------------------------------------------------
// Generator / Discriminator structure

TEST_CASE("generator keeps its output inside the budget ball by construction") {
  const InputShape in{3, 8, 8};
  const Tensor x = random_images(5, in, 77);

  SUBCASE("Linf: every delta entry strictly below epsilon") {
    const PerturbationBudget budget{NormOrder::linf, 0.03};
    const Generator gen = Generator::build({}, in, budget, 5);
    const Generator::Out out = gen(ad::constant(x), false);
    CHECK(out.x_bar.val().shape == x.shape);
    double max_abs = 0.0;
    for (double v : out.delta.val().data) max_abs = std::max(max_abs, std::fabs(v));
    CHECK(max_abs < budget.epsilon);
    CHECK(max_abs > 0.0);
    for (double v : out.x_bar.val().data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (int i = 0; i < 5; ++i) {
      Tensor xb({1, in.channels, in.height, in.width});
      const std::int64_t row = xb.numel();
      std::copy(out.x_bar.val().data.begin() + i * row,
                out.x_bar.val().data.begin() + (i + 1) * row, xb.data.begin());
      Tensor xi({1, in.channels, in.height, in.width});
      std::copy(x.data.begin() + i * row, x.data.begin() + (i + 1) * row,
                xi.data.begin());
      CHECK(budget_compliant(xi, xb, budget, 0.0));
    }
  }
  SUBCASE("L2: per-sample norm below epsilon") {
    const PerturbationBudget budget{NormOrder::l2, 10.0};
    const Generator gen = Generator::build({}, in, budget, 5);
    const Generator::Out out = gen(ad::constant(x), false);
    const std::int64_t row = x.numel() / x.dim(0);
    for (int i = 0; i < 5; ++i) {
      double sq = 0.0;
      for (std::int64_t j = i * row; j < (i + 1) * row; ++j) {
        const double d = out.delta.val().data[static_cast<std::size_t>(j)];
        sq += d * d;
      }
      CHECK(std::sqrt(sq) < budget.epsilon);
    }
  }
}

TEST_CASE("generator build is deterministic in its seed and checks shapes") {
  const InputShape in{3, 8, 8};
  const PerturbationBudget budget{NormOrder::linf, 0.03};
  const Generator a = Generator::build({}, in, budget, 9);
  const Generator b = Generator::build({}, in, budget, 9);
  const Generator c = Generator::build({}, in, budget, 10);
  REQUIRE(a.params().items().size() == b.params().items().size());
  bool same = true, differ = false;
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    same = same && a.params().items()[i].value.val().data ==
                       b.params().items()[i].value.val().data;
    differ = differ || a.params().items()[i].value.val().data !=
                           c.params().items()[i].value.val().data;
  }
  CHECK(same);
  CHECK(differ);

  CHECK_THROWS_AS(Generator::build({}, InputShape{3, 7, 8}, budget, 1),
                  ConfigError);
  CHECK_THROWS_AS(Generator::build({}, InputShape{3, 8, 8},
                                   PerturbationBudget{NormOrder::linf, -1.0}, 1),
                  ConfigError);
  const Tensor wrong = random_images(2, {3, 16, 16}, 1);
  CHECK_THROWS_AS(a(ad::constant(wrong), false), ShapeError);
}

TEST_CASE("discriminator produces one finite raw score per sample") {
  const InputShape in{3, 8, 8};
  const Discriminator dis = Discriminator::build({}, in, 13);
  const Tensor x = random_images(6, in, 4);
  const ad::Value scores = dis(ad::constant(x), false);
  REQUIRE(scores.val().shape == std::vector<int>{6});
  CHECK(all_finite(scores.val()));

  const Discriminator same = Discriminator::build({}, in, 13);
  const ad::Value again = same(ad::constant(x), false);
  CHECK(scores.val().data == again.val().data);
}

// ---------------------------------------------------------------------------
// generate() before any training: the 0-epoch contract

TEST_CASE("untrained generator already satisfies every budget guarantee") {
  const AdnnModel model = tiny_skip_model();
  const PerturbationBudget budget{NormOrder::linf, 0.03};
  const Generator gen =
      Generator::build({}, model.spec().input_shape, budget, 17);
  const Tensor seeds = random_images(6, model.spec().input_shape, 100);

  const TestSuite suite = generate(gen, model, seeds, budget);
  REQUIRE(suite.entries.size() == 6);
  suite.validate(model.cost_profile());
  CHECK(suite.producer == Producer::deepperform);

  for (const SuiteEntry& e : suite.entries) {
    CHECK(budget_compliant(e.seed, e.generated, budget, 0.0));
    CHECK(e.gen_time_seconds > 0.0);
    CHECK(e.seed_cost == hard_cost(e.seed_trace, model.cost_profile()));
  }

  // Same generator, same seeds: identical payload (timing aside).
  const TestSuite again = generate(gen, model, seeds, budget);
  for (std::size_t i = 0; i < suite.entries.size(); ++i) {
    CHECK(suite.entries[i].generated.data == again.entries[i].generated.data);
    CHECK(suite.entries[i].seed_cost == again.entries[i].seed_cost);
    CHECK(suite.entries[i].generated_cost == again.entries[i].generated_cost);
    CHECK(suite.entries[i].generated_trace.activated ==
          again.entries[i].generated_trace.activated);
  }

  CHECK_THROWS_AS(generate(gen, model, Tensor({3, 8, 8}), budget), ShapeError);
}

// ---------------------------------------------------------------------------
// train_gan mechanics (effectiveness is covered by the slow toy test below)

TEST_CASE("train_gan: frozen target, loss decomposition and history shape") {
  const AdnnModel target = tiny_skip_model();
  std::vector<std::vector<double>> before;
  for (const auto& item : target.params().items())
    before.push_back(item.value.val().data);

  DatasetDescriptor dd;
  dd.num_classes = 2;
  dd.height = 8;
  dd.width = 8;
  dd.train_count = 64;
  dd.test_count = 16;
  dd.rng_seed = 3;
  const Dataset data = ingest_dataset(dd);

  GanTrainConfig cfg;
  cfg.budget = {NormOrder::linf, 0.03};
  cfg.max_epochs = 2;
  cfg.batch_size = 32;
  cfg.rng_seed = 8;
  const GanTrainResult res = train_gan(target, data, cfg);

  REQUIRE(res.history.size() == 2);
  CHECK(res.best_epoch >= 0);
  CHECK(res.best_epoch < 2);
  for (const GanEpochStats& s : res.history) {
    CHECK(std::isfinite(s.total));
    CHECK(s.seconds > 0.0);
    CHECK(s.total ==
          doctest::Approx(s.gan + cfg.alpha * s.adv + cfg.beta * s.per)
              .epsilon(1e-6));
    CHECK(s.val_objective > 0.0);
  }

  // The cost oracle must come through training untouched, still trainable.
  const auto& items = target.params().items();
  REQUIRE(items.size() == before.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    CHECK(items[i].value.val().data == before[i]);
  bool any_trainable = false;
  for (const auto& item : items)
    any_trainable = any_trainable || item.value.requires_grad();
  CHECK(any_trainable);

  // Deterministic end to end: a rerun yields bit-identical history.
  const GanTrainResult rerun = train_gan(target, data, cfg);
  REQUIRE(rerun.history.size() == res.history.size());
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    CHECK(rerun.history[i].gan == res.history[i].gan);
    CHECK(rerun.history[i].adv == res.history[i].adv);
    CHECK(rerun.history[i].per == res.history[i].per);
  }
}

TEST_CASE("train_gan rejects broken configurations") {
  const AdnnModel target = tiny_skip_model();
  DatasetDescriptor dd;
  dd.num_classes = 2;
  dd.height = 8;
  dd.width = 8;
  dd.train_count = 8;
  dd.test_count = 4;
  const Dataset data = ingest_dataset(dd);

  GanTrainConfig cfg;
  cfg.budget = {NormOrder::linf, 0.03};
  cfg.max_epochs = 1;

  SUBCASE("bad hyperparameters") {
    GanTrainConfig c = cfg;
    c.alpha = 0.0;
    CHECK_THROWS_AS(train_gan(target, data, c), ConfigError);
    c = cfg;
    c.max_epochs = 0;
    CHECK_THROWS_AS(train_gan(target, data, c), ConfigError);
    c = cfg;
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(train_gan(target, data, c), ConfigError);
    c = cfg;
    c.temperature = 0.0;
    CHECK_THROWS_AS(train_gan(target, data, c), ConfigError);
  }
  SUBCASE("mismatched dataset shape") {
    DatasetDescriptor wrong = dd;
    wrong.height = 16;
    wrong.width = 16;
    const Dataset bad = ingest_dataset(wrong);
    CHECK_THROWS_AS(train_gan(target, bad, cfg), ConfigError);
  }
  SUBCASE("empty splits") {
    Dataset empty = data;
    empty.train_x = Tensor();
    CHECK_THROWS_AS(train_gan(target, empty, cfg), ConfigError);
    Dataset noval = data;
    noval.test_x = Tensor();
    CHECK_THROWS_AS(train_gan(target, noval, cfg), ConfigError);
  }
}

TEST_CASE("trained generator raises the mean activated cost of held-out seeds") {
  DatasetDescriptor dd;
  dd.num_classes = 4;
  dd.height = 16;
  dd.width = 16;
  dd.train_count = 128;
  dd.test_count = 48;
  dd.rng_seed = 21;
  const Dataset data = ingest_dataset(dd);

  AdnnModel target = AdnnModel::build(
      make_reference_spec(Mechanism::conditional_skipping, 4, 4, 8, {3, 16, 16}),
      11);
  AdnnTrainConfig tc;
  tc.epochs = 2;
  tc.rng_seed = 6;
  tc.sparsity_weight = 0.3;
  train_adnn(target, data, tc);

  GanTrainConfig gc;
  gc.max_epochs = 12;
  gc.learning_rate = 1e-3;
  gc.rng_seed = 7;
  gc.budget = {NormOrder::linf, 0.03};
  const GanTrainResult res = train_gan(target, data, gc);

  const TestSuite suite = generate(res.generator, target, data.test_x, gc.budget);
  double seed_sum = 0.0, gen_sum = 0.0;
  int raised = 0;
  for (const auto& e : suite.entries) {
    seed_sum += e.seed_cost;
    gen_sum += e.generated_cost;
    if (e.generated_cost > e.seed_cost) ++raised;
  }
  // Frozen from a scan of this exact configuration: mean generated cost runs
  // 10.7% above the seeds with 10 of 48 samples strictly raised. The margins
  // below leave room for nothing but a genuine regression.
  CHECK(gen_sum > seed_sum * 1.05);
  CHECK(raised >= 8);
  CHECK_NOTHROW(suite.validate(target.cost_profile()));
}
