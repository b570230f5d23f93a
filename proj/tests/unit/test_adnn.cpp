#include <cmath>
#include <vector>

#include "adnnperf/adnn.hpp"
#include "adnnperf/dataset.hpp"
#include "adnnperf/errors.hpp"
#include "adnnperf/rng.hpp"
#include "doctest.h"

using namespace adnnperf;

namespace {

Tensor rand_input(int batch, Rng& rng, const InputShape& in = {}) {
  Tensor x(std::vector<int>{batch, in.channels, in.height, in.width});
  for (double& v : x.data) v = rng.uniform();
  return x;
}

Tensor slice_sample(const Tensor& x, int n) {
  std::vector<int> shp = x.shape;
  shp[0] = 1;
  Tensor out(std::move(shp));
  const std::size_t row = x.data.size() / x.dim(0);
  std::copy(x.data.begin() + n * row, x.data.begin() + (n + 1) * row,
            out.data.begin());
  return out;
}

// Pokes a registered tensor's entries to one value.
void fill_param(AdnnModel& m, const std::string& name, double v) {
  Tensor& t = m.params().find(name).val();
  for (double& e : t.data) e = v;
}

AdnnSpec small_skip_spec(int blocks = 3) {
  return make_reference_spec(Mechanism::conditional_skipping, blocks, 10, 8);
}

AdnnSpec small_exit_spec(int blocks = 3) {
  return make_reference_spec(Mechanism::early_termination, blocks, 10, 8);
}

}  // namespace

TEST_CASE("reference architecture cost profile: frozen hand counts") {
  // Stem conv 3->16, k3 s2 p1 on 32x32 -> 16x16: 2*9*3*16*16*16 = 221,184.
  // Gate 16->1: 32. Classifier 16->10: 320. Block conv 16->16 on 16x16:
  // 2*9*16*16*16*16 = 1,179,648. Exit head 16->10: 320.
  const AdnnModel skip = build_skip_model(
      make_reference_spec(Mechanism::conditional_skipping, 8, 10, 16), 1);
  CHECK(skip.cost_profile().stem_flops == 221184.0 + 8 * 32.0 + 320.0);
  CHECK(skip.cost_profile().block_weights[0] == 1179648.0);
  CHECK(skip.cost_profile().total == 9658944.0);

  const AdnnModel exitm = build_early_exit_model(
      make_reference_spec(Mechanism::early_termination, 8, 10, 16), 1);
  CHECK(exitm.cost_profile().stem_flops == 221184.0);
  CHECK(exitm.cost_profile().block_weights[0] == 1179648.0 + 320.0);
  CHECK(exitm.cost_profile().total == 221184.0 + 8 * 1179968.0);
}

TEST_CASE("spec validation rejects malformed block lists") {
  AdnnSpec ok = small_skip_spec();
  ok.validate();

  AdnnSpec gap = ok;
  gap.blocks[1].index = 2;
  CHECK_THROWS_AS(gap.validate(), ConfigError);

  AdnnSpec tau = ok;
  tau.blocks[0].threshold = 1.5;
  CHECK_THROWS_AS(tau.validate(), ConfigError);

  AdnnSpec wrong_flops = ok;
  wrong_flops.blocks[2].flops_weight += 1.0;
  CHECK_THROWS_AS(wrong_flops.validate(), ConfigError);

  AdnnSpec no_head = small_exit_spec();
  no_head.blocks[1].layer_shape.pop_back();
  no_head.blocks[1].flops_weight = block_flops(no_head.blocks[1].layer_shape);
  CHECK_THROWS_AS(no_head.validate(), ConfigError);

  // Builder entry points check the mechanism.
  CHECK_THROWS_AS(build_skip_model(small_exit_spec(), 1), ConfigError);
  CHECK_THROWS_AS(build_early_exit_model(small_skip_spec(), 1), ConfigError);
}

TEST_CASE("saturated gates activate every block, dead gates none") {
  AdnnModel m = build_skip_model(small_skip_spec(3), 7);
  Rng rng(3);
  const Tensor x = rand_input(2, rng);

  for (int i = 0; i < 3; ++i) fill_param(m, "block" + std::to_string(i) + ".gate.b", 50.0);
  HardForward hf = m.forward_hard(x);
  for (const BlockTrace& t : hf.traces) {
    CHECK(t.activated == std::vector<bool>{true, true, true});
    CHECK(t.activated_count() == 3);
  }

  for (int i = 0; i < 3; ++i) fill_param(m, "block" + std::to_string(i) + ".gate.b", -50.0);
  hf = m.forward_hard(x);
  for (const BlockTrace& t : hf.traces)
    CHECK(t.activated == std::vector<bool>{false, false, false});

  // With every block skipped the network reduces to classifier(pool(stem)):
  // recompute that directly from the registered weights.
  Tensor h = kern::conv2d(x, m.params().find("stem.w").val(),
                          &m.params().find("stem.b").val(), 2, 1);
  h = kern::batchnorm2d_infer(h, m.params().find("stem.bn.gamma").val(),
                              m.params().find("stem.bn.beta").val(),
                              m.params().find("stem.bn.running_mean").val(),
                              m.params().find("stem.bn.running_var").val(), 1e-5);
  for (double& v : h.data) v = v < 0.0 ? 0.0 : v;
  const Tensor expect = kern::dense(kern::global_avg_pool(h),
                                    m.params().find("classifier.w").val(),
                                    &m.params().find("classifier.b").val());
  for (std::size_t i = 0; i < expect.data.size(); ++i)
    CHECK(hf.logits.data[i] == expect.data[i]);
}

TEST_CASE("activation decisions replay from recorded gate scores") {
  AdnnModel m = build_skip_model(make_reference_spec(
      Mechanism::conditional_skipping, 8, 10, 8), 21);
  Rng rng(22);
  std::vector<double> taus(8);
  for (double& t : taus) t = rng.uniform();
  m = set_thresholds(m, taus);

  const HardForward hf = m.forward_hard(rand_input(16, rng));
  for (const BlockTrace& t : hf.traces) {
    for (int i = 0; i < 8; ++i) {
      CHECK(t.gate_scores[i] >= 0.0);
      CHECK(t.gate_scores[i] <= 1.0);
      CHECK(t.activated[i] == (t.gate_scores[i] > taus[i]));
    }
    CHECK(!t.exit_index.has_value());
  }
}

TEST_CASE("early termination: threshold extremes pin the exit block") {
  AdnnModel m = build_early_exit_model(small_exit_spec(4), 11);
  Rng rng(5);
  const Tensor x = rand_input(3, rng);

  AdnnModel never = set_thresholds(m, {1.0, 1.0, 1.0, 1.0});
  for (const BlockTrace& t : never.forward_hard(x).traces) {
    REQUIRE(t.exit_index.has_value());
    CHECK(*t.exit_index == 3);
    CHECK(t.activated_count() == 4);
  }

  AdnnModel instant = set_thresholds(m, {0.0, 1.0, 1.0, 1.0});
  for (const BlockTrace& t : instant.forward_hard(x).traces) {
    REQUIRE(t.exit_index.has_value());
    CHECK(*t.exit_index == 0);
    CHECK(t.activated_count() == 1);
    CHECK(t.activated[0]);
    // Scores past the exit are never computed and read as 0.
    CHECK(t.gate_scores[2] == 0.0);
  }
}

TEST_CASE("early termination: exits recompute from per-block head logits") {
  AdnnModel m = build_early_exit_model(small_exit_spec(4), 13);
  m = set_thresholds(m, {0.12, 0.12, 0.12, 0.12});  // near init confidence
  Rng rng(17);
  const Tensor x = rand_input(24, rng);
  const HardForward hf = m.forward_hard(x);
  const Tensor all = m.forward_all_exits(x);  // [B, N, K]

  for (int s = 0; s < 24; ++s) {
    int expect = 3;
    for (int i = 0; i < 4; ++i) {
      const double* z = &all.data[(static_cast<std::size_t>(s) * 4 + i) * 10];
      double mx = z[0], denom = 0.0;
      for (int c = 1; c < 10; ++c) mx = std::max(mx, z[c]);
      for (int c = 0; c < 10; ++c) denom += std::exp(z[c] - mx);
      if (1.0 / denom > 0.12) {
        expect = i;
        break;
      }
    }
    REQUIRE(hf.traces[s].exit_index.has_value());
    CHECK(*hf.traces[s].exit_index == expect);
    // Logits returned are the exit head's logits.
    const double* z = &all.data[(static_cast<std::size_t>(s) * 4 + expect) * 10];
    for (int c = 0; c < 10; ++c)
      CHECK(hf.logits.at2(s, c) == doctest::Approx(z[c]).epsilon(1e-10));
  }
}

TEST_CASE("traces are deterministic and match per-sample evaluation") {
  for (const AdnnSpec& spec : {small_skip_spec(4), small_exit_spec(4)}) {
    AdnnModel m = AdnnModel::build(spec, 31);
    Rng rng(32);
    const Tensor x = rand_input(6, rng);

    const HardForward a = m.forward_hard(x);
    const HardForward b = m.forward_hard(x);
    CHECK(a.logits.data == b.logits.data);  // bit-identical rerun
    for (int s = 0; s < 6; ++s) {
      CHECK(a.traces[s].gate_scores == b.traces[s].gate_scores);
      CHECK(a.traces[s].activated == b.traces[s].activated);
    }

    // Batched evaluation equals per-sample calls. Sub-batch compositions
    // differ, so logits are compared to tight tolerance rather than
    // bitwise; decisions and costs must agree exactly.
    for (int s = 0; s < 6; ++s) {
      const HardForward one = m.forward_hard(slice_sample(x, s));
      CHECK(one.traces[0].activated == a.traces[s].activated);
      CHECK(one.traces[0].exit_index == a.traces[s].exit_index);
      CHECK(one.flops[0] == a.flops[s]);
      for (int i = 0; i < spec.num_blocks(); ++i)
        CHECK(one.traces[0].gate_scores[i] ==
              doctest::Approx(a.traces[s].gate_scores[i]).epsilon(1e-12));
      for (int c = 0; c < spec.num_classes; ++c)
        CHECK(one.logits.at2(0, c) ==
              doctest::Approx(a.logits.at2(s, c)).epsilon(1e-10));
    }
  }
}

TEST_CASE("live flop counter equals the cost model on every trace") {
  Rng rng(41);
  for (const AdnnSpec& spec : {small_skip_spec(5), small_exit_spec(5)}) {
    AdnnModel m = AdnnModel::build(spec, 42);
    if (spec.mechanism == Mechanism::conditional_skipping)
      m = set_thresholds(m, {0.3, 0.45, 0.5, 0.55, 0.7});
    else
      m = set_thresholds(m, {0.11, 0.12, 0.13, 0.11, 0.5});
    const HardForward hf = m.forward_hard(rand_input(32, rng));
    for (int s = 0; s < 32; ++s)
      CHECK(hf.flops[s] == hard_cost(hf.traces[s], m.cost_profile()));
  }
}

TEST_CASE("ablating a skipped block cannot change the output") {
  AdnnModel m = build_skip_model(small_skip_spec(4), 51);
  Rng rng(52);
  const Tensor batch = rand_input(8, rng);
  const HardForward scan = m.forward_hard(batch);

  int victim = -1, dead_block = -1;
  for (int s = 0; s < 8 && victim < 0; ++s)
    for (int i = 0; i < 4 && victim < 0; ++i)
      if (!scan.traces[s].activated[i]) {
        victim = s;
        dead_block = i;
      }
  REQUIRE(victim >= 0);  // init gates sit near 0.5, both decisions occur

  const Tensor x = slice_sample(batch, victim);
  const HardForward before = m.forward_hard(x);
  REQUIRE(!before.traces[0].activated[dead_block]);
  fill_param(m, "block" + std::to_string(dead_block) + ".conv.w", 0.0);
  fill_param(m, "block" + std::to_string(dead_block) + ".conv.b", 0.0);
  const HardForward after = m.forward_hard(x);
  CHECK(after.logits.data == before.logits.data);  // bit-exact
  CHECK(after.traces[0].gate_scores == before.traces[0].gate_scores);
  CHECK(after.flops[0] == before.flops[0]);
}

TEST_CASE("ablating blocks past the exit cannot change the output") {
  AdnnModel m = build_early_exit_model(small_exit_spec(4), 61);
  // Force an exit at block 1 for every input.
  m = set_thresholds(m, {1.0, 0.0, 0.5, 0.5});
  Rng rng(62);
  const Tensor x = rand_input(1, rng);
  const HardForward before = m.forward_hard(x);
  REQUIRE(before.traces[0].exit_index == 1);

  for (int i = 2; i < 4; ++i) {
    fill_param(m, "block" + std::to_string(i) + ".conv.w", 0.0);
    fill_param(m, "block" + std::to_string(i) + ".exit.w", 7.0);
    fill_param(m, "block" + std::to_string(i) + ".exit.b", -3.0);
  }
  const HardForward after = m.forward_hard(x);
  CHECK(after.logits.data == before.logits.data);
  CHECK(after.traces[0].exit_index == before.traces[0].exit_index);
  CHECK(after.flops[0] == before.flops[0]);
}

TEST_CASE("set_thresholds: no-op keeps traces, lowering only adds activations") {
  AdnnModel m = build_skip_model(small_skip_spec(4), 71);
  Rng rng(72);
  const Tensor x = rand_input(100, rng);
  const HardForward base = m.forward_hard(x);

  AdnnModel same = set_thresholds(m, m.spec().thresholds());
  const HardForward noop = same.forward_hard(x);
  CHECK(noop.logits.data == base.logits.data);
  for (int s = 0; s < 100; ++s)
    CHECK(noop.traces[s].activated == base.traces[s].activated);

  std::vector<double> lower = m.spec().thresholds();
  for (double& t : lower) t -= 0.1;
  const HardForward more = set_thresholds(m, lower).forward_hard(x);
  for (int s = 0; s < 100; ++s) {
    CHECK(more.traces[s].activated_count() >= base.traces[s].activated_count());
    // Gate scores are a property of the weights alone.
    CHECK(more.traces[s].gate_scores == base.traces[s].gate_scores);
  }

  CHECK_THROWS_AS(set_thresholds(m, {0.5, 0.5}), ConfigError);
  CHECK_THROWS_AS(set_thresholds(m, {0.5, 0.5, 0.5, 1.0001}), ConfigError);
}

TEST_CASE("soft forward collapses onto the hard forward at low temperature") {
  // Gates pushed well away from tau: the logistic blend saturates to 0/1 and
  // the two independent forward implementations must coincide.
  AdnnModel m = build_skip_model(small_skip_spec(4), 81);
  fill_param(m, "block0.gate.b", 2.0);
  fill_param(m, "block1.gate.b", -2.0);
  fill_param(m, "block2.gate.b", 2.0);
  fill_param(m, "block3.gate.b", -2.0);
  Rng rng(82);
  const Tensor x = rand_input(5, rng);

  const HardForward hard = m.forward_hard(x);
  const SoftForward soft = m.forward_soft(ad::constant(x), 1e-3);
  for (int s = 0; s < 5; ++s) {
    for (int c = 0; c < 10; ++c)
      CHECK(soft.logits.val().at2(s, c) ==
            doctest::Approx(hard.logits.at2(s, c)).epsilon(1e-9));
    const double want =
        normalized_cost(hard_cost(hard.traces[s], m.cost_profile()), m.cost_profile());
    CHECK(soft.norm_soft_cost.val().data[s] == doctest::Approx(want).epsilon(1e-9));
    for (int i = 0; i < 4; ++i)
      CHECK(soft.gate_scores[i].val().data[s] ==
            doctest::Approx(hard.traces[s].gate_scores[i]).epsilon(1e-9));
  }
}

TEST_CASE("soft forward mirrors early exits through reach propensities") {
  AdnnModel m = build_early_exit_model(small_exit_spec(4), 91);
  // Head 2 made overwhelmingly confident in class 0; heads 0,1 stay near
  // uniform (confidence ~0.1-0.2, far below tau = 0.5).
  Tensor& b2 = m.params().find("block2.exit.b").val();
  b2.data[0] = 12.0;
  Rng rng(92);
  const Tensor x = rand_input(4, rng);

  const HardForward hard = m.forward_hard(x);
  const SoftForward soft = m.forward_soft(ad::constant(x), 1e-3);
  for (int s = 0; s < 4; ++s) {
    REQUIRE(hard.traces[s].exit_index == 2);
    const double want =
        normalized_cost(hard_cost(hard.traces[s], m.cost_profile()), m.cost_profile());
    CHECK(soft.norm_soft_cost.val().data[s] == doctest::Approx(want).epsilon(1e-9));
  }
  // Soft cost stays within the representable band regardless of temperature.
  const SoftForward warm = m.forward_soft(ad::constant(x), 0.5);
  for (int s = 0; s < 4; ++s) {
    CHECK(warm.norm_soft_cost.val().data[s] > 0.0);
    CHECK(warm.norm_soft_cost.val().data[s] <= 1.0);
  }
}

TEST_CASE("model construction is a pure function of spec and seed") {
  const AdnnModel a = build_skip_model(small_skip_spec(4), 123);
  const AdnnModel b = build_skip_model(small_skip_spec(4), 123);
  const AdnnModel c = build_skip_model(small_skip_spec(4), 124);
  REQUIRE(a.params().items().size() == b.params().items().size());
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    all_equal = all_equal && (a.params().items()[i].value.val().data ==
                              b.params().items()[i].value.val().data);
    any_differs = any_differs || (a.params().items()[i].value.val().data !=
                                  c.params().items()[i].value.val().data);
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("zero training epochs leaves the initialization untouched") {
  AdnnModel m = build_skip_model(small_skip_spec(3), 200);
  const AdnnModel fresh = build_skip_model(small_skip_spec(3), 200);
  DatasetDescriptor d;
  d.train_count = 32;
  d.test_count = 16;
  d.rng_seed = 3;
  const Dataset data = ingest_dataset(d);

  AdnnTrainConfig cfg;
  cfg.epochs = 0;
  const double acc = train_adnn(m, data, cfg);
  CHECK(acc >= 0.0);
  for (std::size_t i = 0; i < m.params().items().size(); ++i)
    CHECK(m.params().items()[i].value.val().data ==
          fresh.params().items()[i].value.val().data);
}

TEST_CASE("training is deterministic under a fixed seed") {
  DatasetDescriptor d;
  d.train_count = 64;
  d.test_count = 32;
  d.rng_seed = 9;
  const Dataset data = ingest_dataset(d);
  AdnnTrainConfig cfg;
  cfg.epochs = 1;
  cfg.rng_seed = 55;

  double acc[2];
  double checksum[2] = {0.0, 0.0};
  for (int run = 0; run < 2; ++run) {
    AdnnModel m = build_skip_model(small_skip_spec(3), 77);
    acc[run] = train_adnn(m, data, cfg);
    for (const auto& it : m.params().items())
      for (double v : it.value.val().data) checksum[run] += v;
  }
  CHECK(acc[0] == acc[1]);
  CHECK(checksum[0] == checksum[1]);
}

TEST_CASE("training rejects unusable datasets") {
  AdnnModel m = build_skip_model(small_skip_spec(3), 1);
  Dataset empty;
  empty.num_classes = 10;
  CHECK_THROWS_AS(train_adnn(m, empty, AdnnTrainConfig{}), ConfigError);

  DatasetDescriptor d;
  d.num_classes = 3;  // model expects 10
  d.train_count = 8;
  d.test_count = 8;
  CHECK_THROWS_AS(train_adnn(m, ingest_dataset(d), AdnnTrainConfig{}), ConfigError);
}

TEST_CASE("toy training: accurate yet computation-sparse"
          * doctest::timeout(600)) {
  // Two easily separable texture classes; the sparsity regularizer must
  // carve out skipped blocks while accuracy stays high.
  DatasetDescriptor d;
  d.num_classes = 2;
  d.train_count = 512;
  d.test_count = 128;
  d.rng_seed = 31;
  const Dataset data = ingest_dataset(d);

  AdnnModel m = build_skip_model(
      make_reference_spec(Mechanism::conditional_skipping, 8, 2, 8), 5);
  AdnnTrainConfig cfg;
  cfg.epochs = 12;
  cfg.rng_seed = 6;
  const double acc = train_adnn(m, data, cfg);
  const double frac = mean_activated_fraction(m, data.test_x);
  INFO("accuracy ", acc, " activated fraction ", frac);
  CHECK(acc > 0.9);
  CHECK(frac < 0.8);
}
