#include <cmath>
#include <functional>
#include <vector>

#include "adnnperf/autodiff.hpp"
#include "adnnperf/layers.hpp"
#include "adnnperf/rng.hpp"
#include "doctest.h"

using namespace adnnperf;

namespace {

Tensor randt(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero, for ops with a kink at the origin.
Tensor randt_awayzero(std::vector<int> shape, Rng& rng, double margin = 0.05) {
  Tensor t(std::move(shape));
  for (double& v : t.data) {
    const double u = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -u : u;
  }
  return t;
}

using GraphFn = std::function<ad::Value(std::vector<ad::Value>&)>;

double eval_scalar(const std::vector<Tensor>& inputs, const GraphFn& fn) {
  std::vector<ad::Value> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(ad::leaf(t, false));
  return fn(leaves).val().data[0];
}

// Central-difference check of every analytic gradient produced by backward().
// Samples at most max_coords evenly spaced coordinates per input.
void check_gradients(std::vector<Tensor> inputs, const GraphFn& fn,
                     double h = 1e-5, double tol = 1e-6, int max_coords = 48) {
  std::vector<ad::Value> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(ad::leaf(t, true));
  ad::Value loss = fn(leaves);
  ad::backward(loss);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& analytic = leaves[i].grad();
    const std::size_t n = inputs[i].data.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_coords);
    for (std::size_t j = 0; j < n; j += stride) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[i].data[j] += h;
      minus[i].data[j] -= h;
      const double fd = (eval_scalar(plus, fn) - eval_scalar(minus, fn)) / (2.0 * h);
      const double a = analytic.data[j];
      const double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      INFO("input ", i, " coord ", j, " analytic ", a, " fd ", fd);
      CHECK(err < tol);
    }
  }
}

// Direct six-loop convolution, the independent oracle for the GEMM path.
Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor* b,
                    int stride, int pad) {
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), k = w.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor y(std::vector<int>{N, Cout, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Cout; ++co)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          double acc = b ? b->data[co] : 0.0;
          for (int ci = 0; ci < Cin; ++ci)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int hh = ho * stride - pad + ki, ww = wo * stride - pad + kj;
                if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                acc += x.at4(n, ci, hh, ww) * w.at4(co, ci, ki, kj);
              }
          y.at4(n, co, ho, wo) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches a direct six-loop convolution") {
  Rng rng(11);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
    Tensor x = randt({2, 3, 6, 6}, rng);
    Tensor w = randt({4, 3, 3, 3}, rng);
    Tensor b = randt({4}, rng);
    Tensor got = kern::conv2d(x, w, &b, stride, pad);
    Tensor want = conv2d_naive(x, w, &b, stride, pad);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.data.size(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv_transpose2d is adjoint to conv2d") {
  // <conv(x), y> must equal <x, conv_transpose(y)> when both use the same
  // weight and geometry; this pins the scatter indexing without a second
  // hand-written kernel.
  Rng rng(12);
  Tensor x = randt({2, 3, 8, 8}, rng);
  Tensor w = randt({5, 3, 3, 3}, rng);  // conv view: [Cout=5, Cin=3, 3, 3]
  const int stride = 2, pad = 1;
  Tensor cx = kern::conv2d(x, w, nullptr, stride, pad);  // [2,5,4,4]
  Tensor y = randt(cx.shape, rng);
  // transpose-conv weight view: [Cin=5, Cout=3, 3, 3] is the same buffer
  Tensor wt = w;
  wt.shape = {5, 3, 3, 3};
  Tensor ty = kern::conv_transpose2d(y, wt, nullptr, stride, pad, /*out_pad=*/1);
  REQUIRE(ty.shape == x.shape);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cx.data.size(); ++i) lhs += cx.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * ty.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(13);
  std::vector<Tensor> inputs{randt({2, 3, 5, 5}, rng), randt({4, 3, 3, 3}, rng),
                             randt({4}, rng)};
  Tensor weights = randt({2, 4, 3, 3}, rng);
  check_gradients(inputs, [&](std::vector<ad::Value>& v) {
    ad::Value y = ad::conv2d(v[0], v[1], v[2], 2, 1);
    return ad::sum_all(ad::mul(y, ad::constant(weights)));
  });
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
  Rng rng(14);
  std::vector<Tensor> inputs{randt({2, 4, 4, 4}, rng), randt({4, 3, 3, 3}, rng),
                             randt({3}, rng)};
  Tensor weights = randt({2, 3, 8, 8}, rng);
  check_gradients(inputs, [&](std::vector<ad::Value>& v) {
    ad::Value y = ad::conv_transpose2d(v[0], v[1], v[2], 2, 1, 1);
    return ad::sum_all(ad::mul(y, ad::constant(weights)));
  });
}

TEST_CASE("dense gradients match finite differences") {
  Rng rng(15);
  std::vector<Tensor> inputs{randt({4, 7}, rng), randt({7, 3}, rng), randt({3}, rng)};
  Tensor weights = randt({4, 3}, rng);
  check_gradients(inputs, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::dense(v[0], v[1], v[2]), ad::constant(weights)));
  });
}

TEST_CASE("batchnorm training-mode gradients match finite differences") {
  Rng rng(16);
  std::vector<Tensor> inputs{randt({3, 2, 4, 4}, rng),
                             randt({2}, rng, 0.5, 1.5), randt({2}, rng)};
  Tensor weights = randt({3, 2, 4, 4}, rng);
  check_gradients(
      inputs,
      [&](std::vector<ad::Value>& v) {
        ad::Value y = ad::batchnorm2d_train(v[0], v[1], v[2], 1e-5, nullptr);
        return ad::sum_all(ad::mul(y, ad::constant(weights)));
      },
      1e-5, 1e-5);
}

TEST_CASE("batchnorm training mode normalizes per channel") {
  Rng rng(17);
  Tensor x = randt({4, 3, 5, 5}, rng, -3.0, 7.0);
  Tensor gamma = Tensor::full({3}, 1.0), beta = Tensor(std::vector<int>{3});
  kern::BnStats saved;
  Tensor y = kern::batchnorm2d_train(x, gamma, beta, 1e-8, saved);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    const int M = 4 * 5 * 5;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) mean += y.at4(n, c, i / 5, i % 5);
    mean /= M;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double d = y.at4(n, c, i / 5, i % 5) - mean;
        var += d * d;
      }
    var /= M;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("batchnorm inference-mode gradients match finite differences") {
  Rng rng(18);
  Tensor rmean = randt({2}, rng), rvar = randt({2}, rng, 0.5, 2.0);
  std::vector<Tensor> inputs{randt({2, 2, 3, 3}, rng),
                             randt({2}, rng, 0.5, 1.5), randt({2}, rng)};
  Tensor weights = randt({2, 2, 3, 3}, rng);
  check_gradients(inputs, [&](std::vector<ad::Value>& v) {
    ad::Value y = ad::batchnorm2d_infer(v[0], v[1], v[2], rmean, rvar, 1e-5);
    return ad::sum_all(ad::mul(y, ad::constant(weights)));
  });
}

TEST_CASE("pooling, reshape and row reductions match finite differences") {
  Rng rng(19);
  Tensor w1 = randt({3, 4}, rng);
  check_gradients({randt({3, 4, 5, 5}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::global_avg_pool(v[0]), ad::constant(w1)));
  });

  Tensor w2 = randt({2, 24}, rng);
  check_gradients({randt({2, 4, 3, 2}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::reshape(v[0], {2, 24}), ad::constant(w2)));
  });

  Tensor w3 = randt({5}, rng);
  check_gradients({randt({5, 6}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::row_max(v[0]), ad::constant(w3)));
  });
  check_gradients({randt_awayzero({5, 12}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::l2norm_rows(v[0]), ad::constant(w3)));
  });
  check_gradients({randt_awayzero({5, 12}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::maxabs_rows(v[0]), ad::constant(w3)));
  });
}

TEST_CASE("softmax and cross-entropy gradients match finite differences") {
  Rng rng(20);
  Tensor w = randt({4, 6}, rng);
  check_gradients({randt({4, 6}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul(ad::softmax_rows(v[0]), ad::constant(w)));
  });
  const std::vector<int> labels{1, 3, 0, 5};
  check_gradients({randt({4, 6}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::cross_entropy_mean(v[0], labels);
  });
}

TEST_CASE("elementwise activations match finite differences") {
  Rng rng(21);
  auto weighted = [&rng](ad::Value y) {
    // capture-free random weights would repeat; one fresh tensor per call
    return ad::mean_all(y);
  };
  check_gradients({randt_awayzero({3, 7}, rng)}, [&](std::vector<ad::Value>& v) {
    return weighted(ad::relu(v[0]));
  });
  check_gradients({randt_awayzero({3, 7}, rng)}, [&](std::vector<ad::Value>& v) {
    return weighted(ad::leaky_relu(v[0], 0.2));
  });
  check_gradients({randt({3, 7}, rng, -4.0, 4.0)}, [&](std::vector<ad::Value>& v) {
    return weighted(ad::sigmoid(v[0]));
  });
  check_gradients({randt({3, 7}, rng, -2.0, 2.0)}, [&](std::vector<ad::Value>& v) {
    return weighted(ad::tanh_act(v[0]));
  });
  check_gradients({randt({3, 7}, rng, -30.0, 30.0)}, [&](std::vector<ad::Value>& v) {
    return weighted(ad::softplus(v[0]));
  });
  check_gradients({randt({3, 7}, rng, 0.06, 0.94)}, [&](std::vector<ad::Value>& v) {
    return weighted(ad::clamp01(v[0]));
  });
}

TEST_CASE("binary ops, scalars and row scaling match finite differences") {
  Rng rng(22);
  Tensor w = randt({4, 5}, rng);
  check_gradients({randt({4, 5}, rng), randt({4, 5}, rng)},
                  [&](std::vector<ad::Value>& v) {
                    ad::Value y = ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1]));
                    return ad::sum_all(ad::mul(y, ad::constant(w)));
                  });
  check_gradients({randt({4, 5}, rng)}, [&](std::vector<ad::Value>& v) {
    return ad::sum_all(ad::mul_scalar(ad::add_scalar(v[0], 0.7), -1.3));
  });
  Tensor w4 = randt({3, 2, 2, 2}, rng);
  check_gradients({randt({3, 2, 2, 2}, rng), randt({3}, rng)},
                  [&](std::vector<ad::Value>& v) {
                    return ad::sum_all(
                        ad::mul(ad::mul_rowscalar(v[0], v[1]), ad::constant(w4)));
                  });
}

TEST_CASE("fan-in through a shared node accumulates correctly") {
  Rng rng(23);
  check_gradients({randt({3, 3}, rng)}, [&](std::vector<ad::Value>& v) {
    ad::Value s = ad::sigmoid(v[0]);
    ad::Value a = ad::mul(s, s);       // s used twice
    ad::Value b = ad::add(s, a);       // and again
    return ad::mean_all(b);
  });
}

TEST_CASE("backward rejects non-scalar roots and zeroes stale gradients") {
  Rng rng(24);
  ad::Value x = ad::param(randt({2, 2}, rng));
  CHECK_THROWS_AS(ad::backward(ad::mul_scalar(x, 2.0)), ShapeError);

  // Two consecutive backwards through the same param must not accumulate.
  ad::Value l1 = ad::sum_all(x);
  ad::backward(l1);
  const double g1 = x.grad().data[0];
  ad::Value l2 = ad::sum_all(x);
  ad::backward(l2);
  CHECK(x.grad().data[0] == doctest::Approx(g1));
}

TEST_CASE("parameter initialization is deterministic under a fixed seed") {
  Rng a(99), b(99);
  Tensor wa = init_conv_weight(8, 3, 3, a);
  Tensor wb = init_conv_weight(8, 3, 3, b);
  REQUIRE(wa.data.size() == wb.data.size());
  for (std::size_t i = 0; i < wa.data.size(); ++i) CHECK(wa.data[i] == wb.data[i]);

  Rng c(1), d(1);
  Rng c1 = c.split(5), d1 = d.split(5), d2 = d.split(6);
  CHECK(c1.uniform() == d1.uniform());
  CHECK(c1.uniform() != d2.uniform());
}
