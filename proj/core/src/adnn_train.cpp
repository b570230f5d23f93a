#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "adnnperf/adnn.hpp"
#include "adnnperf/errors.hpp"
#include "adnnperf/optim.hpp"
#include "adnnperf/rng.hpp"

namespace adnnperf {

namespace {

Tensor gather_batch(const Tensor& x, const std::vector<int>& order, int begin,
                    int count) {
  std::vector<int> shp = x.shape;
  shp[0] = count;
  Tensor out(std::move(shp));
  const std::size_t row = x.data.size() / x.dim(0);
  for (int j = 0; j < count; ++j) {
    const int src = order[begin + j];
    std::copy(x.data.begin() + src * row, x.data.begin() + (src + 1) * row,
              out.data.begin() + static_cast<std::size_t>(j) * row);
  }
  return out;
}

int argmax_row(const Tensor& logits, int row) {
  const int k = logits.dim(1);
  int best = 0;
  for (int c = 1; c < k; ++c)
    if (logits.at2(row, c) > logits.at2(row, best)) best = c;
  return best;
}

}  // namespace

double evaluate_accuracy(const AdnnModel& model, const Tensor& x,
                         const std::vector<int>& y, int batch_size) {
  const int total = x.dim(0);
  if (total == 0 || y.size() != static_cast<std::size_t>(total))
    throw ConfigError("evaluate_accuracy: empty split or label count mismatch");
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  int hits = 0;
  for (int at = 0; at < total; at += batch_size) {
    const int bs = std::min(batch_size, total - at);
    const HardForward hf = model.forward_hard(gather_batch(x, idx, at, bs));
    for (int j = 0; j < bs; ++j)
      if (argmax_row(hf.logits, j) == y[at + j]) ++hits;
  }
  return static_cast<double>(hits) / total;
}

double mean_activated_fraction(const AdnnModel& model, const Tensor& x,
                               int batch_size) {
  const int total = x.dim(0);
  if (total == 0) throw ConfigError("mean_activated_fraction: empty input");
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  const double n = model.spec().num_blocks();
  double sum = 0.0;
  for (int at = 0; at < total; at += batch_size) {
    const int bs = std::min(batch_size, total - at);
    const HardForward hf = model.forward_hard(gather_batch(x, idx, at, bs));
    for (const BlockTrace& t : hf.traces) sum += t.activated_count() / n;
  }
  return sum / total;
}

double train_adnn(AdnnModel& model, const Dataset& data, const AdnnTrainConfig& cfg) {
  const int ntr = data.train_x.ndim() > 0 ? data.train_x.dim(0) : 0;
  if (ntr == 0) throw ConfigError("train_adnn: empty training split");
  if (data.train_y.size() != static_cast<std::size_t>(ntr))
    throw ConfigError("train_adnn: training labels do not match sample count");
  if (data.num_classes != model.spec().num_classes)
    throw ConfigError("train_adnn: dataset has " + std::to_string(data.num_classes) +
                      " classes, model expects " +
                      std::to_string(model.spec().num_classes));
  if (cfg.epochs < 0 || cfg.batch_size < 1)
    throw ConfigError("train_adnn: epochs must be >= 0, batch_size >= 1");

  const int n = model.spec().num_blocks();
  Adam opt(cfg.lr);
  const std::vector<ad::Value> trainables = model.params().trainables();
  Rng order_rng = Rng(cfg.rng_seed).split(1);
  std::vector<int> order(ntr);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (int at = 0; at < ntr; at += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, ntr - at);
      Tensor xb = gather_batch(data.train_x, order, at, bs);
      std::vector<int> yb(bs);
      for (int j = 0; j < bs; ++j) yb[j] = data.train_y[order[at + j]];

      const SoftForward sf = model.forward_soft(ad::constant(std::move(xb)),
                                                cfg.temperature, /*training=*/true);
      ad::Value task;
      if (model.spec().mechanism == Mechanism::conditional_skipping) {
        task = ad::cross_entropy_mean(sf.logits, yb);
      } else {
        // Every head learns to classify (deep supervision), otherwise early
        // heads would never become confident enough to exit.
        for (const ad::Value& z : sf.all_logits) {
          ad::Value ce = ad::cross_entropy_mean(z, yb);
          task = task.defined() ? ad::add(task, ce) : ce;
        }
        task = ad::mul_scalar(task, 1.0 / n);
      }
      ad::Value loss = ad::add(
          task, ad::mul_scalar(ad::mean_all(sf.norm_soft_cost), cfg.sparsity_weight));
      if (!std::isfinite(loss.val().data[0]))
        throw NumericError("train_adnn: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch offset " +
                           std::to_string(at));
      ad::backward(loss);
      opt.step(trainables);
    }
  }
  return evaluate_accuracy(model, data.test_x, data.test_y, cfg.batch_size);
}

}  // namespace adnnperf
