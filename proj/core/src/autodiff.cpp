#include "adnnperf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace adnnperf::ad {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const NodePtr& p : n->parents) {
    if (p && p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

// Shorthand used by every op lambda: gradient buffer of a parent if it wants
// one, else nullptr so the kernel skips that computation.
Tensor* gbuf(const NodePtr& p) {
  return (p && p->requires_grad) ? &p->grad : nullptr;
}

void check_defined(const Value& v, const char* where) {
  if (!v.defined()) throw ShapeError(std::string(where) + ": undefined operand");
}

Value unary_elementwise(const Value& a, const char* name,
                        double (*fwd)(double),
                        double (*dfdx)(double /*x*/, double /*y*/)) {
  check_defined(a, name);
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = fwd(a.val().data[i]);
  NodePtr an = a.node();
  return Value(make_node(std::move(y), {an}, [an, dfdx](Node& self) {
    Tensor* ga = gbuf(an);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
      ga->data[i] += self.grad.data[i] * dfdx(an->value.data[i], self.value.data[i]);
    }
  }));
}

}  // namespace

Value leaf(Tensor t, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = requires_grad;
  return Value(n);
}

Value constant(Tensor t) { return leaf(std::move(t), false); }
Value param(Tensor t) { return leaf(std::move(t), true); }

void backward(const Value& root) {
  check_defined(root, "backward");
  if (root.val().numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(root.val().shape));
  }
  // Iterative DFS producing reverse topological order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.raw(), 0);
  visited.insert(root.raw());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : topo) n->grad = Tensor(n->value.shape);  // zeroed
  root.raw()->grad.data[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
}

Value add(const Value& a, const Value& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  require_same_shape(a.val(), b.val(), "add");
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    y.data[i] = a.val().data[i] + b.val().data[i];
  NodePtr an = a.node(), bn = b.node();
  return Value(make_node(std::move(y), {an, bn}, [an, bn](Node& self) {
    if (Tensor* ga = gbuf(an))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) ga->data[i] += self.grad.data[i];
    if (Tensor* gb = gbuf(bn))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) gb->data[i] += self.grad.data[i];
  }));
}

Value sub(const Value& a, const Value& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  require_same_shape(a.val(), b.val(), "sub");
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    y.data[i] = a.val().data[i] - b.val().data[i];
  NodePtr an = a.node(), bn = b.node();
  return Value(make_node(std::move(y), {an, bn}, [an, bn](Node& self) {
    if (Tensor* ga = gbuf(an))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) ga->data[i] += self.grad.data[i];
    if (Tensor* gb = gbuf(bn))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) gb->data[i] -= self.grad.data[i];
  }));
}

Value mul(const Value& a, const Value& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  require_same_shape(a.val(), b.val(), "mul");
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    y.data[i] = a.val().data[i] * b.val().data[i];
  NodePtr an = a.node(), bn = b.node();
  return Value(make_node(std::move(y), {an, bn}, [an, bn](Node& self) {
    if (Tensor* ga = gbuf(an))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        ga->data[i] += self.grad.data[i] * bn->value.data[i];
    if (Tensor* gb = gbuf(bn))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        gb->data[i] += self.grad.data[i] * an->value.data[i];
  }));
}

Value add_scalar(const Value& a, double c) {
  check_defined(a, "add_scalar");
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.val().data[i] + c;
  NodePtr an = a.node();
  return Value(make_node(std::move(y), {an}, [an](Node& self) {
    if (Tensor* ga = gbuf(an))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) ga->data[i] += self.grad.data[i];
  }));
}

Value mul_scalar(const Value& a, double c) {
  check_defined(a, "mul_scalar");
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.val().data[i] * c;
  NodePtr an = a.node();
  return Value(make_node(std::move(y), {an}, [an, c](Node& self) {
    if (Tensor* ga = gbuf(an))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        ga->data[i] += self.grad.data[i] * c;
  }));
}

Value relu(const Value& a) {
  return unary_elementwise(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value leaky_relu(const Value& a, double slope) {
  check_defined(a, "leaky_relu");
  Tensor y(a.val().shape);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    const double x = a.val().data[i];
    y.data[i] = x > 0.0 ? x : slope * x;
  }
  NodePtr an = a.node();
  return Value(make_node(std::move(y), {an}, [an, slope](Node& self) {
    if (Tensor* ga = gbuf(an))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        ga->data[i] += self.grad.data[i] * (an->value.data[i] > 0.0 ? 1.0 : slope);
  }));
}

Value sigmoid(const Value& a) {
  return unary_elementwise(
      a, "sigmoid",
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Value tanh_act(const Value& a) {
  return unary_elementwise(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Value softplus(const Value& a) {
  return unary_elementwise(
      a, "softplus",
      [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      });
}

Value clamp01(const Value& a) {
  return unary_elementwise(
      a, "clamp01",
      [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
      [](double x, double) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; });
}

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
  check_defined(x, "conv2d");
  check_defined(w, "conv2d");
  Tensor y = kern::conv2d(x.val(), w.val(), b.defined() ? &b.val() : nullptr,
                          stride, pad);
  NodePtr xn = x.node(), wn = w.node(), bn = b.node();
  std::vector<NodePtr> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return Value(make_node(std::move(y), std::move(parents),
                         [xn, wn, bn, stride, pad](Node& self) {
                           kern::conv2d_backward(xn->value, wn->value, stride, pad,
                                                 self.grad, gbuf(xn), gbuf(wn),
                                                 bn ? gbuf(bn) : nullptr);
                         }));
}

Value conv_transpose2d(const Value& x, const Value& w, const Value& b,
                       int stride, int pad, int out_pad) {
  check_defined(x, "conv_transpose2d");
  check_defined(w, "conv_transpose2d");
  Tensor y = kern::conv_transpose2d(x.val(), w.val(),
                                    b.defined() ? &b.val() : nullptr, stride,
                                    pad, out_pad);
  NodePtr xn = x.node(), wn = w.node(), bn = b.node();
  std::vector<NodePtr> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return Value(make_node(std::move(y), std::move(parents),
                         [xn, wn, bn, stride, pad, out_pad](Node& self) {
                           kern::conv_transpose2d_backward(
                               xn->value, wn->value, stride, pad, out_pad,
                               self.grad, gbuf(xn), gbuf(wn),
                               bn ? gbuf(bn) : nullptr);
                         }));
}

Value dense(const Value& x, const Value& w, const Value& b) {
  check_defined(x, "dense");
  check_defined(w, "dense");
  Tensor y = kern::dense(x.val(), w.val(), b.defined() ? &b.val() : nullptr);
  NodePtr xn = x.node(), wn = w.node(), bn = b.node();
  std::vector<NodePtr> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return Value(make_node(std::move(y), std::move(parents), [xn, wn, bn](Node& self) {
    kern::dense_backward(xn->value, wn->value, self.grad, gbuf(xn), gbuf(wn),
                         bn ? gbuf(bn) : nullptr);
  }));
}

Value batchnorm2d_train(const Value& x, const Value& gamma, const Value& beta,
                        double eps, kern::BnStats* saved_out) {
  check_defined(x, "batchnorm2d_train");
  auto saved = std::make_shared<kern::BnStats>();
  Tensor y = kern::batchnorm2d_train(x.val(), gamma.val(), beta.val(), eps, *saved);
  if (saved_out) *saved_out = *saved;
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return Value(make_node(std::move(y), {xn, gn, bn}, [xn, gn, bn, saved](Node& self) {
    kern::batchnorm2d_train_backward(xn->value, gn->value, *saved, self.grad,
                                     gbuf(xn), gbuf(gn), gbuf(bn));
  }));
}

Value batchnorm2d_infer(const Value& x, const Value& gamma, const Value& beta,
                        const Tensor& rmean, const Tensor& rvar, double eps) {
  check_defined(x, "batchnorm2d_infer");
  Tensor y = kern::batchnorm2d_infer(x.val(), gamma.val(), beta.val(), rmean, rvar, eps);
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  auto rm = std::make_shared<Tensor>(rmean);
  auto rv = std::make_shared<Tensor>(rvar);
  return Value(make_node(std::move(y), {xn, gn, bn},
                         [xn, gn, bn, rm, rv, eps](Node& self) {
                           kern::batchnorm2d_infer_backward(
                               xn->value, gn->value, *rm, *rv, eps, self.grad,
                               gbuf(xn), gbuf(gn), gbuf(bn));
                         }));
}

Value global_avg_pool(const Value& x) {
  check_defined(x, "global_avg_pool");
  Tensor y = kern::global_avg_pool(x.val());
  NodePtr xn = x.node();
  return Value(make_node(std::move(y), {xn}, [xn](Node& self) {
    kern::global_avg_pool_backward(xn->value.shape, self.grad, gbuf(xn));
  }));
}

Value reshape(const Value& x, std::vector<int> new_shape) {
  check_defined(x, "reshape");
  if (shape_numel(new_shape) != x.val().numel()) {
    throw ShapeError("reshape: element count mismatch " + shape_str(x.val().shape) +
                     " -> " + shape_str(new_shape));
  }
  Tensor y(new_shape);
  y.data = x.val().data;
  NodePtr xn = x.node();
  return Value(make_node(std::move(y), {xn}, [xn](Node& self) {
    if (Tensor* ga = gbuf(xn))
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        ga->data[i] += self.grad.data[i];
  }));
}

Value softmax_rows(const Value& x) {
  check_defined(x, "softmax_rows");
  if (x.val().ndim() != 2) throw ShapeError("softmax_rows: expected [N,K]");
  const int N = x.val().dim(0), K = x.val().dim(1);
  Tensor y(x.val().shape);
  for (int n = 0; n < N; ++n) {
    const double* row = &x.val().data[static_cast<std::size_t>(n) * K];
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
    for (int k = 0; k < K; ++k)
      y.data[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - m) / z;
  }
  NodePtr xn = x.node();
  return Value(make_node(std::move(y), {xn}, [xn, N, K](Node& self) {
    Tensor* ga = gbuf(xn);
    if (!ga) return;
    for (int n = 0; n < N; ++n) {
      const double* p = &self.value.data[static_cast<std::size_t>(n) * K];
      const double* g = &self.grad.data[static_cast<std::size_t>(n) * K];
      double dot = 0.0;
      for (int k = 0; k < K; ++k) dot += g[k] * p[k];
      double* out = &ga->data[static_cast<std::size_t>(n) * K];
      for (int k = 0; k < K; ++k) out[k] += p[k] * (g[k] - dot);
    }
  }));
}

Value row_max(const Value& x) {
  check_defined(x, "row_max");
  if (x.val().ndim() != 2) throw ShapeError("row_max: expected [N,K]");
  const int N = x.val().dim(0), K = x.val().dim(1);
  Tensor y(std::vector<int>{N});
  auto argmax = std::make_shared<std::vector<int>>(N);
  for (int n = 0; n < N; ++n) {
    const double* row = &x.val().data[static_cast<std::size_t>(n) * K];
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    (*argmax)[n] = best;
    y.data[n] = row[best];
  }
  NodePtr xn = x.node();
  return Value(make_node(std::move(y), {xn}, [xn, argmax, K](Node& self) {
    if (Tensor* ga = gbuf(xn)) {
      for (std::size_t n = 0; n < self.grad.data.size(); ++n)
        ga->data[n * K + (*argmax)[n]] += self.grad.data[n];
    }
  }));
}

Value cross_entropy_mean(const Value& logits, const std::vector<int>& labels) {
  check_defined(logits, "cross_entropy_mean");
  if (logits.val().ndim() != 2) throw ShapeError("cross_entropy_mean: expected [N,K]");
  const int N = logits.val().dim(0), K = logits.val().dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("cross_entropy_mean: label count mismatch");
  auto probs = std::make_shared<Tensor>(logits.val().shape);
  auto lbl = std::make_shared<std::vector<int>>(labels);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* row = &logits.val().data[static_cast<std::size_t>(n) * K];
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
    const double lse = m + std::log(z);
    for (int k = 0; k < K; ++k)
      probs->data[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - lse);
    total += lse - row[labels[n]];
  }
  NodePtr xn = logits.node();
  return Value(make_node(Tensor::scalar(total / N), {xn},
                         [xn, probs, lbl, N, K](Node& self) {
                           Tensor* ga = gbuf(xn);
                           if (!ga) return;
                           const double g = self.grad.data[0] / N;
                           for (int n = 0; n < N; ++n) {
                             double* out = &ga->data[static_cast<std::size_t>(n) * K];
                             const double* p = &probs->data[static_cast<std::size_t>(n) * K];
                             for (int k = 0; k < K; ++k) {
                               out[k] += g * (p[k] - (k == (*lbl)[n] ? 1.0 : 0.0));
                             }
                           }
                         }));
}

namespace {
// Rows are samples: flatten everything after the leading dim.
std::pair<int, int> row_geometry(const Tensor& t, const char* where) {
  if (t.ndim() < 1) throw ShapeError(std::string(where) + ": rank-0 input");
  const int N = t.dim(0);
  const int D = static_cast<int>(t.numel() / N);
  return {N, D};
}
}  // namespace

Value l2norm_rows(const Value& x) {
  check_defined(x, "l2norm_rows");
  auto [N, D] = row_geometry(x.val(), "l2norm_rows");
  Tensor y(std::vector<int>{N});
  for (int n = 0; n < N; ++n) {
    const double* row = &x.val().data[static_cast<std::size_t>(n) * D];
    double s = 0.0;
    for (int i = 0; i < D; ++i) s += row[i] * row[i];
    y.data[n] = std::sqrt(s);
  }
  NodePtr xn = x.node();
  return Value(make_node(std::move(y), {xn}, [xn, N = N, D = D](Node& self) {
    Tensor* ga = gbuf(xn);
    if (!ga) return;
    for (int n = 0; n < N; ++n) {
      const double r = self.value.data[n];
      if (r <= 0.0) continue;  // subgradient 0 at the origin
      const double g = self.grad.data[n] / r;
      const double* row = &xn->value.data[static_cast<std::size_t>(n) * D];
      double* out = &ga->data[static_cast<std::size_t>(n) * D];
      for (int i = 0; i < D; ++i) out[i] += g * row[i];
    }
  }));
}

Value maxabs_rows(const Value& x) {
  check_defined(x, "maxabs_rows");
  auto [N, D] = row_geometry(x.val(), "maxabs_rows");
  Tensor y(std::vector<int>{N});
  auto argmax = std::make_shared<std::vector<int>>(N);
  for (int n = 0; n < N; ++n) {
    const double* row = &x.val().data[static_cast<std::size_t>(n) * D];
    int best = 0;
    for (int i = 1; i < D; ++i)
      if (std::abs(row[i]) > std::abs(row[best])) best = i;
    (*argmax)[n] = best;
    y.data[n] = std::abs(row[best]);
  }
  NodePtr xn = x.node();
  return Value(make_node(std::move(y), {xn}, [xn, argmax, D = D](Node& self) {
    Tensor* ga = gbuf(xn);
    if (!ga) return;
    for (std::size_t n = 0; n < self.grad.data.size(); ++n) {
      const int i = (*argmax)[n];
      const double v = xn->value.data[n * D + i];
      ga->data[n * D + i] += self.grad.data[n] * (v >= 0.0 ? 1.0 : -1.0);
    }
  }));
}

Value mul_rowscalar(const Value& x, const Value& s) {
  check_defined(x, "mul_rowscalar");
  check_defined(s, "mul_rowscalar");
  auto [N, D] = row_geometry(x.val(), "mul_rowscalar");
  if (s.val().numel() != N) {
    throw ShapeError("mul_rowscalar: per-row scale count " + shape_str(s.val().shape) +
                     " does not match rows of " + shape_str(x.val().shape));
  }
  Tensor y(x.val().shape);
  for (int n = 0; n < N; ++n) {
    const double c = s.val().data[n];
    const double* row = &x.val().data[static_cast<std::size_t>(n) * D];
    double* out = &y.data[static_cast<std::size_t>(n) * D];
    for (int i = 0; i < D; ++i) out[i] = row[i] * c;
  }
  NodePtr xn = x.node(), sn = s.node();
  return Value(make_node(std::move(y), {xn, sn}, [xn, sn, N = N, D = D](Node& self) {
    Tensor* gx = gbuf(xn);
    Tensor* gs = gbuf(sn);
    for (int n = 0; n < N; ++n) {
      const double c = sn->value.data[n];
      const double* g = &self.grad.data[static_cast<std::size_t>(n) * D];
      if (gx) {
        double* out = &gx->data[static_cast<std::size_t>(n) * D];
        for (int i = 0; i < D; ++i) out[i] += g[i] * c;
      }
      if (gs) {
        const double* row = &xn->value.data[static_cast<std::size_t>(n) * D];
        double acc = 0.0;
        for (int i = 0; i < D; ++i) acc += g[i] * row[i];
        gs->data[n] += acc;
      }
    }
  }));
}

Value mean_all(const Value& x) {
  check_defined(x, "mean_all");
  const double inv = 1.0 / static_cast<double>(x.val().numel());
  double s = 0.0;
  for (double v : x.val().data) s += v;
  NodePtr xn = x.node();
  return Value(make_node(Tensor::scalar(s * inv), {xn}, [xn, inv](Node& self) {
    if (Tensor* ga = gbuf(xn)) {
      const double g = self.grad.data[0] * inv;
      for (double& v : ga->data) v += g;
    }
  }));
}

Value sum_all(const Value& x) {
  check_defined(x, "sum_all");
  double s = 0.0;
  for (double v : x.val().data) s += v;
  NodePtr xn = x.node();
  return Value(make_node(Tensor::scalar(s), {xn}, [xn](Node& self) {
    if (Tensor* ga = gbuf(xn)) {
      const double g = self.grad.data[0];
      for (double& v : ga->data) v += g;
    }
  }));
}

}  // namespace adnnperf::ad
