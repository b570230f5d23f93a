#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adnnperf/kernels.hpp"
#include "adnnperf/tensor.hpp"

// Reverse-mode automatic differentiation over a dynamically built DAG of
// shared nodes. Parameters are long-lived leaf nodes reused across graphs;
// everything else is created per forward pass and freed when the root handle
// goes out of scope. backward() zeroes every reachable gradient first, so a
// fresh call never sees stale accumulations.
namespace adnnperf::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward(); empty until then
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  // Pulls this node's grad and accumulates into parents' grads. Leaves have
  // none. Implementations skip parents whose requires_grad is false.
  std::function<void(Node&)> backprop;
};

// Thin shared handle; copyable, cheap, default-constructed == "absent"
// (used for optional biases).
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  Tensor& val() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node* raw() const { return node_.get(); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Leaf constructors.
Value constant(Tensor t);          // requires_grad = false
Value param(Tensor t);             // requires_grad = true (trainable leaf)
Value leaf(Tensor t, bool requires_grad);

// Scalar-root reverse pass: zeroes all reachable grads, seeds d(root)/d(root)
// = 1, runs node backprops in reverse topological order. Throws ShapeError
// if root is not a single-element tensor.
void backward(const Value& root);

// ---- elementwise / scalar ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value add_scalar(const Value& a, double c);
Value mul_scalar(const Value& a, double c);
Value relu(const Value& a);
Value leaky_relu(const Value& a, double slope);
Value sigmoid(const Value& a);
Value tanh_act(const Value& a);
Value softplus(const Value& a);  // log(1+e^x), overflow-safe
Value clamp01(const Value& a);   // gradient passes only strictly inside (0,1)

// ---- structured ----
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
Value conv_transpose2d(const Value& x, const Value& w, const Value& b,
                       int stride, int pad, int out_pad);
Value dense(const Value& x, const Value& w, const Value& b);
// Training-mode batch normalization; batch statistics are exposed through
// saved_out (mean + invstd) so callers can maintain running estimates.
Value batchnorm2d_train(const Value& x, const Value& gamma, const Value& beta,
                        double eps, kern::BnStats* saved_out);
Value batchnorm2d_infer(const Value& x, const Value& gamma, const Value& beta,
                        const Tensor& rmean, const Tensor& rvar, double eps);
Value global_avg_pool(const Value& x);
Value reshape(const Value& x, std::vector<int> new_shape);

// ---- rows = samples ----
Value softmax_rows(const Value& x);                  // [N,K] -> [N,K]
Value row_max(const Value& x);                       // [N,K] -> [N], subgradient at argmax
Value cross_entropy_mean(const Value& logits, const std::vector<int>& labels);
Value l2norm_rows(const Value& x);                   // [N,...] -> [N]
Value maxabs_rows(const Value& x);                   // [N,...] -> [N]
Value mul_rowscalar(const Value& x, const Value& s); // x[n,...] * s[n]
Value mean_all(const Value& x);                      // -> [1]
Value sum_all(const Value& x);                       // -> [1]

}  // namespace adnnperf::ad
