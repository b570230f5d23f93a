#include "adnnperf/tensor.hpp"

#include <string>

namespace adnnperf {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t(std::vector<int>{1});
  t.data[0] = v;
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

}  // namespace adnnperf
