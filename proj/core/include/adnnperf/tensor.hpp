#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "adnnperf/errors.hpp"

namespace adnnperf {

// Dense row-major double tensor. Convolutional data is NCHW, dense data is
// (rows, cols). Shapes are small int vectors; all heavy math lives in
// kernels.cpp, so this type stays a plain value container.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // NCHW accessor; bounds are the caller's responsibility (hot path).
  double& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) *
                    shape[3] +
                w];
  }
  const double& at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) *
                    shape[3] +
                w];
  }
  double& at2(int r, int c) {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }
  const double& at2(int r, int c) const {
    return data[static_cast<std::size_t>(r) * shape[1] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Throws ShapeError with a readable message when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace adnnperf
