#pragma once

#include "adnnperf/tensor.hpp"

// Raw math kernels: forward/backward pairs over plain Tensors, no graph
// bookkeeping. All backward functions ACCUMULATE (+=) into their output
// gradients so the autodiff layer can fan in multiple uses of a node; pass
// nullptr for any gradient the caller does not need.
//
// Layout conventions:
//   activations  x : [N, C, H, W]
//   conv weight  w : [Cout, Cin, k, k]
//   tconv weight w : [Cin, Cout, k, k]
//   dense        x : [N, Din], w : [Din, Dout]
namespace adnnperf::kern {

struct ConvDims {
  int N, Cin, H, W, Cout, k, stride, pad, Ho, Wo;
};

// Validates shapes and computes output spatial dims (throws ShapeError).
ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, int stride,
              int pad);
void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad,
                     const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb);

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* b,
                        int stride, int pad, int out_pad);
void conv_transpose2d_backward(const Tensor& x, const Tensor& w, int stride,
                               int pad, int out_pad, const Tensor& gy,
                               Tensor* gx, Tensor* gw, Tensor* gb);

Tensor dense(const Tensor& x, const Tensor& w, const Tensor* b);
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                    Tensor* gx, Tensor* gw, Tensor* gb);

// Per-channel statistics saved by the training-mode forward for reuse in
// backward (shape [C] each).
struct BnStats {
  Tensor mean, invstd;
};

Tensor batchnorm2d_train(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps, BnStats& saved);
void batchnorm2d_train_backward(const Tensor& x, const Tensor& gamma,
                                const BnStats& saved, const Tensor& gy,
                                Tensor* gx, Tensor* ggamma, Tensor* gbeta);

Tensor batchnorm2d_infer(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, const Tensor& rmean,
                         const Tensor& rvar, double eps);
void batchnorm2d_infer_backward(const Tensor& x, const Tensor& gamma,
                                const Tensor& rmean, const Tensor& rvar,
                                double eps, const Tensor& gy, Tensor* gx,
                                Tensor* ggamma, Tensor* gbeta);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
void global_avg_pool_backward(const std::vector<int>& xshape, const Tensor& gy,
                              Tensor* gx);

}  // namespace adnnperf::kern
