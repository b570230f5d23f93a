#include "adnnperf/kernels.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace adnnperf::kern {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

// Unfold x into patch columns: cols is (Cin*k*k) x (N*Ho*Wo), column index
// n*Ho*Wo + ho*Wo + wo. Out-of-bounds taps read as zero.
void im2col(const Tensor& x, const ConvDims& d, RowMat& cols) {
  cols.setZero(d.Cin * d.k * d.k, static_cast<Eigen::Index>(d.N) * d.Ho * d.Wo);
  const int HoWo = d.Ho * d.Wo;
  for (int n = 0; n < d.N; ++n) {
    for (int c = 0; c < d.Cin; ++c) {
      for (int ki = 0; ki < d.k; ++ki) {
        for (int kj = 0; kj < d.k; ++kj) {
          const int row = (c * d.k + ki) * d.k + kj;
          double* dst = cols.data() + static_cast<std::size_t>(row) * cols.cols() +
                        static_cast<std::size_t>(n) * HoWo;
          for (int ho = 0; ho < d.Ho; ++ho) {
            const int h = ho * d.stride - d.pad + ki;
            if (h < 0 || h >= d.H) continue;
            const double* src = &x.data[((static_cast<std::size_t>(n) * d.Cin + c) * d.H + h) * d.W];
            for (int wo = 0; wo < d.Wo; ++wo) {
              const int w = wo * d.stride - d.pad + kj;
              if (w < 0 || w >= d.W) continue;
              dst[ho * d.Wo + wo] = src[w];
            }
          }
        }
      }
    }
  }
}

// Fold patch-column gradients back onto the input grid (accumulating).
void col2im_add(const RowMat& cols, const ConvDims& d, Tensor& gx) {
  const int HoWo = d.Ho * d.Wo;
  for (int n = 0; n < d.N; ++n) {
    for (int c = 0; c < d.Cin; ++c) {
      for (int ki = 0; ki < d.k; ++ki) {
        for (int kj = 0; kj < d.k; ++kj) {
          const int row = (c * d.k + ki) * d.k + kj;
          const double* src = cols.data() +
                              static_cast<std::size_t>(row) * cols.cols() +
                              static_cast<std::size_t>(n) * HoWo;
          for (int ho = 0; ho < d.Ho; ++ho) {
            const int h = ho * d.stride - d.pad + ki;
            if (h < 0 || h >= d.H) continue;
            double* dst = &gx.data[((static_cast<std::size_t>(n) * d.Cin + c) * d.H + h) * d.W];
            for (int wo = 0; wo < d.Wo; ++wo) {
              const int w = wo * d.stride - d.pad + kj;
              if (w < 0 || w >= d.W) continue;
              dst[w] += src[ho * d.Wo + wo];
            }
          }
        }
      }
    }
  }
}

void ensure_grad_shape(Tensor* g, const std::vector<int>& shape, const char* where) {
  if (g && g->shape != shape) {
    throw ShapeError(std::string(where) + ": gradient buffer shape " + shape_str(g->shape) +
                     " does not match " + shape_str(shape));
  }
}

}  // namespace

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw ShapeError("conv2d: expected 4-d activation and weight, got " +
                     shape_str(x.shape) + " and " + shape_str(w.shape));
  }
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: non-square kernel");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape) + " vs " +
                     shape_str(w.shape));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvDims d;
  d.N = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  d.Ho = (d.H + 2 * pad - d.k) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.k) / stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  return d;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, int stride,
              int pad) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  if (b && b->numel() != d.Cout) throw ShapeError("conv2d: bias size mismatch");

  RowMat cols;
  im2col(x, d, cols);
  CMapRM wm(w.data.data(), d.Cout, d.Cin * d.k * d.k);
  RowMat ym = wm * cols;  // (Cout) x (N*Ho*Wo)

  Tensor y(std::vector<int>{d.N, d.Cout, d.Ho, d.Wo});
  const int HoWo = d.Ho * d.Wo;
  for (int n = 0; n < d.N; ++n) {
    for (int co = 0; co < d.Cout; ++co) {
      const double* src = ym.data() + static_cast<std::size_t>(co) * ym.cols() +
                          static_cast<std::size_t>(n) * HoWo;
      double* dst = &y.at4(n, co, 0, 0);
      const double bias = b ? b->data[co] : 0.0;
      for (int p = 0; p < HoWo; ++p) dst[p] = src[p] + bias;
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad,
                     const Tensor& gy, Tensor* gx, Tensor* gw, Tensor* gb) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  ensure_grad_shape(gx, x.shape, "conv2d_backward/gx");
  ensure_grad_shape(gw, w.shape, "conv2d_backward/gw");
  const int HoWo = d.Ho * d.Wo;

  if (gb) {
    for (int n = 0; n < d.N; ++n) {
      for (int co = 0; co < d.Cout; ++co) {
        const double* src = &gy.at4(n, co, 0, 0);
        double acc = 0.0;
        for (int p = 0; p < HoWo; ++p) acc += src[p];
        gb->data[co] += acc;
      }
    }
  }
  if (!gx && !gw) return;

  // Reassemble gy as (Cout) x (N*Ho*Wo) to match the im2col column order.
  RowMat gym(d.Cout, static_cast<Eigen::Index>(d.N) * HoWo);
  for (int n = 0; n < d.N; ++n) {
    for (int co = 0; co < d.Cout; ++co) {
      const double* src = &gy.at4(n, co, 0, 0);
      double* dst = gym.data() + static_cast<std::size_t>(co) * gym.cols() +
                    static_cast<std::size_t>(n) * HoWo;
      for (int p = 0; p < HoWo; ++p) dst[p] = src[p];
    }
  }

  if (gw) {
    RowMat cols;
    im2col(x, d, cols);  // recomputed: caching it per node would cost ~20 MB each
    MapRM gwm(gw->data.data(), d.Cout, d.Cin * d.k * d.k);
    gwm.noalias() += gym * cols.transpose();
  }
  if (gx) {
    CMapRM wm(w.data.data(), d.Cout, d.Cin * d.k * d.k);
    RowMat colsg = wm.transpose() * gym;  // (Cin*k*k) x (N*Ho*Wo)
    col2im_add(colsg, d, *gx);
  }
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* b,
                        int stride, int pad, int out_pad) {
  if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("conv_transpose2d: expected 4-d tensors");
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("conv_transpose2d: channel mismatch " + shape_str(x.shape) +
                     " vs " + shape_str(w.shape));
  }
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(1), k = w.dim(2);
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv_transpose2d: non-square kernel");
  const int Ho = (H - 1) * stride - 2 * pad + k + out_pad;
  const int Wo = (W - 1) * stride - 2 * pad + k + out_pad;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv_transpose2d: empty output");
  if (b && b->numel() != Cout) throw ShapeError("conv_transpose2d: bias size mismatch");

  // Gather x as (Cin) x (N*H*W), multiply by w viewed as (Cin) x (Cout*k*k),
  // then scatter each input position's k x k contribution onto the output.
  const int HW = H * W;
  RowMat xm(Cin, static_cast<Eigen::Index>(N) * HW);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < Cin; ++c) {
      const double* src = &x.at4(n, c, 0, 0);
      double* dst = xm.data() + static_cast<std::size_t>(c) * xm.cols() +
                    static_cast<std::size_t>(n) * HW;
      for (int p = 0; p < HW; ++p) dst[p] = src[p];
    }
  }
  CMapRM wm(w.data.data(), Cin, Cout * k * k);
  RowMat cols = wm.transpose() * xm;  // (Cout*k*k) x (N*H*W)

  Tensor y(std::vector<int>{N, Cout, Ho, Wo});
  if (b) {
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co) {
        double* dst = &y.at4(n, co, 0, 0);
        for (int p = 0; p < Ho * Wo; ++p) dst[p] = b->data[co];
      }
  }
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const int row = (co * k + ki) * k + kj;
          const double* src = cols.data() + static_cast<std::size_t>(row) * cols.cols() +
                              static_cast<std::size_t>(n) * HW;
          for (int h = 0; h < H; ++h) {
            const int oh = h * stride - pad + ki;
            if (oh < 0 || oh >= Ho) continue;
            double* dst = &y.at4(n, co, oh, 0);
            for (int ww = 0; ww < W; ++ww) {
              const int ow = ww * stride - pad + kj;
              if (ow < 0 || ow >= Wo) continue;
              dst[ow] += src[h * W + ww];
            }
          }
        }
      }
    }
  }
  return y;
}

void conv_transpose2d_backward(const Tensor& x, const Tensor& w, int stride,
                               int pad, int out_pad, const Tensor& gy,
                               Tensor* gx, Tensor* gw, Tensor* gb) {
  (void)out_pad;  // geometry is recovered from gy's actual shape
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(1), k = w.dim(2);
  const int Ho = gy.dim(2), Wo = gy.dim(3);
  ensure_grad_shape(gx, x.shape, "conv_transpose2d_backward/gx");
  ensure_grad_shape(gw, w.shape, "conv_transpose2d_backward/gw");

  if (gb) {
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co) {
        const double* src = &gy.at4(n, co, 0, 0);
        double acc = 0.0;
        for (int p = 0; p < Ho * Wo; ++p) acc += src[p];
        gb->data[co] += acc;
      }
  }
  if (!gx && !gw) return;

  // Gather gy patches with the forward's scatter geometry inverted:
  // colsg(row=(co,ki,kj), col=(n,h,w)) = gy[n, co, h*s-p+ki, w*s-p+kj].
  const int HW = H * W;
  RowMat colsg;
  colsg.setZero(Cout * k * k, static_cast<Eigen::Index>(N) * HW);
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const int row = (co * k + ki) * k + kj;
          double* dst = colsg.data() + static_cast<std::size_t>(row) * colsg.cols() +
                        static_cast<std::size_t>(n) * HW;
          for (int h = 0; h < H; ++h) {
            const int oh = h * stride - pad + ki;
            if (oh < 0 || oh >= Ho) continue;
            const double* src = &gy.at4(n, co, oh, 0);
            for (int ww = 0; ww < W; ++ww) {
              const int ow = ww * stride - pad + kj;
              if (ow < 0 || ow >= Wo) continue;
              dst[h * W + ww] = src[ow];
            }
          }
        }
      }
    }
  }

  if (gx) {
    CMapRM wm(w.data.data(), Cin, Cout * k * k);
    RowMat gxm = wm * colsg;  // (Cin) x (N*H*W)
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < Cin; ++c) {
        const double* src = gxm.data() + static_cast<std::size_t>(c) * gxm.cols() +
                            static_cast<std::size_t>(n) * HW;
        double* dst = &gx->at4(n, c, 0, 0);
        for (int p = 0; p < HW; ++p) dst[p] += src[p];
      }
    }
  }
  if (gw) {
    RowMat xm(Cin, static_cast<Eigen::Index>(N) * HW);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < Cin; ++c) {
        const double* src = &x.at4(n, c, 0, 0);
        double* dst = xm.data() + static_cast<std::size_t>(c) * xm.cols() +
                      static_cast<std::size_t>(n) * HW;
        for (int p = 0; p < HW; ++p) dst[p] = src[p];
      }
    }
    MapRM gwm(gw->data.data(), Cin, Cout * k * k);
    gwm.noalias() += xm * colsg.transpose();
  }
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor* b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0)) {
    throw ShapeError("dense: shape mismatch " + shape_str(x.shape) + " vs " +
                     shape_str(w.shape));
  }
  const int N = x.dim(0), D = x.dim(1), O = w.dim(1);
  if (b && b->numel() != O) throw ShapeError("dense: bias size mismatch");
  Tensor y(std::vector<int>{N, O});
  CMapRM xm(x.data.data(), N, D), wm(w.data.data(), D, O);
  MapRM ym(y.data.data(), N, O);
  ym.noalias() = xm * wm;
  if (b) {
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) y.at2(n, o) += b->data[o];
  }
  return y;
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                    Tensor* gx, Tensor* gw, Tensor* gb) {
  const int N = x.dim(0), D = x.dim(1), O = w.dim(1);
  ensure_grad_shape(gx, x.shape, "dense_backward/gx");
  ensure_grad_shape(gw, w.shape, "dense_backward/gw");
  CMapRM xm(x.data.data(), N, D), wm(w.data.data(), D, O), gym(gy.data.data(), N, O);
  if (gx) {
    MapRM gxm(gx->data.data(), N, D);
    gxm.noalias() += gym * wm.transpose();
  }
  if (gw) {
    MapRM gwm(gw->data.data(), D, O);
    gwm.noalias() += xm.transpose() * gym;
  }
  if (gb) {
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) gb->data[o] += gy.at2(n, o);
  }
}

Tensor batchnorm2d_train(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps, BnStats& saved) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double M = static_cast<double>(N) * H * W;
  saved.mean = Tensor(std::vector<int>{C});
  saved.invstd = Tensor(std::vector<int>{C});
  Tensor y(x.shape);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* p = &x.at4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) s += p[i];
    }
    const double mu = s / M;
    double v = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* p = &x.at4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) {
        const double d = p[i] - mu;
        v += d * d;
      }
    }
    const double invstd = 1.0 / std::sqrt(v / M + eps);
    saved.mean.data[c] = mu;
    saved.invstd.data[c] = invstd;
    const double g = gamma.data[c], b = beta.data[c];
    for (int n = 0; n < N; ++n) {
      const double* p = &x.at4(n, c, 0, 0);
      double* q = &y.at4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) q[i] = g * (p[i] - mu) * invstd + b;
    }
  }
  return y;
}

void batchnorm2d_train_backward(const Tensor& x, const Tensor& gamma,
                                const BnStats& saved, const Tensor& gy,
                                Tensor* gx, Tensor* ggamma, Tensor* gbeta) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double M = static_cast<double>(N) * H * W;
  for (int c = 0; c < C; ++c) {
    const double mu = saved.mean.data[c], invstd = saved.invstd.data[c];
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* px = &x.at4(n, c, 0, 0);
      const double* pg = &gy.at4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) {
        const double xhat = (px[i] - mu) * invstd;
        sum_gy += pg[i];
        sum_gy_xhat += pg[i] * xhat;
      }
    }
    if (ggamma) ggamma->data[c] += sum_gy_xhat;
    if (gbeta) gbeta->data[c] += sum_gy;
    if (gx) {
      const double g = gamma.data[c];
      for (int n = 0; n < N; ++n) {
        const double* px = &x.at4(n, c, 0, 0);
        const double* pg = &gy.at4(n, c, 0, 0);
        double* pq = &gx->at4(n, c, 0, 0);
        for (int i = 0; i < H * W; ++i) {
          const double xhat = (px[i] - mu) * invstd;
          pq[i] += g * invstd * (pg[i] - sum_gy / M - xhat * sum_gy_xhat / M);
        }
      }
    }
  }
}

Tensor batchnorm2d_infer(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, const Tensor& rmean,
                         const Tensor& rvar, double eps) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y(x.shape);
  for (int c = 0; c < C; ++c) {
    const double invstd = 1.0 / std::sqrt(rvar.data[c] + eps);
    const double g = gamma.data[c], b = beta.data[c], mu = rmean.data[c];
    for (int n = 0; n < N; ++n) {
      const double* p = &x.at4(n, c, 0, 0);
      double* q = &y.at4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) q[i] = g * (p[i] - mu) * invstd + b;
    }
  }
  return y;
}

void batchnorm2d_infer_backward(const Tensor& x, const Tensor& gamma,
                                const Tensor& rmean, const Tensor& rvar,
                                double eps, const Tensor& gy, Tensor* gx,
                                Tensor* ggamma, Tensor* gbeta) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (int c = 0; c < C; ++c) {
    const double invstd = 1.0 / std::sqrt(rvar.data[c] + eps);
    const double g = gamma.data[c], mu = rmean.data[c];
    for (int n = 0; n < N; ++n) {
      const double* px = &x.at4(n, c, 0, 0);
      const double* pg = &gy.at4(n, c, 0, 0);
      double* pq = gx ? &gx->at4(n, c, 0, 0) : nullptr;
      for (int i = 0; i < H * W; ++i) {
        if (pq) pq[i] += pg[i] * g * invstd;
        if (ggamma) ggamma->data[c] += pg[i] * (px[i] - mu) * invstd;
        if (gbeta) gbeta->data[c] += pg[i];
      }
    }
  }
}

Tensor global_avg_pool(const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y(std::vector<int>{N, C});
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* p = &x.at4(n, c, 0, 0);
      double s = 0.0;
      for (int i = 0; i < H * W; ++i) s += p[i];
      y.at2(n, c) = s * inv;
    }
  }
  return y;
}

void global_avg_pool_backward(const std::vector<int>& xshape, const Tensor& gy,
                              Tensor* gx) {
  if (!gx) return;
  const int N = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double g = gy.at2(n, c) * inv;
      double* p = &gx->at4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) p[i] += g;
    }
  }
}

}  // namespace adnnperf::kern
