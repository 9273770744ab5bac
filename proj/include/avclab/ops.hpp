#pragma once

// Differentiable layer operations. Convolutions are lowered to im2col + GEMM
// (Eigen); the column buffer is recomputed during the backward pass instead of
// being cached, trading a little compute for a much smaller live graph.

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "avclab/tensor.hpp"

namespace avc {

enum class Mode { train, eval };
enum class Act { relu, sigmoid };

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Gradient checking samples inputs away from non-differentiable points by
// rejection; ops report how close a forward pass came to one of them here.
struct SmoothnessTrace {
  double min_relu_margin = std::numeric_limits<double>::infinity();
  double min_pool_gap = std::numeric_limits<double>::infinity();
  double min_row_norm = std::numeric_limits<double>::infinity();
  double min_distance = std::numeric_limits<double>::infinity();

  static SmoothnessTrace*& active() {
    thread_local SmoothnessTrace* p = nullptr;
    return p;
  }
  double worst() const {
    return std::min(std::min(min_relu_margin, min_pool_gap), std::min(min_row_norm, min_distance));
  }
};

// Learnable state of one layer. Convolutions and dense layers use weights +
// bias; batch-norm layers use weights/bias as scale/shift and carry running
// statistics.
template <typename T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  bool has_running_stats = false;

  static LayerParams conv(int out_c, int in_c, int kh, int kw, Rng& rng) {
    LayerParams p;
    p.weights = Tensor<T>(Shape{out_c, in_c, kh, kw});
    T std = T(std::sqrt(2.0 / (double(in_c) * kh * kw)));
    for (auto& v : p.weights.values()) v = T(rng.normal()) * std;
    p.bias = Tensor<T>(Shape{out_c});
    p.weights.set_requires_grad();
    p.bias.set_requires_grad();
    return p;
  }

  static LayerParams dense_layer(int out_d, int in_d, Rng& rng) {
    LayerParams p;
    p.weights = Tensor<T>(Shape{out_d, in_d});
    T std = T(std::sqrt(2.0 / double(in_d)));
    for (auto& v : p.weights.values()) v = T(rng.normal()) * std;
    p.bias = Tensor<T>(Shape{out_d});
    p.weights.set_requires_grad();
    p.bias.set_requires_grad();
    return p;
  }

  static LayerParams batchnorm(int channels, T momentum = T(0.1), T epsilon = T(1e-5)) {
    AVC_CHECK_ARG(momentum > T(0) && momentum < T(1), "batch-norm momentum must lie in (0,1)");
    AVC_CHECK_ARG(epsilon > T(0), "batch-norm epsilon must be positive");
    LayerParams p;
    p.weights = Tensor<T>(Shape{channels}, std::vector<T>(size_t(channels), T(1)));
    p.bias = Tensor<T>(Shape{channels});
    p.running_mean = Tensor<T>(Shape{channels});
    p.running_var = Tensor<T>(Shape{channels}, std::vector<T>(size_t(channels), T(1)));
    p.momentum = momentum;
    p.epsilon = epsilon;
    p.has_running_stats = true;
    p.weights.set_requires_grad();
    p.bias.set_requires_grad();
    return p;
  }
};

namespace detail {

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad_top, int pad_left,
            int Ho, int Wo, T* col) {
  for (int c = 0; c < C; ++c) {
    const T* xc = x + size_t(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + (size_t(c) * kh * kw + size_t(ki) * kw + kj) * size_t(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride + ki - pad_top;
          T* drow = dst + size_t(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + Wo, T(0));
            continue;
          }
          const T* xrow = xc + size_t(iy) * W;
          if (stride == 1) {
            int ox0 = std::max(0, pad_left - kj);
            int ox1 = std::min(Wo, W + pad_left - kj);
            for (int ox = 0; ox < ox0; ++ox) drow[ox] = T(0);
            if (ox1 > ox0)
              std::memcpy(drow + ox0, xrow + (ox0 + kj - pad_left), size_t(ox1 - ox0) * sizeof(T));
            for (int ox = ox1; ox < Wo; ++ox) drow[ox] = T(0);
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              int ix = ox * stride + kj - pad_left;
              drow[ox] = (ix >= 0 && ix < W) ? xrow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad_top,
                int pad_left, int Ho, int Wo, T* dx) {
  for (int c = 0; c < C; ++c) {
    T* xc = dx + size_t(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + (size_t(c) * kh * kw + size_t(ki) * kw + kj) * size_t(Ho) * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride + ki - pad_top;
          if (iy < 0 || iy >= H) continue;
          const T* srow = src + size_t(oy) * Wo;
          T* xrow = xc + size_t(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride + kj - pad_left;
            if (ix >= 0 && ix < W) xrow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T>& conv_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

// 2-D cross-correlation with zero same-padding. Output spatial extents are
// input/stride; input extents must divide by the stride.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
  AVC_CHECK_ARG(x.ndim() == 4 && w.ndim() == 4, "conv2d expects NCHW input and KCkk kernel");
  const int N = int(x.dim(0)), C = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
  const int K = int(w.dim(0)), kh = int(w.dim(2)), kw = int(w.dim(3));
  AVC_CHECK_ARG(int(w.dim(1)) == C, "conv2d: kernel expects " << w.dim(1) << " input channels, got "
                                                              << C);
  AVC_CHECK_ARG(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd, got " << kh << "x"
                                                                                       << kw);
  AVC_CHECK_ARG(stride >= 1, "conv2d: stride must be positive");
  AVC_CHECK_ARG(H % stride == 0 && W % stride == 0,
                "conv2d: input " << H << "x" << W << " not divisible by stride " << stride);
  AVC_CHECK_ARG(b.numel() == K, "conv2d: bias length " << b.numel() << " != " << K);
  const int Ho = H / stride, Wo = W / stride;
  const int pad_h = std::max(0, (Ho - 1) * stride + kh - H);
  const int pad_w = std::max(0, (Wo - 1) * stride + kw - W);
  const int pt = pad_h / 2, pl = pad_w / 2;
  const int CKK = C * kh * kw;
  const size_t plane = size_t(Ho) * Wo;
  const bool pointwise = (kh == 1 && kw == 1 && stride == 1);

  Tensor<T> y(Shape{N, K, Ho, Wo});
  Eigen::Map<const RowMat<T>> Wm(w.data(), K, CKK);
  Eigen::Map<const ColVec<T>> Bv(b.data(), K);
  std::vector<T>& col = detail::conv_scratch<T>();
  if (!pointwise) col.resize(size_t(CKK) * plane);
  for (int n = 0; n < N; ++n) {
    const T* xs = x.data() + size_t(n) * C * H * W;
    const T* cs = pointwise ? xs : col.data();
    if (!pointwise) detail::im2col(xs, C, H, W, kh, kw, stride, pt, pl, Ho, Wo, col.data());
    Eigen::Map<const RowMat<T>> Cm(cs, CKK, Eigen::Index(plane));
    Eigen::Map<RowMat<T>> Ym(y.data() + size_t(n) * K * plane, K, Eigen::Index(plane));
    Ym.noalias() = Wm * Cm;
    Ym.colwise() += Bv;
  }

  auto xc = x, wc = w, bc = b;
  Tensor<T> res = Tensor<T>::make_op(
      y.shape(), {x, w, b},
      [=](typename Tensor<T>::Node& self) mutable {
        std::vector<T>& colb = detail::conv_scratch<T>();
        if (!pointwise) colb.resize(size_t(CKK) * plane);
        Eigen::Map<const RowMat<T>> Wmat(wc.data(), K, CKK);
        const bool need_dx = xc.requires_grad();
        Eigen::Map<RowMat<T>> dW(wc.grad().data(), K, CKK);
        auto& dB = bc.grad();
        std::vector<T> dcol;
        if (need_dx && !pointwise) dcol.resize(size_t(CKK) * plane);
        for (int n = 0; n < N; ++n) {
          const T* xs = xc.data() + size_t(n) * C * H * W;
          const T* dyp = self.grad.data() + size_t(n) * K * plane;
          Eigen::Map<const RowMat<T>> dY(dyp, K, Eigen::Index(plane));
          const T* cs = pointwise ? xs : colb.data();
          if (!pointwise) detail::im2col(xs, C, H, W, kh, kw, stride, pt, pl, Ho, Wo, colb.data());
          Eigen::Map<const RowMat<T>> Cm(cs, CKK, Eigen::Index(plane));
          dW.noalias() += dY * Cm.transpose();
          // serial bias reduction: bitwise reproducible across allocations
          for (int k = 0; k < K; ++k) {
            double s = 0.0;
            const T* row = dyp + size_t(k) * plane;
            for (size_t i = 0; i < plane; ++i) s += double(row[i]);
            dB[size_t(k)] += T(s);
          }
          if (need_dx) {
            if (pointwise) {
              Eigen::Map<RowMat<T>> dX(xc.grad().data() + size_t(n) * C * H * W, C,
                                       Eigen::Index(plane));
              dX.noalias() += Wmat.transpose() * dY;
            } else {
              Eigen::Map<RowMat<T>> dCol(dcol.data(), CKK, Eigen::Index(plane));
              dCol.noalias() = Wmat.transpose() * dY;
              detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pt, pl, Ho, Wo,
                                 xc.grad().data() + size_t(n) * C * H * W);
            }
          }
        }
      });
  res.values() = std::move(y.values());
  return res;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, LayerParams<T>& p, int stride) {
  return conv2d(x, p.weights, p.bias, stride);
}

// Max pooling with stride equal to the window. Ties go to the first element
// in row-major scan order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kh, int kw) {
  AVC_CHECK_ARG(x.ndim() == 4, "maxpool2d expects NCHW input");
  AVC_CHECK_ARG(kh >= 1 && kw >= 1, "maxpool2d: window must be positive");
  const int N = int(x.dim(0)), C = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
  AVC_CHECK_ARG(H % kh == 0 && W % kw == 0, "maxpool2d: input " << H << "x" << W
                                                                << " not divisible by window " << kh
                                                                << "x" << kw);
  const int Ho = H / kh, Wo = W / kw;
  std::vector<int64_t> argmax(size_t(N) * C * Ho * Wo);
  std::vector<T> out(size_t(N) * C * Ho * Wo);
  SmoothnessTrace* trace = SmoothnessTrace::active();
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xp = x.data() + (size_t(n) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          T second = best;
          int64_t best_ix = -1;
          for (int ki = 0; ki < kh; ++ki) {
            const T* row = xp + size_t(oy * kh + ki) * W + size_t(ox) * kw;
            for (int kj = 0; kj < kw; ++kj) {
              T v = row[kj];
              if (v > best) {
                second = best;
                best = v;
                best_ix = (size_t(n) * C + c) * H * W + size_t(oy * kh + ki) * W +
                          size_t(ox) * kw + kj;
              } else if (v > second) {
                second = v;
              }
            }
          }
          size_t o = ((size_t(n) * C + c) * Ho + oy) * Wo + ox;
          out[o] = best;
          argmax[o] = best_ix;
          if (trace && kh * kw > 1) {
            trace->min_pool_gap = std::min(trace->min_pool_gap, double(best - second));
          }
        }
      }
    }
  }
  auto xc = x;
  Tensor<T> res = Tensor<T>::make_op(Shape{N, C, Ho, Wo}, {x},
                                     [xc, argmax](typename Tensor<T>::Node& self) mutable {
                                       auto& dx = xc.grad();
                                       for (size_t o = 0; o < argmax.size(); ++o)
                                         dx[size_t(argmax[o])] += self.grad[o];
                                     });
  res.values() = std::move(out);
  return res;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k) {
  return maxpool2d(x, k, k);
}

// Per-channel batch normalization with affine scale/shift. Train mode
// normalizes by batch statistics and updates the running estimates by
// exponential moving average; eval mode normalizes by the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, LayerParams<T>& p, Mode mode) {
  AVC_CHECK_ARG(x.ndim() == 4, "batchnorm2d expects NCHW input");
  AVC_CHECK_ARG(p.has_running_stats, "batchnorm2d: params missing running statistics");
  const int N = int(x.dim(0)), C = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
  AVC_CHECK_ARG(int(p.weights.numel()) == C,
                "batchnorm2d: channel count " << C << " != params " << p.weights.numel());
  const size_t plane = size_t(H) * W;
  const int64_t M = int64_t(N) * H * W;

  std::vector<T> mean(size_t(C), T(0)), invstd(size_t(C), T(0));
  if (mode == Mode::train) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xp = x.data() + (size_t(n) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) {
          double v = double(xp[i]);
          s += v;
          s2 += v * v;
        }
      }
      double mu = s / double(M);
      double var = std::max(0.0, s2 / double(M) - mu * mu);
      mean[size_t(c)] = T(mu);
      invstd[size_t(c)] = T(1.0 / std::sqrt(var + double(p.epsilon)));
      T& rm = p.running_mean.at(c);
      T& rv = p.running_var.at(c);
      rm = (T(1) - p.momentum) * rm + p.momentum * T(mu);
      rv = (T(1) - p.momentum) * rv + p.momentum * T(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[size_t(c)] = p.running_mean.at(c);
      invstd[size_t(c)] = T(1.0 / std::sqrt(double(p.running_var.at(c)) + double(p.epsilon)));
    }
  }

  Tensor<T> gamma = p.weights, beta = p.bias;
  std::vector<T> out(size_t(x.numel()));
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* xp = x.data() + (size_t(n) * C + c) * plane;
      T* yp = out.data() + (size_t(n) * C + c) * plane;
      const T a = gamma.at(c) * invstd[size_t(c)];
      const T mu = mean[size_t(c)];
      const T sh = beta.at(c);
      for (size_t i = 0; i < plane; ++i) yp[i] = a * (xp[i] - mu) + sh;
    }
  }

  auto xc = x;
  bool train = (mode == Mode::train);
  Tensor<T> res = Tensor<T>::make_op(
      x.shape(), {x, gamma, beta},
      [=](typename Tensor<T>::Node& self) mutable {
        const bool need_dx = xc.requires_grad();
        auto& dgamma = gamma.grad();
        auto& dbeta = beta.grad();
        for (int c = 0; c < C; ++c) {
          double s1 = 0.0, s2 = 0.0;  // sum(dy), sum(dy * xhat)
          const T mu = mean[size_t(c)];
          const T istd = invstd[size_t(c)];
          for (int n = 0; n < N; ++n) {
            const T* xp = xc.data() + (size_t(n) * C + c) * plane;
            const T* gp = self.grad.data() + (size_t(n) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
              double dy = double(gp[i]);
              s1 += dy;
              s2 += dy * double((xp[i] - mu) * istd);
            }
          }
          dgamma[size_t(c)] += T(s2);
          dbeta[size_t(c)] += T(s1);
          if (!need_dx) continue;
          const T a = gamma.at(c) * istd;
          if (train) {
            const T m1 = T(s1 / double(M));
            const T m2 = T(s2 / double(M));
            for (int n = 0; n < N; ++n) {
              const T* xp = xc.data() + (size_t(n) * C + c) * plane;
              const T* gp = self.grad.data() + (size_t(n) * C + c) * plane;
              T* dxp = xc.grad().data() + (size_t(n) * C + c) * plane;
              for (size_t i = 0; i < plane; ++i) {
                T xhat = (xp[i] - mu) * istd;
                dxp[i] += a * (gp[i] - m1 - xhat * m2);
              }
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const T* gp = self.grad.data() + (size_t(n) * C + c) * plane;
              T* dxp = xc.grad().data() + (size_t(n) * C + c) * plane;
              for (size_t i = 0; i < plane; ++i) dxp[i] += a * gp[i];
            }
          }
        }
      });
  res.values() = std::move(out);
  return res;
}

// Affine map y = x W^T + b with weights stored [out, in].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  AVC_CHECK_ARG(x.ndim() == 2 && w.ndim() == 2, "dense expects [N,D] input and [K,D] weights");
  const int N = int(x.dim(0)), D = int(x.dim(1)), K = int(w.dim(0));
  AVC_CHECK_ARG(int(w.dim(1)) == D,
                "dense: input dim " << D << " does not match weights " << shape_str(w.shape()));
  AVC_CHECK_ARG(b.numel() == K, "dense: bias length " << b.numel() << " != " << K);
  Tensor<T> y(Shape{N, K});
  Eigen::Map<const RowMat<T>> Xm(x.data(), N, D);
  Eigen::Map<const RowMat<T>> Wm(w.data(), K, D);
  Eigen::Map<RowMat<T>> Ym(y.data(), N, K);
  Ym.noalias() = Xm * Wm.transpose();
  Ym.rowwise() += Eigen::Map<const ColVec<T>>(b.data(), K).transpose();

  auto xc = x, wc = w, bc = b;
  Tensor<T> res = Tensor<T>::make_op(
      y.shape(), {x, w, b},
      [=](typename Tensor<T>::Node& self) mutable {
        Eigen::Map<const RowMat<T>> dY(self.grad.data(), N, K);
        Eigen::Map<const RowMat<T>> Xmat(xc.data(), N, D);
        Eigen::Map<const RowMat<T>> Wmat(wc.data(), K, D);
        Eigen::Map<RowMat<T>> dW(wc.grad().data(), K, D);
        dW.noalias() += dY.transpose() * Xmat;
        auto& dB = bc.grad();
        for (int k = 0; k < K; ++k) {
          double s = 0.0;
          for (int n = 0; n < N; ++n) s += double(self.grad[size_t(n) * K + k]);
          dB[size_t(k)] += T(s);
        }
        if (xc.requires_grad()) {
          Eigen::Map<RowMat<T>> dX(xc.grad().data(), N, D);
          dX.noalias() += dY * Wmat;
        }
      });
  res.values() = std::move(y.values());
  return res;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, LayerParams<T>& p) {
  return dense(x, p.weights, p.bias);
}

// Elementwise nonlinearity. relu'(0) is defined as 0.
template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  std::vector<T> out(size_t(x.numel()));
  SmoothnessTrace* trace = SmoothnessTrace::active();
  if (kind == Act::relu) {
    for (int64_t i = 0; i < x.numel(); ++i) {
      T v = x.at(i);
      out[size_t(i)] = v > T(0) ? v : T(0);
      if (trace) trace->min_relu_margin = std::min(trace->min_relu_margin, std::abs(double(v)));
    }
  } else {
    for (int64_t i = 0; i < x.numel(); ++i) {
      double z = double(x.at(i));
      out[size_t(i)] = T(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
    }
  }
  auto xc = x;
  Tensor<T> res = Tensor<T>::make_op(
      x.shape(), {x},
      [xc, kind](typename Tensor<T>::Node& self) mutable {
        auto& dx = xc.grad();
        if (kind == Act::relu) {
          for (size_t i = 0; i < self.grad.size(); ++i)
            if (self.value[i] > T(0)) dx[i] += self.grad[i];
        } else {
          for (size_t i = 0; i < self.grad.size(); ++i) {
            T y = self.value[i];
            dx[i] += self.grad[i] * y * (T(1) - y);
          }
        }
      });
  res.values() = std::move(out);
  return res;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Act::relu);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Act::sigmoid);
}

inline constexpr double kL2NormFloor = 1e-12;

// Row-wise L2 normalization with a floor on the norm, so zero rows pass
// through unchanged instead of dividing by zero.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  AVC_CHECK_ARG(x.ndim() == 2, "l2_normalize expects [N,D] input");
  const int N = int(x.dim(0)), D = int(x.dim(1));
  std::vector<T> out(size_t(x.numel()));
  std::vector<T> denom(size_t(N), T(0));
  std::vector<bool> floored(size_t(N), false);
  SmoothnessTrace* trace = SmoothnessTrace::active();
  for (int n = 0; n < N; ++n) {
    const T* xp = x.data() + size_t(n) * D;
    double s2 = 0.0;
    for (int d = 0; d < D; ++d) s2 += double(xp[d]) * double(xp[d]);
    double norm = std::sqrt(s2);
    if (trace) trace->min_row_norm = std::min(trace->min_row_norm, norm);
    double nrm = std::max(norm, kL2NormFloor);
    denom[size_t(n)] = T(nrm);
    floored[size_t(n)] = norm <= kL2NormFloor;
    T* yp = out.data() + size_t(n) * D;
    for (int d = 0; d < D; ++d) yp[d] = T(double(xp[d]) / nrm);
  }
  auto xc = x;
  Tensor<T> res = Tensor<T>::make_op(
      x.shape(), {x},
      [xc, denom, floored, N, D](typename Tensor<T>::Node& self) mutable {
        auto& dx = xc.grad();
        for (int n = 0; n < N; ++n) {
          const T* yp = self.value.data() + size_t(n) * D;
          const T* gp = self.grad.data() + size_t(n) * D;
          T* dxp = dx.data() + size_t(n) * D;
          T nrm = denom[size_t(n)];
          if (floored[size_t(n)]) {
            for (int d = 0; d < D; ++d) dxp[d] += gp[d] / nrm;
            continue;
          }
          double dot = 0.0;
          for (int d = 0; d < D; ++d) dot += double(yp[d]) * double(gp[d]);
          for (int d = 0; d < D; ++d) dxp[d] += T((double(gp[d]) - double(yp[d]) * dot) / double(nrm));
        }
      });
  res.values() = std::move(out);
  return res;
}

// Per-row Euclidean distance between two [N,D] tensors. The gradient at
// coincident rows is defined as zero.
template <typename T>
Tensor<T> euclidean_distance(const Tensor<T>& a, const Tensor<T>& b) {
  AVC_CHECK_ARG(a.ndim() == 2 && b.ndim() == 2 && a.shape() == b.shape(),
                "euclidean_distance: shapes " << shape_str(a.shape()) << " vs "
                                              << shape_str(b.shape()));
  const int N = int(a.dim(0)), D = int(a.dim(1));
  std::vector<T> out(size_t(N), T(0));
  SmoothnessTrace* trace = SmoothnessTrace::active();
  for (int n = 0; n < N; ++n) {
    const T* ap = a.data() + size_t(n) * D;
    const T* bp = b.data() + size_t(n) * D;
    double s2 = 0.0;
    for (int d = 0; d < D; ++d) {
      double diff = double(ap[d]) - double(bp[d]);
      s2 += diff * diff;
    }
    out[size_t(n)] = T(std::sqrt(s2));
    if (trace) trace->min_distance = std::min(trace->min_distance, std::sqrt(s2));
  }
  auto ac = a, bc = b;
  Tensor<T> res = Tensor<T>::make_op(
      Shape{N}, {a, b},
      [ac, bc, N, D](typename Tensor<T>::Node& self) mutable {
        auto& da = ac.grad();
        auto& db = bc.grad();
        for (int n = 0; n < N; ++n) {
          T d = self.value[size_t(n)];
          if (!(d > T(0))) continue;
          T g = self.grad[size_t(n)] / d;
          const T* ap = ac.data() + size_t(n) * D;
          const T* bp = bc.data() + size_t(n) * D;
          for (int k = 0; k < D; ++k) {
            T v = g * (ap[k] - bp[k]);
            da[size_t(n) * D + k] += v;
            db[size_t(n) * D + k] -= v;
          }
        }
      });
  res.values() = std::move(out);
  return res;
}

// Softmax cross-entropy averaged over the batch.
template <typename T>
Tensor<T> softmax_xent(const Tensor<T>& logits, const std::vector<int>& targets) {
  AVC_CHECK_ARG(logits.ndim() == 2, "softmax_xent expects [N,C] logits");
  const int N = int(logits.dim(0)), C = int(logits.dim(1));
  AVC_CHECK_ARG(int(targets.size()) == N, "softmax_xent: " << targets.size() << " targets for "
                                                           << N << " rows");
  for (int t : targets)
    AVC_CHECK_ARG(t >= 0 && t < C, "softmax_xent: target " << t << " outside [0, " << C << ")");
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const T* lp = logits.data() + size_t(n) * C;
    double m = double(lp[0]);
    for (int c = 1; c < C; ++c) m = std::max(m, double(lp[c]));
    double se = 0.0;
    for (int c = 0; c < C; ++c) se += std::exp(double(lp[c]) - m);
    loss += m + std::log(se) - double(lp[targets[size_t(n)]]);
  }
  auto lc = logits;
  Tensor<T> res = Tensor<T>::make_op(
      Shape{1}, {logits},
      [lc, targets, N, C](typename Tensor<T>::Node& self) mutable {
        T g = self.grad[0] / T(N);
        auto& dl = lc.grad();
        for (int n = 0; n < N; ++n) {
          const T* lp = lc.data() + size_t(n) * C;
          double m = double(lp[0]);
          for (int c = 1; c < C; ++c) m = std::max(m, double(lp[c]));
          double se = 0.0;
          for (int c = 0; c < C; ++c) se += std::exp(double(lp[c]) - m);
          for (int c = 0; c < C; ++c) {
            double p = std::exp(double(lp[c]) - m) / se;
            dl[size_t(n) * C + c] += g * T(p - (targets[size_t(n)] == c ? 1.0 : 0.0));
          }
        }
      });
  res.at(0) = T(loss / double(N));
  return res;
}

// Binary logistic loss on pre-sigmoid scores, averaged over the batch.
template <typename T>
Tensor<T> logistic_loss(const Tensor<T>& scores, const std::vector<int>& targets) {
  AVC_CHECK_ARG(scores.ndim() == 1, "logistic_loss expects [N] pre-sigmoid scores");
  const int N = int(scores.dim(0));
  AVC_CHECK_ARG(int(targets.size()) == N, "logistic_loss: " << targets.size() << " targets for "
                                                            << N << " scores");
  for (int t : targets)
    AVC_CHECK_ARG(t == 0 || t == 1, "logistic_loss: target " << t << " outside {0,1}");
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    double z = double(scores.at(n));
    double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += softplus - double(targets[size_t(n)]) * z;
  }
  auto sc = scores;
  Tensor<T> res = Tensor<T>::make_op(
      Shape{1}, {scores},
      [sc, targets, N](typename Tensor<T>::Node& self) mutable {
        T g = self.grad[0] / T(N);
        auto& ds = sc.grad();
        for (int n = 0; n < N; ++n) {
          double z = double(sc.at(n));
          double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          ds[size_t(n)] += g * T(s - double(targets[size_t(n)]));
        }
      });
  res.at(0) = T(loss / double(N));
  return res;
}

// Plain softmax probabilities of a [N,C] logits tensor; no graph is recorded.
template <typename T>
std::vector<T> softmax_values(const Tensor<T>& logits) {
  const int N = int(logits.dim(0)), C = int(logits.dim(1));
  std::vector<T> out(size_t(N) * C);
  for (int n = 0; n < N; ++n) {
    const T* lp = logits.data() + size_t(n) * C;
    double m = double(lp[0]);
    for (int c = 1; c < C; ++c) m = std::max(m, double(lp[c]));
    double se = 0.0;
    for (int c = 0; c < C; ++c) se += std::exp(double(lp[c]) - m);
    for (int c = 0; c < C; ++c) out[size_t(n) * C + c] = T(std::exp(double(lp[c]) - m) / se);
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  AVC_CHECK_ARG(shape_numel(shape) == x.numel(), "reshape: " << shape_str(x.shape()) << " -> "
                                                             << shape_str(shape));
  auto xc = x;
  Tensor<T> res = Tensor<T>::make_op(std::move(shape), {x},
                                     [xc](typename Tensor<T>::Node& self) mutable {
                                       xc.accumulate_grad(self.grad.data(),
                                                          int64_t(self.grad.size()));
                                     });
  res.values() = x.values();
  return res;
}

// Spatial crop [top, top+h) x [left, left+w) of an NCHW tensor.
template <typename T>
Tensor<T> slice_hw(const Tensor<T>& x, int top, int h, int left, int w) {
  AVC_CHECK_ARG(x.ndim() == 4, "slice_hw expects NCHW input");
  const int N = int(x.dim(0)), C = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
  AVC_CHECK_ARG(top >= 0 && left >= 0 && top + h <= H && left + w <= W,
                "slice_hw: crop " << h << "x" << w << "+" << top << "+" << left
                                  << " outside input " << H << "x" << W);
  std::vector<T> out(size_t(N) * C * h * w);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < h; ++i)
        std::memcpy(out.data() + ((size_t(n) * C + c) * h + i) * w,
                    x.data() + ((size_t(n) * C + c) * H + top + i) * W + left,
                    size_t(w) * sizeof(T));
  auto xc = x;
  Tensor<T> res = Tensor<T>::make_op(
      Shape{N, C, h, w}, {x},
      [xc, N, C, H, W, top, left, h, w](typename Tensor<T>::Node& self) mutable {
        auto& dx = xc.grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < h; ++i) {
              const T* gp = self.grad.data() + ((size_t(n) * C + c) * h + i) * w;
              T* dp = dx.data() + ((size_t(n) * C + c) * H + top + i) * W + left;
              for (int j = 0; j < w; ++j) dp[j] += gp[j];
            }
      });
  res.values() = std::move(out);
  return res;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  AVC_CHECK_ARG(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0),
                "concat_cols: incompatible shapes " << shape_str(a.shape()) << ", "
                                                    << shape_str(b.shape()));
  const int N = int(a.dim(0)), Da = int(a.dim(1)), Db = int(b.dim(1));
  std::vector<T> out(size_t(N) * (Da + Db));
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + size_t(n) * (Da + Db), a.data() + size_t(n) * Da,
                size_t(Da) * sizeof(T));
    std::memcpy(out.data() + size_t(n) * (Da + Db) + Da, b.data() + size_t(n) * Db,
                size_t(Db) * sizeof(T));
  }
  auto ac = a, bc = b;
  Tensor<T> res = Tensor<T>::make_op(
      Shape{N, Da + Db}, {a, b},
      [ac, bc, N, Da, Db](typename Tensor<T>::Node& self) mutable {
        auto& da = ac.grad();
        auto& db = bc.grad();
        for (int n = 0; n < N; ++n) {
          const T* gp = self.grad.data() + size_t(n) * (Da + Db);
          for (int d = 0; d < Da; ++d) da[size_t(n) * Da + d] += gp[d];
          for (int d = 0; d < Db; ++d) db[size_t(n) * Db + d] += gp[Da + d];
        }
      });
  res.values() = std::move(out);
  return res;
}

// Weighted sum reduction to a scalar; the projection vector is a constant.
template <typename T>
Tensor<T> projected_sum(const Tensor<T>& x, const std::vector<T>& proj) {
  AVC_CHECK_ARG(int64_t(proj.size()) == x.numel(),
                "projected_sum: projection length " << proj.size() << " != " << x.numel());
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += double(x.at(i)) * double(proj[size_t(i)]);
  auto xc = x;
  Tensor<T> res = Tensor<T>::make_op(Shape{1}, {x},
                                     [xc, proj](typename Tensor<T>::Node& self) mutable {
                                       T g = self.grad[0];
                                       auto& dx = xc.grad();
                                       for (size_t i = 0; i < proj.size(); ++i)
                                         dx[i] += g * proj[i];
                                     });
  res.at(0) = T(acc);
  return res;
}

// Per-cell scalar product of a [N,C,gh,gw] feature grid with a [N,C] vector,
// yielding a [N,1,gh,gw] similarity map.
template <typename T>
Tensor<T> grid_dot(const Tensor<T>& v, const Tensor<T>& a) {
  AVC_CHECK_ARG(v.ndim() == 4 && a.ndim() == 2 && v.dim(0) == a.dim(0) && v.dim(1) == a.dim(1),
                "grid_dot: incompatible shapes " << shape_str(v.shape()) << ", "
                                                 << shape_str(a.shape()));
  const int N = int(v.dim(0)), C = int(v.dim(1)), GH = int(v.dim(2)), GW = int(v.dim(3));
  const size_t plane = size_t(GH) * GW;
  std::vector<T> out(size_t(N) * plane, T(0));
  for (int n = 0; n < N; ++n) {
    T* sp = out.data() + size_t(n) * plane;
    for (int c = 0; c < C; ++c) {
      const T w = a.at(int64_t(n) * C + c);
      const T* vp = v.data() + (size_t(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) sp[i] += w * vp[i];
    }
  }
  auto vc = v, ac = a;
  Tensor<T> res = Tensor<T>::make_op(
      Shape{N, 1, GH, GW}, {v, a},
      [vc, ac, N, C, plane](typename Tensor<T>::Node& self) mutable {
        auto& dv = vc.grad();
        auto& da = ac.grad();
        for (int n = 0; n < N; ++n) {
          const T* gp = self.grad.data() + size_t(n) * plane;
          for (int c = 0; c < C; ++c) {
            const T w = ac.at(int64_t(n) * C + c);
            const T* vp = vc.data() + (size_t(n) * C + c) * plane;
            T* dvp = dv.data() + (size_t(n) * C + c) * plane;
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i) {
              dvp[i] += gp[i] * w;
              acc += double(gp[i]) * double(vp[i]);
            }
            da[size_t(n) * C + c] += T(acc);
          }
        }
      });
  res.values() = std::move(out);
  return res;
}

}  // namespace avc
