#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "resfeat/conv.hpp"
#include "resfeat/error.hpp"
#include "resfeat/params.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (auto& v : y.data)
    if (v < T(0)) v = T(0);
  return y;
}

// dL/dx += dy on the strictly positive support of x (subgradient 0 at 0).
template <typename T>
void relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy, Tensor4<T>* dx) {
  for (std::size_t i = 0; i < x.data.size(); ++i)
    if (x.data[i] > T(0)) dx->data[i] += dy.data[i];
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, 1, 1);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic) {
      const T* p = x.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.at(in, ic, 0, 0) = s / static_cast<T>(plane);
    }
  return y;
}

template <typename T>
void global_avg_pool_backward(const Tensor4<T>& dy, int h, int w, Tensor4<T>* dx) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T inv = T(1) / static_cast<T>(plane);
  for (int in = 0; in < dy.n; ++in)
    for (int ic = 0; ic < dy.c; ++ic) {
      const T g = dy.at(in, ic, 0, 0) * inv;
      T* p = dx->data.data() + (static_cast<std::size_t>(in) * dx->c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += g;
    }
}

// 3x3 stride-2 max pooling with pad 1 (the ImageNet stem's R_max). argmax
// indices are emitted for the backward route.
template <typename T>
Tensor4<T> max_pool3x3s2(const Tensor4<T>& x, std::vector<std::size_t>* argmax = nullptr) {
  const int Ho = conv_out_dim(x.h, 3, 1, 2), Wo = conv_out_dim(x.w, 3, 1, 2);
  Tensor4<T> y(x.n, x.c, Ho, Wo);
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t oi = 0;
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
              if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
              const std::size_t idx = x.index(in, ic, iy, ix);
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          y.data[oi] = best;
          if (argmax) (*argmax)[oi] = best_idx;
        }
  return y;
}

template <typename T>
void max_pool3x3s2_backward(const Tensor4<T>& dy, const std::vector<std::size_t>& argmax,
                            Tensor4<T>* dx) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx->data[argmax[i]] += dy.data[i];
}

// --- batch normalization ------------------------------------------------

// Training-mode forward: normalizes with biased batch statistics over
// (N, H, W) per channel and updates the running estimates (unbiased
// variance, PyTorch convention). Optionally emits x_hat and the inverse
// standard deviations for the backward pass.
template <typename T>
Tensor4<T> batchnorm_train(const Tensor4<T>& x, BatchNormState<T>& s, Tensor4<T>* xhat_out = nullptr,
                           std::vector<T>* invstd_out = nullptr) {
  if (x.c != s.channels) throw ShapeError("batchnorm: channel mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  const std::size_t m = static_cast<std::size_t>(x.n) * plane;
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  if (xhat_out) *xhat_out = Tensor4<T>(x.n, x.c, x.h, x.w);
  if (invstd_out) invstd_out->assign(x.c, T(0));
  for (int ic = 0; ic < x.c; ++ic) {
    T mean = 0;
    for (int in = 0; in < x.n; ++in) {
      const T* p = x.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    }
    mean /= static_cast<T>(m);
    T var = 0;
    for (int in = 0; in < x.n; ++in) {
      const T* p = x.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = p[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<T>(m);
    const T invstd = T(1) / std::sqrt(var + s.eps);
    const T g = s.gamma[ic], b = s.beta[ic];
    for (int in = 0; in < x.n; ++in) {
      const T* p = x.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      T* q = y.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      T* xh = xhat_out ? xhat_out->data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane
                       : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (p[i] - mean) * invstd;
        if (xh) xh[i] = h;
        q[i] = g * h + b;
      }
    }
    if (invstd_out) (*invstd_out)[ic] = invstd;
    const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
    s.running_mean[ic] = (T(1) - s.momentum) * s.running_mean[ic] + s.momentum * mean;
    s.running_var[ic] = (T(1) - s.momentum) * s.running_var[ic] + s.momentum * unbiased;
  }
  return y;
}

template <typename T>
Tensor4<T> batchnorm_eval(const Tensor4<T>& x, const BatchNormState<T>& s) {
  if (x.c != s.channels) throw ShapeError("batchnorm: channel mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  for (int ic = 0; ic < x.c; ++ic) {
    const T invstd = T(1) / std::sqrt(s.running_var[ic] + s.eps);
    const T g = s.gamma[ic] * invstd;
    const T b = s.beta[ic] - s.running_mean[ic] * g;
    for (int in = 0; in < x.n; ++in) {
      const T* p = x.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      T* q = y.data.data() + (static_cast<std::size_t>(in) * x.c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = g * p[i] + b;
    }
  }
  return y;
}

template <typename T>
Tensor4<T> batchnorm(const Tensor4<T>& x, BatchNormState<T>& s) {
  return s.train_mode ? batchnorm_train(x, s) : batchnorm_eval(x, s);
}

// Training-mode backward, batch statistics treated as functions of x.
template <typename T>
void batchnorm_train_backward(const Tensor4<T>& xhat, const std::vector<T>& invstd,
                              BatchNormState<T>& s, const Tensor4<T>& dy, Tensor4<T>* dx) {
  const std::size_t plane = static_cast<std::size_t>(xhat.h) * xhat.w;
  const std::size_t m = static_cast<std::size_t>(xhat.n) * plane;
  for (int ic = 0; ic < xhat.c; ++ic) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int in = 0; in < xhat.n; ++in) {
      const std::size_t off = (static_cast<std::size_t>(in) * xhat.c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy.data[off + i];
        sum_dy_xhat += dy.data[off + i] * xhat.data[off + i];
      }
    }
    s.beta_grad[ic] += sum_dy;
    s.gamma_grad[ic] += sum_dy_xhat;
    const T g_invstd = s.gamma[ic] * invstd[ic];
    const T mean_dy = sum_dy / static_cast<T>(m);
    const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(m);
    for (int in = 0; in < xhat.n; ++in) {
      const std::size_t off = (static_cast<std::size_t>(in) * xhat.c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        dx->data[off + i] +=
            g_invstd * (dy.data[off + i] - mean_dy - xhat.data[off + i] * mean_dy_xhat);
    }
  }
}

// Eval-mode backward: running statistics are constants.
template <typename T>
void batchnorm_eval_backward(const Tensor4<T>& x, BatchNormState<T>& s, const Tensor4<T>& dy,
                             Tensor4<T>* dx) {
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int ic = 0; ic < x.c; ++ic) {
    const T invstd = T(1) / std::sqrt(s.running_var[ic] + s.eps);
    const T g_invstd = s.gamma[ic] * invstd;
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int in = 0; in < x.n; ++in) {
      const std::size_t off = (static_cast<std::size_t>(in) * x.c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy.data[off + i];
        sum_dy_xhat += dy.data[off + i] * (x.data[off + i] - s.running_mean[ic]) * invstd;
        dx->data[off + i] += g_invstd * dy.data[off + i];
      }
    }
    s.beta_grad[ic] += sum_dy;
    s.gamma_grad[ic] += sum_dy_xhat;
  }
}

// --- dense head -----------------------------------------------------------

// y = W x + b over features flattened per sample; scores come back as an
// (N, out_dim, 1, 1) tensor so everything stays in Tensor4 land.
template <typename T>
Tensor4<T> linear(const Tensor4<T>& x, const DenseParam<T>& d) {
  const int in_dim = x.c * x.h * x.w;
  if (in_dim != d.in_dim)
    throw ShapeError("linear: flattened feature length " + std::to_string(in_dim) +
                     " != W input dim " + std::to_string(d.in_dim));
  Tensor4<T> y(x.n, d.out_dim, 1, 1);
  Eigen::Map<const detail::MatRM<T>> X(x.data.data(), x.n, in_dim);
  Eigen::Map<const detail::MatRM<T>> W(d.weights.data(), d.out_dim, d.in_dim);
  Eigen::Map<detail::MatRM<T>> Y(y.data.data(), x.n, d.out_dim);
  Y.noalias() = X * W.transpose();
  for (int in = 0; in < x.n; ++in)
    for (int o = 0; o < d.out_dim; ++o) y.data[static_cast<std::size_t>(in) * d.out_dim + o] += d.bias[o];
  return y;
}

template <typename T>
void linear_backward(const Tensor4<T>& x, DenseParam<T>& d, const Tensor4<T>& dy, Tensor4<T>* dx) {
  const int in_dim = x.c * x.h * x.w;
  Eigen::Map<const detail::MatRM<T>> X(x.data.data(), x.n, in_dim);
  Eigen::Map<const detail::MatRM<T>> W(d.weights.data(), d.out_dim, d.in_dim);
  Eigen::Map<const detail::MatRM<T>> GY(dy.data.data(), x.n, d.out_dim);
  Eigen::Map<detail::MatRM<T>> GW(d.weights_grad.data(), d.out_dim, d.in_dim);
  GW.noalias() += GY.transpose() * X;
  for (int in = 0; in < x.n; ++in)
    for (int o = 0; o < d.out_dim; ++o)
      d.bias_grad[o] += dy.data[static_cast<std::size_t>(in) * d.out_dim + o];
  if (dx) {
    Eigen::Map<detail::MatRM<T>> GX(dx->data.data(), x.n, in_dim);
    GX.noalias() += GY * W;
  }
}

}  // namespace resfeat
