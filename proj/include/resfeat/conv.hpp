#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "resfeat/error.hpp"
#include "resfeat/params.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

inline int conv_out_dim(int in, int k, int pad, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds one sample into a (C*kh*kw) x (Ho*Wo) patch matrix, zero padding.
template <typename T>
void im2col(const T* xs, int C, int H, int W, int kh, int kw, int pad, int stride, int Ho, int Wo,
            T* col) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int ci = 0; ci < C; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* crow = col + ((static_cast<std::size_t>(ci) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* dst = crow + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = xs + (static_cast<std::size_t>(ci) * H + iy) * W;
          if (stride == 1) {
            int lo = std::clamp(pad - kx, 0, Wo);
            int hi = std::clamp(W + pad - kx, lo, Wo);
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) std::copy(src + lo + kx - pad, src + hi + kx - pad, dst + lo);
            std::fill(dst + hi, dst + Wo, T(0));
          } else {
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto one sample (adjoint of im2col).
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int pad, int stride, int Ho,
                int Wo, T* xs) {
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
  for (int ci = 0; ci < C; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* crow = col + ((static_cast<std::size_t>(ci) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const T* srow = crow + static_cast<std::size_t>(oy) * Wo;
          T* dst = xs + (static_cast<std::size_t>(ci) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dst[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Multichannel 2-D convolution with zero padding fixed at k/2 and stride 1 or 2.
// Linear in x for a fixed kernel (when the kernel carries no bias).
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const KernelParam<T>& k) {
  if (x.c != k.c_in)
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                     std::to_string(k.c_in));
  const int pad = k.pad();
  const int Ho = conv_out_dim(x.h, k.kh, pad, k.stride);
  const int Wo = conv_out_dim(x.w, k.kw, pad, k.stride);
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: output would have empty spatial dims");

  Tensor4<T> y(x.n, k.c_out, Ho, Wo);
  const int K = k.c_in * k.kh * k.kw;
  const std::size_t M = static_cast<std::size_t>(Ho) * Wo;

  thread_local std::vector<T> colbuf;
  colbuf.resize(static_cast<std::size_t>(K) * M);

  Eigen::Map<const detail::MatRM<T>> W(k.values.data(), k.c_out, K);
  for (int in = 0; in < x.n; ++in) {
    detail::im2col(x.data.data() + static_cast<std::size_t>(in) * x.c * x.h * x.w, x.c, x.h, x.w,
                   k.kh, k.kw, pad, k.stride, Ho, Wo, colbuf.data());
    Eigen::Map<const detail::MatRM<T>> col(colbuf.data(), K, static_cast<Eigen::Index>(M));
    Eigen::Map<detail::MatRM<T>> out(y.data.data() + static_cast<std::size_t>(in) * k.c_out * M,
                                     k.c_out, static_cast<Eigen::Index>(M));
    out.noalias() = W * col;
  }
  if (k.has_bias()) {
    for (int in = 0; in < x.n; ++in)
      for (int co = 0; co < k.c_out; ++co) {
        T* row = y.data.data() + (static_cast<std::size_t>(in) * k.c_out + co) * M;
        const T b = k.bias[co];
        for (std::size_t i = 0; i < M; ++i) row[i] += b;
      }
  }
  return y;
}

// Reverse-mode rules for conv2d. dx (when requested) is accumulated into a
// caller-zeroed tensor; kernel gradients accumulate into k.values_grad /
// k.bias_grad so that shared kernels receive the sum over all use sites.
template <typename T>
void conv2d_backward(const Tensor4<T>& x, KernelParam<T>& k, const Tensor4<T>& dy, Tensor4<T>* dx,
                     bool kernel_grad = true) {
  const int pad = k.pad();
  const int Ho = dy.h, Wo = dy.w;
  const int K = k.c_in * k.kh * k.kw;
  const std::size_t M = static_cast<std::size_t>(Ho) * Wo;

  thread_local std::vector<T> colbuf, dcolbuf;
  colbuf.resize(static_cast<std::size_t>(K) * M);
  if (dx) dcolbuf.resize(static_cast<std::size_t>(K) * M);

  Eigen::Map<const detail::MatRM<T>> W(k.values.data(), k.c_out, K);
  Eigen::Map<detail::MatRM<T>> GW(k.values_grad.data(), k.c_out, K);

  for (int in = 0; in < x.n; ++in) {
    Eigen::Map<const detail::MatRM<T>> gy(dy.data.data() + static_cast<std::size_t>(in) * k.c_out * M,
                                          k.c_out, static_cast<Eigen::Index>(M));
    if (kernel_grad || dx)
      detail::im2col(x.data.data() + static_cast<std::size_t>(in) * x.c * x.h * x.w, x.c, x.h, x.w,
                     k.kh, k.kw, pad, k.stride, Ho, Wo, colbuf.data());
    if (kernel_grad) {
      Eigen::Map<const detail::MatRM<T>> col(colbuf.data(), K, static_cast<Eigen::Index>(M));
      GW.noalias() += gy * col.transpose();
    }
    if (dx) {
      Eigen::Map<detail::MatRM<T>> dcol(dcolbuf.data(), K, static_cast<Eigen::Index>(M));
      dcol.noalias() = W.transpose() * gy;
      detail::col2im_add(dcolbuf.data(), x.c, x.h, x.w, k.kh, k.kw, pad, k.stride, Ho, Wo,
                         dx->data.data() + static_cast<std::size_t>(in) * x.c * x.h * x.w);
    }
  }
  if (kernel_grad && k.has_bias()) {
    for (int in = 0; in < x.n; ++in)
      for (int co = 0; co < k.c_out; ++co) {
        const T* row = dy.data.data() + (static_cast<std::size_t>(in) * k.c_out + co) * M;
        T s = 0;
        for (std::size_t i = 0; i < M; ++i) s += row[i];
        k.bias_grad[co] += s;
      }
  }
}

// Sub-sampling operator S: keeps the 1-based odd-indexed grid points,
// i.e. [S(r)]_{i,j} = r_{2i-1,2j-1}, which is the even 0-based positions.
template <typename T>
Tensor4<T> subsample(const Tensor4<T>& x) {
  const int Ho = (x.h + 1) / 2, Wo = (x.w + 1) / 2;
  Tensor4<T> y(x.n, x.c, Ho, Wo);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) y.at(in, ic, oy, ox) = x.at(in, ic, 2 * oy, 2 * ox);
  return y;
}

template <typename T>
void subsample_backward(const Tensor4<T>& dy, Tensor4<T>* dx) {
  for (int in = 0; in < dy.n; ++in)
    for (int ic = 0; ic < dy.c; ++ic)
      for (int oy = 0; oy < dy.h; ++oy)
        for (int ox = 0; ox < dy.w; ++ox) dx->at(in, ic, 2 * oy, 2 * ox) += dy.at(in, ic, oy, ox);
}

// Transpose of the conv operator realized as a kernel: spatial flip plus
// channel swap. As matrices, assemble(transpose_kernel(k)) == assemble(k)^T
// exactly, zero padding included (stride-1 kernels only).
template <typename T>
KernelParam<T> transpose_kernel(const KernelParam<T>& k, std::uint32_t id = 0,
                                const std::string& name = "transposed") {
  if (k.stride != 1) throw ConfigError("transpose_kernel: stride-1 kernels only");
  KernelParam<T> t(id, name, k.c_in, k.c_out, k.kh, 1);
  for (int co = 0; co < k.c_out; ++co)
    for (int ci = 0; ci < k.c_in; ++ci)
      for (int ky = 0; ky < k.kh; ++ky)
        for (int kx = 0; kx < k.kw; ++kx)
          t.at(ci, co, k.kh - 1 - ky, k.kw - 1 - kx) = k.at(co, ci, ky, kx);
  return t;
}

}  // namespace resfeat
