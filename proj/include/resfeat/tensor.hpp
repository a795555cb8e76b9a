#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "resfeat/error.hpp"

namespace resfeat {

// Dense rank-4 batch tensor in NCHW order, row-major innermost W.
// Carries data f, features u and residuals r throughout the library.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;

  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(checked_size(n_, c_, h_, w_), fill) {}

  static std::size_t checked_size(int n_, int c_, int h_, int w_) {
    if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
      throw ShapeError("Tensor4 dimensions must all be >= 1");
    return static_cast<std::size_t>(n_) * c_ * h_ * w_;
  }

  std::size_t size() const { return data.size(); }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }

  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  T at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  Tensor4& operator+=(const Tensor4& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }

  Tensor4& operator-=(const Tensor4& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }

  Tensor4& operator*=(T s) {
    for (auto& v : data) v *= s;
    return *this;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  void require_same_shape(const Tensor4& o, const char* what) const {
    if (!same_shape(o)) throw ShapeError(std::string("Tensor4 ") + what + ": shape mismatch");
  }
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& x) {
  return Tensor4<T>(x.n, x.c, x.h, x.w);
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  Tensor4<T> r = a;
  r += b;
  return r;
}

template <typename T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b) {
  Tensor4<T> r = a;
  r -= b;
  return r;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& a, T s) {
  Tensor4<T> r = a;
  r *= s;
  return r;
}

template <typename T>
T max_abs(const Tensor4<T>& a) {
  T m = 0;
  for (T v : a.data) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
T min_entry(const Tensor4<T>& a) {
  T m = a.data[0];
  for (T v : a.data) m = std::min(m, v);
  return m;
}

template <typename T>
T l2_norm(const Tensor4<T>& a) {
  T s = 0;
  for (T v : a.data) s += v * v;
  return std::sqrt(s);
}

template <typename T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  a.require_same_shape(b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace resfeat
