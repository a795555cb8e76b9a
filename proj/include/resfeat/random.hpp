#pragma once

#include <cmath>
#include <random>

#include "resfeat/params.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

template <typename T, typename Rng>
void fill_uniform(Tensor4<T>& x, Rng& rng, T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<T> dist(lo, hi);
  for (auto& v : x.data) v = dist(rng);
}

template <typename T, typename Rng>
void fill_uniform(KernelParam<T>& k, Rng& rng, T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<T> dist(lo, hi);
  for (auto& v : k.values) v = dist(rng);
}

template <typename T, typename Rng>
Tensor4<T> random_tensor(int n, int c, int h, int w, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor4<T> x(n, c, h, w);
  fill_uniform(x, rng, lo, hi);
  return x;
}

// K* acting as the identity map: a center-tap kernel on the channel diagonal.
template <typename T>
KernelParam<T> identity_kernel(int channels, int k = 3) {
  KernelParam<T> p(0, "identity", channels, channels, k, 1);
  for (int c = 0; c < channels; ++c) p.at(c, c, k / 2, k / 2) = T(1);
  return p;
}

// Identity plus a small random perturbation; diagonally dominant (hence
// invertible) as a matrix for scale < 1/(9*channels).
template <typename T, typename Rng>
KernelParam<T> near_identity_kernel(int channels, T scale, Rng& rng, int k = 3) {
  KernelParam<T> p = identity_kernel<T>(channels, k);
  std::uniform_real_distribution<T> dist(-scale, scale);
  for (auto& v : p.values) v += dist(rng);
  p.name = "near-identity";
  return p;
}

// Fan-in scaled normal initialization for convolution and dense weights.
template <typename T, typename Rng>
void he_init(KernelParam<T>& k, Rng& rng) {
  const T fan_in = static_cast<T>(k.c_in * k.kh * k.kw);
  std::normal_distribution<T> dist(T(0), std::sqrt(T(2) / fan_in));
  for (auto& v : k.values) v = dist(rng);
  for (auto& b : k.bias) b = T(0);
}

template <typename T, typename Rng>
void he_init(DenseParam<T>& d, Rng& rng) {
  std::normal_distribution<T> dist(T(0), std::sqrt(T(2) / static_cast<T>(d.in_dim)));
  for (auto& v : d.weights) v = dist(rng);
  for (auto& b : d.bias) b = T(0);
}

}  // namespace resfeat
