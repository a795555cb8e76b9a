#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "resfeat/conv.hpp"
#include "resfeat/nn_ops.hpp"
#include "resfeat/random.hpp"

using namespace resfeat;

namespace {

// Independent quadruple-loop convolution oracle, written against the operator
// definition only. The library path (im2col + GEMM) is checked against this.
template <typename T>
Tensor4<T> reference_conv(const Tensor4<T>& x, const KernelParam<T>& k) {
  const int pad = k.kh / 2;
  const int Ho = (x.h + 2 * pad - k.kh) / k.stride + 1;
  const int Wo = (x.w + 2 * pad - k.kw) / k.stride + 1;
  Tensor4<T> y(x.n, k.c_out, Ho, Wo);
  for (int in = 0; in < x.n; ++in)
    for (int co = 0; co < k.c_out; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = k.has_bias() ? k.bias[co] : T(0);
          for (int ci = 0; ci < k.c_in; ++ci)
            for (int ky = 0; ky < k.kh; ++ky)
              for (int kx = 0; kx < k.kw; ++kx) {
                const int iy = oy * k.stride + ky - pad;
                const int ix = ox * k.stride + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += k.at(co, ci, ky, kx) * x.at(in, ci, iy, ix);
              }
          y.at(in, co, oy, ox) = acc;
        }
  return y;
}

Tensor4<double> iota_tensor(int n, int c, int h, int w) {
  Tensor4<double> x(n, c, h, w);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<double>(i + 1);
  return x;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>(2, 3, 5, 7, rng);
  auto k = identity_kernel<double>(3);
  auto y = conv2d(x, k);
  REQUIRE(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d zero kernel gives a zero output of the right shape") {
  std::mt19937_64 rng(4);
  auto x = random_tensor<float>(1, 2, 6, 6, rng);
  KernelParam<float> k(0, "z", 4, 2, 3, 2);
  auto y = conv2d(x, k);
  REQUIRE(y.c == 4);
  REQUIRE(y.h == 3);
  REQUIRE(y.w == 3);
  REQUIRE(max_abs(y) == 0.0f);
}

TEST_CASE("conv2d all-ones 3x3 on the 1..9 grid") {
  auto x = iota_tensor(1, 1, 3, 3);  // [[1,2,3],[4,5,6],[7,8,9]]
  KernelParam<double> k(0, "ones", 1, 1, 3, 1);
  for (auto& v : k.values) v = 1.0;
  auto y = conv2d(x, k);
  auto ref = reference_conv(x, k);
  REQUIRE(max_abs_diff(y, ref) == 0.0);
  REQUIRE(y.at(0, 0, 1, 1) == 45.0);  // sum of all entries
  REQUIRE(y.at(0, 0, 0, 0) == 12.0);  // 1+2+4+5
}

TEST_CASE("conv2d matches the quadruple-loop oracle across shapes") {
  std::mt19937_64 rng(11);
  struct Case {
    int n, ci, h, w, co, k, stride;
    bool bias;
  };
  for (const Case c : {Case{2, 3, 8, 9, 4, 3, 1, false}, Case{1, 2, 7, 7, 3, 3, 2, true},
                       Case{3, 4, 5, 5, 2, 1, 1, true}, Case{1, 1, 6, 8, 5, 1, 2, false},
                       Case{2, 3, 9, 9, 4, 7, 2, false}}) {
    auto x = random_tensor<double>(c.n, c.ci, c.h, c.w, rng);
    KernelParam<double> k(0, "k", c.co, c.ci, c.k, c.stride, c.bias);
    fill_uniform(k, rng);
    if (c.bias) {
      std::uniform_real_distribution<double> bd(-1, 1);
      for (auto& b : k.bias) b = bd(rng);
    }
    auto y = conv2d(x, k);
    auto ref = reference_conv(x, k);
    INFO("case k=" << c.k << " stride=" << c.stride);
    REQUIRE(max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("conv2d is linear in its input (64-bit, no bias)") {
  std::mt19937_64 rng(5);
  KernelParam<double> k(0, "k", 3, 2, 3, 1);
  fill_uniform(k, rng);
  auto x1 = random_tensor<double>(1, 2, 6, 6, rng);
  auto x2 = random_tensor<double>(1, 2, 6, 6, rng);
  const double a = 0.37, b = -1.25;
  Tensor4<double> mix = add(scale(x1, a), scale(x2, b));
  Tensor4<double> lhs = conv2d(mix, k);
  Tensor4<double> rhs = add(scale(conv2d(x1, k), a), scale(conv2d(x2, k), b));
  REQUIRE(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("conv2d rejects mismatched channels and bad configs") {
  std::mt19937_64 rng(6);
  auto x = random_tensor<float>(1, 3, 4, 4, rng);
  KernelParam<float> k(0, "k", 2, 2, 3, 1);
  REQUIRE_THROWS_AS(conv2d(x, k), ShapeError);
  REQUIRE_THROWS_AS(KernelParam<float>(0, "k", 2, 2, 5, 1), ConfigError);
  REQUIRE_THROWS_AS(KernelParam<float>(0, "k", 2, 2, 3, 3), ConfigError);
}

TEST_CASE("relu definition, fixed point, idempotence") {
  Tensor4<double> x(1, 1, 1, 3);
  x.data = {-1, 0, 2};
  auto y = relu(x);
  REQUIRE(y.data == std::vector<double>{0, 0, 2});

  std::mt19937_64 rng(7);
  auto nn = random_tensor<double>(1, 2, 4, 4, rng, 0.0, 5.0);
  REQUIRE(max_abs_diff(relu(nn), nn) == 0.0);

  auto r = random_tensor<double>(2, 2, 5, 5, rng);
  REQUIRE(max_abs_diff(relu(relu(r)), relu(r)) == 0.0);
}

TEST_CASE("subsample keeps the odd-indexed grid (1-based)") {
  auto x = iota_tensor(1, 1, 4, 4);  // 1..16 row-major
  auto y = subsample(x);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  REQUIRE(y.data == std::vector<double>{1, 3, 9, 11});

  // One pixel at 1-based (2,2) vanishes under S.
  Tensor4<double> r(1, 1, 4, 4);
  r.at(0, 0, 1, 1) = 1.0;
  REQUIRE(max_abs(subsample(r)) == 0.0);
}

TEST_CASE("stride-2 convolution equals subsample after stride-1 (exact)") {
  std::mt19937_64 rng(8);
  for (int size : {7, 9, 11, 8}) {  // odd sizes per the identity, even also holds
    auto x = random_tensor<double>(1, 2, size, size, rng);
    KernelParam<double> k1(0, "k", 3, 2, 3, 1);
    fill_uniform(k1, rng);
    KernelParam<double> k2 = k1;
    k2.stride = 2;
    auto direct = conv2d(x, k2);
    auto two_step = subsample(conv2d(x, k1));
    REQUIRE(max_abs_diff(direct, two_step) == 0.0);

    // Same identity in 32-bit.
    Tensor4<float> xf(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.data.size(); ++i) xf.data[i] = static_cast<float>(x.data[i]);
    KernelParam<float> k1f(0, "k", 3, 2, 3, 1), k2f(0, "k", 3, 2, 3, 2);
    for (std::size_t i = 0; i < k1.values.size(); ++i) {
      k1f.values[i] = static_cast<float>(k1.values[i]);
      k2f.values[i] = k1f.values[i];
    }
    REQUIRE(max_abs_diff(conv2d(xf, k2f), subsample(conv2d(xf, k1f))) == 0.0f);
  }
}

TEST_CASE("global average pool") {
  Tensor4<double> c(2, 3, 4, 4, 2.5);
  auto y = global_avg_pool(c);
  for (double v : y.data) REQUIRE(v == 2.5);

  Tensor4<double> q(1, 1, 2, 2);
  q.data = {1, 3, 5, 7};
  REQUIRE(global_avg_pool(q).data[0] == 4.0);

  std::mt19937_64 rng(9);
  auto x = random_tensor<double>(1, 2, 5, 5, rng);
  REQUIRE(max_abs_diff(global_avg_pool(scale(x, 3.0)), scale(global_avg_pool(x), 3.0)) < 1e-14);
}

TEST_CASE("batchnorm eval with identity parameters is (nearly) the identity") {
  std::mt19937_64 rng(10);
  auto x = random_tensor<double>(2, 3, 4, 4, rng);
  BatchNormState<double> s("bn", 3);
  auto y = batchnorm_eval(x, s);
  REQUIRE(max_abs_diff(x, y) < 1e-5);  // only the eps in 1/sqrt(1+eps)
}

TEST_CASE("batchnorm train normalizes per channel and updates running stats") {
  std::mt19937_64 rng(12);
  auto x = random_tensor<double>(4, 2, 6, 6, rng, -3.0, 7.0);
  BatchNormState<double> s("bn", 2);
  s.train_mode = true;
  auto y = batchnorm_train(x, s);
  const std::size_t plane = 36;
  for (int ch = 0; ch < 2; ++ch) {
    double mean = 0, var = 0;
    for (int in = 0; in < 4; ++in)
      for (std::size_t i = 0; i < plane; ++i) mean += y.data[(in * 2 + ch) * plane + i];
    mean /= 4 * plane;
    for (int in = 0; in < 4; ++in)
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = y.data[(in * 2 + ch) * plane + i] - mean;
        var += d * d;
      }
    var /= 4 * plane;
    REQUIRE(std::abs(mean) < 1e-12);
    REQUIRE(std::abs(var - 1.0) < 1e-3);  // eps shrinks the variance slightly
    REQUIRE(s.running_mean[ch] != 0.0);
  }
}

TEST_CASE("batchnorm train-then-eval converges on a fixed batch") {
  std::mt19937_64 rng(13);
  auto x = random_tensor<double>(8, 2, 5, 5, rng, -2.0, 2.0);
  BatchNormState<double> s("bn", 2);
  s.train_mode = true;
  Tensor4<double> train_out;
  for (int i = 0; i < 200; ++i) train_out = batchnorm_train(x, s);
  s.train_mode = false;
  auto eval_out = batchnorm_eval(x, s);
  // Unbiased running variance vs biased batch variance keeps a tiny gap.
  REQUIRE(max_abs_diff(train_out, eval_out) < 5e-3);
}

TEST_CASE("batchnorm rejects channel mismatch") {
  Tensor4<double> x(1, 3, 2, 2, 1.0);
  BatchNormState<double> s("bn", 2);
  s.train_mode = true;
  REQUIRE_THROWS_AS(batchnorm_train(x, s), ShapeError);
  REQUIRE_THROWS_AS(batchnorm_eval(x, s), ShapeError);
}

TEST_CASE("linear head") {
  DenseParam<double> d("head", 3, 3);
  for (int i = 0; i < 3; ++i) d.weights[i * 3 + i] = 1.0;  // identity
  Tensor4<double> x(1, 3, 1, 1);
  x.data = {4, -2, 7};
  auto y = linear(x, d);
  REQUIRE(y.data == std::vector<double>{4, -2, 7});

  Tensor4<double> z(1, 3, 1, 1);
  d.bias = {1, 2, 3};
  REQUIRE(linear(z, d).data == std::vector<double>{1, 2, 3});

  // Random 3x2 case against an explicit dot-product oracle.
  DenseParam<double> w("head", 3, 2);
  w.weights = {1.5, -2.0, 0.25, 4.0, -1.0, 0.5};
  w.bias = {0.1, -0.2, 0.3};
  Tensor4<double> v(1, 2, 1, 1);
  v.data = {2.0, -1.0};
  auto out = linear(v, w);
  REQUIRE(out.data[0] == Catch::Approx(1.5 * 2 + -2.0 * -1 + 0.1));
  REQUIRE(out.data[1] == Catch::Approx(0.25 * 2 + 4.0 * -1 + -0.2));
  REQUIRE(out.data[2] == Catch::Approx(-1.0 * 2 + 0.5 * -1 + 0.3));

  Tensor4<double> bad(1, 3, 2, 1);
  REQUIRE_THROWS_AS(linear(bad, w), ShapeError);
}

TEST_CASE("transpose kernel is the matrix transpose (exact, padding included)") {
  std::mt19937_64 rng(14);
  KernelParam<double> k(0, "k", 3, 2, 3, 1);
  fill_uniform(k, rng);
  auto kt = transpose_kernel(k);
  // (A^T y, x) == (y, A x) for all x, y.
  for (int t = 0; t < 20; ++t) {
    auto x = random_tensor<double>(1, 2, 5, 5, rng);
    auto y = random_tensor<double>(1, 3, 5, 5, rng);
    auto Ax = conv2d(x, k);
    auto Aty = conv2d(y, kt);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) lhs += y.data[i] * Ax.data[i];
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * Aty.data[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("max pool 3x3 stride 2") {
  auto x = iota_tensor(1, 1, 4, 4);
  auto y = max_pool3x3s2(x);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  REQUIRE(y.at(0, 0, 0, 0) == 6.0);   // window rows 0..1, cols 0..1 of 1..16
  REQUIRE(y.at(0, 0, 1, 1) == 16.0);  // bottom right
}
