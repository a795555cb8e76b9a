#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "resfeat/autodiff.hpp"
#include "resfeat/exec.hpp"
#include "resfeat/random.hpp"

namespace resfeat {

// Central finite-difference verification of the reverse-mode rules, always
// in 64-bit. A graph is any callable templated over the execution context;
// the same definition is run once on the tape for analytic gradients and
// 2x-per-scalar numerically for the reference.

struct GradCheckResult {
  std::string what;
  double max_rel_err = 0;
  std::size_t checked = 0;
  bool pass = false;
};

namespace gradcheck_detail {

inline double rel_err(double ad, double fd) {
  const double denom = std::max({std::abs(ad), std::abs(fd), 1e-6});
  return std::abs(ad - fd) / denom;
}

}  // namespace gradcheck_detail

// Checks d(sum(weights * graph(x)))/d(theta) against central differences for
// every scalar theta: the input tensor plus each (buffer, gradient) pair.
// A fixed random output weighting makes the scalar loss sensitive everywhere.
//
// graph: (Exec&, Value) -> Value, generic over the exec context.
template <typename Graph>
GradCheckResult gradcheck_params(
    const std::string& what, Graph&& graph, Tensor4<double> x,
    const std::vector<std::pair<std::vector<double>*, const std::vector<double>*>>& param_pairs,
    double step = 1e-5, double tol = 1e-4, std::uint64_t seed = 17) {
  GradCheckResult res;
  res.what = what;

  NumericExec<double> num;
  Tensor4<double> out0 = graph(num, x);
  std::mt19937_64 rng(seed);
  Tensor4<double> w = random_tensor<double>(out0.n, out0.c, out0.h, out0.w, rng, -1.0, 1.0);

  auto loss_of = [&](const Tensor4<double>& out) {
    double s = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * w.data[i];
    return s;
  };

  Tape<double> tape;
  TapeExec<double> ex(tape);
  auto xin = tape.leaf(x);
  auto out = graph(ex, xin);
  tape.backward(out, w);
  // Snapshot analytic gradients before the numeric re-evaluations.
  const std::vector<double> xgrad = xin.g->data;
  std::vector<std::vector<double>> pgrads;
  for (const auto& [buf, grad] : param_pairs) pgrads.push_back(*grad);

  auto numeric_loss = [&]() {
    NumericExec<double> n2;
    return loss_of(graph(n2, x));
  };

  auto check_buffer = [&](std::vector<double>& buf, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double keep = buf[i];
      buf[i] = keep + step;
      const double up = numeric_loss();
      buf[i] = keep - step;
      const double down = numeric_loss();
      buf[i] = keep;
      const double fd = (up - down) / (2 * step);
      res.max_rel_err = std::max(res.max_rel_err, gradcheck_detail::rel_err(grad[i], fd));
      ++res.checked;
    }
  };

  check_buffer(x.data, xgrad);
  for (std::size_t pi = 0; pi < param_pairs.size(); ++pi)
    check_buffer(*param_pairs[pi].first, pgrads[pi]);
  res.pass = res.max_rel_err < tol;
  return res;
}

// A randomized composite graph of bounded depth over the operator set,
// including a residual add and a deliberately reused (shared) kernel.
struct CompositeSpec {
  std::uint64_t seed = 1;
  int depth = 6;
  int channels = 2;
  int grid = 6;
  bool use_bn = true;
};

struct CompositeGraph {
  std::vector<int> ops;  // tokens, interpreted by run()
  std::vector<KernelParam<double>> kernels;
  std::vector<BatchNormState<double>> bns;
  DenseParam<double> head;
  bool reuse_kernel = false;

  template <class Ex>
  typename Ex::Value run(Ex& ex, const typename Ex::Value& x0) {
    auto x = x0;
    std::size_t ki = 0, bi = 0;
    std::optional<typename Ex::Value> saved;
    for (int op : ops) {
      switch (op) {
        case 0: x = ex.conv(kernels[ki++], x); break;
        case 1: x = ex.relu(x); break;
        case 2: x = ex.bn(&bns[bi++], x); break;
        case 3: x = ex.subsample(x); break;
        case 4: saved = x; break;                    // open a residual branch
        case 5:
          if (saved) {
            x = ex.add(x, *saved);
            saved.reset();
          }
          break;
        case 6: x = ex.conv(kernels[0], x); break;   // reuse the first kernel
        default: break;
      }
    }
    return ex.linear(head, ex.global_avg_pool(x));
  }
};

inline CompositeGraph make_composite(const CompositeSpec& cs) {
  std::mt19937_64 rng(cs.seed);
  CompositeGraph g;
  const int c = cs.channels;
  // Keep activations away from the ReLU kink: modest kernel magnitudes and a
  // bias-free structure give smooth losses at step 1e-5.
  auto add_kernel = [&](int k) {
    KernelParam<double> kp(0, "k" + std::to_string(g.kernels.size()), c, c, k, 1);
    fill_uniform(kp, rng, -0.6, 0.6);
    g.kernels.push_back(std::move(kp));
  };

  std::uniform_int_distribution<int> pick(0, 5);
  bool branch_open = false;
  int convs = 0;
  for (int d = 0; d < cs.depth; ++d) {
    int op = pick(rng);
    if (op == 2 && !cs.use_bn) op = 1;
    if (op == 4 && branch_open) op = 1;
    if (op == 5 && !branch_open) op = 0;
    if (op == 3) op = 0;  // subsample shrinks too fast for deep chains; checked standalone
    switch (op) {
      case 0:
        add_kernel(d % 2 ? 1 : 3);
        g.ops.push_back(0);
        ++convs;
        break;
      case 1: g.ops.push_back(1); break;
      case 2: {
        BatchNormState<double> bn("bn" + std::to_string(g.bns.size()), c);
        bn.train_mode = true;
        std::uniform_real_distribution<double> gdist(0.5, 1.5);
        for (auto& v : bn.gamma) v = gdist(rng);
        g.bns.push_back(std::move(bn));
        g.ops.push_back(2);
        break;
      }
      case 4:
        g.ops.push_back(4);
        branch_open = true;
        break;
      case 5:
        g.ops.push_back(5);
        branch_open = false;
        break;
      default: break;
    }
  }
  if (branch_open) g.ops.push_back(5);
  if (convs == 0) {
    add_kernel(3);
    g.ops.push_back(0);
    ++convs;
  }
  if (convs >= 1 && cs.seed % 2 == 0) {
    g.ops.push_back(6);  // shared-kernel reuse site
    g.reuse_kernel = true;
  }
  g.head = DenseParam<double>("head", 3, c);
  std::mt19937_64 hrng(cs.seed ^ 0xabcdef);
  he_init(g.head, hrng);
  return g;
}

// Full operator sweep plus randomized composite graphs; `emit` receives one
// result per check. Returns overall pass at the given tolerance.
struct GradSuiteSummary {
  bool pass = true;
  double max_rel_err = 0;
  int checks = 0;
};

inline GradCheckResult gradcheck_composite(const CompositeSpec& cs, double step = 1e-5,
                                           double tol = 1e-4) {
  CompositeGraph g = make_composite(cs);
  std::mt19937_64 rng(cs.seed ^ 0x5eed);
  Tensor4<double> x = random_tensor<double>(2, cs.channels, cs.grid, cs.grid, rng, -1.0, 1.0);

  std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> pairs;
  for (auto& k : g.kernels) pairs.push_back({&k.values, &k.values_grad});
  for (auto& b : g.bns) {
    pairs.push_back({&b.gamma, &b.gamma_grad});
    pairs.push_back({&b.beta, &b.beta_grad});
  }
  pairs.push_back({&g.head.weights, &g.head.weights_grad});
  pairs.push_back({&g.head.bias, &g.head.bias_grad});

  return gradcheck_params(
      "composite(seed=" + std::to_string(cs.seed) + ",depth=" + std::to_string(cs.depth) + ")",
      [&g](auto& ex, const auto& x0) { return g.run(ex, x0); }, x, pairs, step, tol,
      cs.seed ^ 0x77);
}

template <typename Emit>
GradSuiteSummary run_gradcheck_suite(int composite_count, int depth, double step, double tol,
                                     std::uint64_t seed, Emit&& emit) {
  GradSuiteSummary sum;
  auto note = [&](const GradCheckResult& r) {
    sum.pass = sum.pass && r.pass;
    sum.max_rel_err = std::max(sum.max_rel_err, r.max_rel_err);
    ++sum.checks;
    emit(r);
  };

  std::mt19937_64 rng(seed);
  {
    KernelParam<double> k(0, "k", 3, 2, 3, 1, /*with_bias=*/true);
    fill_uniform(k, rng, -0.7, 0.7);
    std::uniform_real_distribution<double> bd(-0.3, 0.3);
    for (auto& b : k.bias) b = bd(rng);
    auto x = random_tensor<double>(2, 2, 5, 5, rng);
    note(gradcheck_params(
        "conv3x3+bias", [&k](auto& ex, const auto& v) { return ex.conv(k, v); }, x,
        {{&k.values, &k.values_grad}, {&k.bias, &k.bias_grad}}, step, tol));
  }
  {
    KernelParam<double> k(0, "k", 2, 3, 1, 1);
    fill_uniform(k, rng);
    auto x = random_tensor<double>(2, 3, 4, 4, rng);
    note(gradcheck_params(
        "conv1x1", [&k](auto& ex, const auto& v) { return ex.conv(k, v); }, x,
        {{&k.values, &k.values_grad}}, step, tol));
  }
  {
    KernelParam<double> k(0, "k", 2, 2, 3, 2);
    fill_uniform(k, rng);
    auto x = random_tensor<double>(1, 2, 7, 7, rng);
    note(gradcheck_params(
        "conv3x3/s2", [&k](auto& ex, const auto& v) { return ex.conv(k, v); }, x,
        {{&k.values, &k.values_grad}}, step, tol));
  }
  {
    auto x = random_tensor<double>(2, 2, 4, 4, rng);
    for (auto& v : x.data) v += (v >= 0 ? 0.05 : -0.05);  // stay off the kink
    note(gradcheck_params("relu", [](auto& ex, const auto& v) { return ex.relu(v); }, x, {}, step,
                          tol));
  }
  {
    auto x = random_tensor<double>(1, 2, 6, 6, rng);
    note(gradcheck_params(
        "subsample", [](auto& ex, const auto& v) { return ex.subsample(v); }, x, {}, step, tol));
  }
  {
    auto x = random_tensor<double>(2, 3, 5, 5, rng);
    note(gradcheck_params(
        "global_avg_pool", [](auto& ex, const auto& v) { return ex.global_avg_pool(v); }, x, {},
        step, tol));
  }
  {
    auto x = random_tensor<double>(1, 2, 7, 7, rng);
    note(gradcheck_params(
        "max_pool3x3s2", [](auto& ex, const auto& v) { return ex.max_pool(v); }, x, {}, step,
        tol));
  }
  {
    BatchNormState<double> bn("bn", 3);
    bn.train_mode = true;
    std::uniform_real_distribution<double> gd(0.5, 1.5);
    for (auto& v : bn.gamma) v = gd(rng);
    for (auto& v : bn.beta) v = gd(rng) - 1.0;
    auto x = random_tensor<double>(3, 3, 4, 4, rng);
    note(gradcheck_params(
        "batchnorm(train)", [&bn](auto& ex, const auto& v) { return ex.bn(&bn, v); }, x,
        {{&bn.gamma, &bn.gamma_grad}, {&bn.beta, &bn.beta_grad}}, step, tol));
  }
  {
    BatchNormState<double> bn("bn", 2);
    std::uniform_real_distribution<double> gd(0.5, 1.5);
    for (auto& v : bn.gamma) v = gd(rng);
    for (auto& v : bn.running_mean) v = gd(rng) - 1.0;
    for (auto& v : bn.running_var) v = gd(rng);
    auto x = random_tensor<double>(2, 2, 4, 4, rng);
    note(gradcheck_params(
        "batchnorm(eval)", [&bn](auto& ex, const auto& v) { return ex.bn(&bn, v); }, x,
        {{&bn.gamma, &bn.gamma_grad}, {&bn.beta, &bn.beta_grad}}, step, tol));
  }
  {
    DenseParam<double> d("head", 4, 2 * 3 * 3);
    std::mt19937_64 r2(seed ^ 1);
    he_init(d, r2);
    auto x = random_tensor<double>(2, 2, 3, 3, rng);
    note(gradcheck_params(
        "linear", [&d](auto& ex, const auto& v) { return ex.linear(d, v); }, x,
        {{&d.weights, &d.weights_grad}, {&d.bias, &d.bias_grad}}, step, tol));
  }
  {
    KernelParam<double> k(0, "k", 2, 2, 3, 1);
    fill_uniform(k, rng, -0.5, 0.5);
    auto x = random_tensor<double>(1, 2, 4, 4, rng);
    note(gradcheck_params(
        "add/sub", [&k](auto& ex, const auto& v) { return ex.sub(ex.add(v, ex.conv(k, v)), v); },
        x, {{&k.values, &k.values_grad}}, step, tol));
  }
  for (int t = 0; t < composite_count; ++t) {
    CompositeSpec cs;
    cs.seed = seed + 100 + t;
    cs.depth = depth;
    note(gradcheck_composite(cs, step, tol));
  }
  return sum;
}

}  // namespace resfeat
