#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cstdint>
#include <random>
#include <vector>

#include "resfeat/conv.hpp"
#include "resfeat/random.hpp"
#include "resfeat/scheme.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

// Numerical verification of the mathematical claims: the feature/residual
// iteration equivalence, constraint preservation, classical Richardson
// convergence, and the pooling-vs-restriction one-pixel experiment.

// --- dense matrix oracle ------------------------------------------------

// The matrix whose action on flattened (c, h, w) tensors equals
// conv2d(., k). Built directly from the stencil definition, independent of
// the im2col path, so agreement between the two is a meaningful check.
// Guarded to small grids: c_in*h*w and c_out*Ho*Wo must stay <= 4096.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> assemble_matrix(const KernelParam<T>& k, int h,
                                                                 int w) {
  const int pad = k.pad();
  const int Ho = conv_out_dim(h, k.kh, pad, k.stride);
  const int Wo = conv_out_dim(w, k.kw, pad, k.stride);
  const long rows = static_cast<long>(k.c_out) * Ho * Wo;
  const long cols = static_cast<long>(k.c_in) * h * w;
  if (rows > 4096 || cols > 4096)
    throw ConfigError("assemble_matrix: grid exceeds the 4096-unknown guard");
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> M =
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows, cols);
  for (int co = 0; co < k.c_out; ++co)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        const long row = (static_cast<long>(co) * Ho + oy) * Wo + ox;
        for (int ci = 0; ci < k.c_in; ++ci)
          for (int ky = 0; ky < k.kh; ++ky)
            for (int kx = 0; kx < k.kw; ++kx) {
              const int iy = oy * k.stride + ky - pad;
              const int ix = ox * k.stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              M(row, (static_cast<long>(ci) * h + iy) * w + ix) += k.at(co, ci, ky, kx);
            }
      }
  return M;
}

template <typename T>
struct SpectralInfo {
  T sigma_max = 0;  // largest singular value of the conv matrix
  T sigma_min = 0;
  T lambda_max() const { return sigma_max * sigma_max; }  // of A^T A
  bool invertible(T rel_tol = T(1e-10)) const { return sigma_min > rel_tol * sigma_max; }
  T condition() const { return sigma_min > 0 ? sigma_max / sigma_min : std::numeric_limits<T>::infinity(); }
};

template <typename T>
SpectralInfo<T> spectral_info(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& M) {
  Eigen::BDCSVD<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>> svd(M);
  SpectralInfo<T> s;
  s.sigma_max = svd.singularValues()(0);
  s.sigma_min = svd.singularValues()(svd.singularValues().size() - 1);
  return s;
}

// --- Theorem 1 lockstep verification --------------------------------------

struct EquivalenceReport {
  int steps = 0;
  double max_abs_gap = 0;
  double tolerance = 0;
  bool pass = false;
  bool invertible = false;
  double condition = 0;
  std::vector<double> per_step_gap;
};

// Runs the constrained feature iteration and the analytic residual iteration
// in lockstep from u0 = 0 (hence r0 = f) and reports the largest deviation
// of r^i from f - A*u^i. The identity holds algebraically for any A; the
// invertibility the theorem assumes is certified on the side via the matrix
// oracle rather than assumed.
template <typename T>
EquivalenceReport verify_theorem1(const KernelParam<T>& A,
                                  const std::vector<KernelParam<T>>& Bs, const Tensor4<T>& f,
                                  double tol) {
  if (A.c_in != A.c_out) throw ConfigError("verify_theorem1: A must map a space to itself");
  if (A.stride != 1) throw ConfigError("verify_theorem1: A must have stride 1");
  EquivalenceReport rep;
  rep.tolerance = tol;
  rep.steps = static_cast<int>(Bs.size());
  {
    auto M = assemble_matrix(A, f.h, f.w);
    auto s = spectral_info(M);
    rep.invertible = s.invertible();
    rep.condition = static_cast<double>(s.condition());
  }
  SchemeOp<T> Aop{SchemeForm::ConvOnly, const_cast<KernelParam<T>*>(&A), {}};
  Tensor4<T> u = zeros_like(f);
  Tensor4<T> r = f;  // r0 = f - A*0
  for (const auto& B : Bs) {
    u = constrained_feature_step(u, f, Aop, B);
    r = residual_step(r, A, B, ResidualSign::Analytic);
    const double gap = static_cast<double>(max_abs_diff(r, sub(f, conv2d(u, A))));
    rep.per_step_gap.push_back(gap);
    rep.max_abs_gap = std::max(rep.max_abs_gap, gap);
  }
  rep.pass = rep.max_abs_gap < tol;
  return rep;
}

// --- classical iterations --------------------------------------------------

struct ConvergenceTrace {
  std::vector<double> residual_norms;  // ||f - A*u^i||_2, i = 0..steps
  bool monotone = true;                // nonincreasing over the whole trace
};

// Plain Richardson iteration u <- u + B*(f - A*u) with a fixed B.
template <typename T>
ConvergenceTrace run_plain_iteration(const KernelParam<T>& A, const KernelParam<T>& B,
                                     const Tensor4<T>& f, int steps) {
  ConvergenceTrace tr;
  Tensor4<T> u = zeros_like(f);
  Tensor4<T> residual = sub(f, conv2d(u, A));
  tr.residual_norms.push_back(static_cast<double>(l2_norm(residual)));
  for (int i = 0; i < steps; ++i) {
    u += conv2d(residual, B);
    residual = sub(f, conv2d(u, A));
    tr.residual_norms.push_back(static_cast<double>(l2_norm(residual)));
    if (tr.residual_norms[i + 1] > tr.residual_norms[i]) tr.monotone = false;
  }
  return tr;
}

struct ConstrainedTrace {
  std::vector<double> residual_norms;
  std::vector<double> min_entries;  // min over u^i, must stay >= 0 exactly
  bool nonnegative = true;
  bool monotone_entries = true;  // u^i >= u^{i-1} entrywise
};

// Constraint-preserving iteration u <- u + sigma(B^i * sigma(f - A*u)).
template <typename T>
ConstrainedTrace run_constrained_iteration(const KernelParam<T>& A,
                                           const std::vector<KernelParam<T>>& Bs,
                                           const Tensor4<T>& f) {
  ConstrainedTrace tr;
  SchemeOp<T> Aop{SchemeForm::ConvOnly, const_cast<KernelParam<T>*>(&A), {}};
  Tensor4<T> u = zeros_like(f);
  tr.min_entries.push_back(static_cast<double>(min_entry(u)));
  tr.residual_norms.push_back(static_cast<double>(l2_norm(sub(f, conv2d(u, A)))));
  for (const auto& B : Bs) {
    Tensor4<T> next = constrained_feature_step(u, f, Aop, B);
    for (std::size_t j = 0; j < u.data.size(); ++j)
      if (next.data[j] < u.data[j]) tr.monotone_entries = false;
    u = next;
    const double mn = static_cast<double>(min_entry(u));
    tr.min_entries.push_back(mn);
    if (mn < 0) tr.nonnegative = false;
    tr.residual_norms.push_back(static_cast<double>(l2_norm(sub(f, conv2d(u, A)))));
  }
  return tr;
}

// B = omega * A^T realized as a kernel (spatial flip + channel transpose).
template <typename T>
KernelParam<T> scaled_transpose_kernel(const KernelParam<T>& A, T omega) {
  KernelParam<T> B = transpose_kernel(A, 0, "omega-At");
  for (auto& v : B.values) v *= omega;
  return B;
}

// --- randomized trial suites -------------------------------------------------
// Fixed seeds make every suite reproducible; the seed is part of the report.

struct Theorem1Trial {
  int channels = 0, grid = 0, nu = 0;
  EquivalenceReport report;
};

// Random diagonally-dominant A, random B^i, random nonnegative f.
inline std::vector<Theorem1Trial> theorem1_trials(int trials, double tol, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Theorem1Trial> out;
  for (int t = 0; t < trials; ++t) {
    Theorem1Trial tr;
    std::uniform_int_distribution<int> chd(1, 4), gridd(6, 16), nud(1, 20);
    tr.channels = chd(rng);
    tr.grid = gridd(rng);
    tr.nu = nud(rng);
    auto A = near_identity_kernel<double>(tr.channels, 0.1 / tr.channels, rng);
    std::vector<KernelParam<double>> Bs;
    for (int i = 0; i < tr.nu; ++i) {
      KernelParam<double> B(0, "B", tr.channels, tr.channels, 3, 1);
      fill_uniform(B, rng, -0.5, 0.5);
      Bs.push_back(std::move(B));
    }
    Tensor4<double> f = random_tensor<double>(1, tr.channels, tr.grid, tr.grid, rng, 0.0, 1.0);
    tr.report = verify_theorem1(A, Bs, f, tol);
    out.push_back(std::move(tr));
  }
  return out;
}

struct ConstraintSummary {
  int trials = 0;
  double worst_min_entry = 0;
  bool nonnegative = true;
  bool monotone = true;
};

// Arbitrary (not necessarily convergent) kernels; the constraint must hold
// with zero tolerance regardless.
inline ConstraintSummary constraint_trials(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ConstraintSummary s;
  s.trials = trials;
  for (int t = 0; t < trials; ++t) {
    std::uniform_int_distribution<int> chd(1, 3), gridd(4, 10), nud(1, 8);
    const int c = chd(rng), grid = gridd(rng), nu = nud(rng);
    KernelParam<double> A(0, "A", c, c, 3, 1);
    fill_uniform(A, rng);
    std::vector<KernelParam<double>> Bs;
    for (int i = 0; i < nu; ++i) {
      KernelParam<double> B(0, "B", c, c, 3, 1);
      fill_uniform(B, rng);
      Bs.push_back(std::move(B));
    }
    Tensor4<double> f = random_tensor<double>(1, c, grid, grid, rng, -1.0, 1.0);
    auto tr = run_constrained_iteration(A, Bs, f);
    for (double m : tr.min_entries) s.worst_min_entry = std::min(s.worst_min_entry, m);
    s.nonnegative = s.nonnegative && tr.nonnegative;
    s.monotone = s.monotone && tr.monotone_entries;
  }
  return s;
}

struct RichardsonTrial {
  int channels = 0, grid = 0;
  double lambda_max = 0, omega = 0;
  ConvergenceTrace convergent, divergent;
};

// omega = 1.5/lambda_max sits below the 2/lambda_max bound; doubling it lands
// strictly past the bound, so the iteration must stop being monotone.
inline std::vector<RichardsonTrial> richardson_trials(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<RichardsonTrial> out;
  for (int t = 0; t < trials; ++t) {
    RichardsonTrial tr;
    std::uniform_int_distribution<int> chd(1, 2), gridd(6, 12);
    tr.channels = chd(rng);
    tr.grid = gridd(rng);
    auto A = near_identity_kernel<double>(tr.channels, 0.1 / tr.channels, rng);
    auto si = spectral_info(assemble_matrix(A, tr.grid, tr.grid));
    tr.lambda_max = si.lambda_max();
    tr.omega = 1.5 / tr.lambda_max;
    Tensor4<double> f = random_tensor<double>(1, tr.channels, tr.grid, tr.grid, rng, -1.0, 1.0);
    tr.convergent = run_plain_iteration(A, scaled_transpose_kernel(A, tr.omega), f, 30);
    tr.divergent = run_plain_iteration(A, scaled_transpose_kernel(A, 2 * tr.omega), f, 40);
    out.push_back(std::move(tr));
  }
  return out;
}

// --- Appendix one-pixel experiment ------------------------------------------

struct PixelReport {
  int grid = 0;
  bool subsample_is_zero = false;      // S(r) = 0 for the one-pixel residual
  double learned_path_entry = 0;       // (all-ones B~ *2 r) at the cell covering the pixel
  double learned_path_max_abs = 0;     // max |B~ *2 r|
  int restrict_path_trials = 0;
  double restrict_path_max_abs = 0;    // max |B * R * S(r)| over random B, R
  bool pass = false;
};

// Builds the residual that is zero except at the 1-based position (2,2),
// confirms the plain restriction S(r) wipes it out, and that the learned
// stride-2 pooling path can still see it while conv-after-restriction
// provably cannot.
inline PixelReport pixel_experiment(int n, int random_kernel_trials = 8, std::uint64_t seed = 7) {
  if (n < 4 || n % 2 != 0) throw ConfigError("pixel_experiment: grid must be even and >= 4");
  PixelReport rep;
  rep.grid = n;
  Tensor4<double> r(1, 1, n, n);
  r.at(0, 0, 1, 1) = 1.0;  // (2,2) in the 1-based convention

  rep.subsample_is_zero = max_abs(subsample(r)) == 0.0;

  KernelParam<double> ones(0, "all-ones", 1, 1, 3, 2);
  for (auto& v : ones.values) v = 1.0;
  Tensor4<double> learned = conv2d(r, ones);
  rep.learned_path_max_abs = static_cast<double>(max_abs(learned));
  rep.learned_path_entry = learned.at(0, 0, 1, 1);  // output cell whose window covers (2,2)

  std::mt19937_64 rng(seed);
  rep.restrict_path_trials = random_kernel_trials;
  Tensor4<double> restricted = subsample(r);
  for (int t = 0; t < random_kernel_trials; ++t) {
    KernelParam<double> R(0, "R", 1, 1, 1, 1);
    KernelParam<double> B(0, "B", 1, 1, 3, 1);
    fill_uniform(R, rng);
    fill_uniform(B, rng);
    const double m = static_cast<double>(max_abs(conv2d(conv2d(restricted, R), B)));
    rep.restrict_path_max_abs = std::max(rep.restrict_path_max_abs, m);
  }
  rep.pass = rep.subsample_is_zero && rep.learned_path_max_abs != 0.0 &&
             rep.restrict_path_max_abs == 0.0;
  return rep;
}

}  // namespace resfeat
