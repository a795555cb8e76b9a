#pragma once

#include <utility>

#include "resfeat/exec.hpp"
#include "resfeat/scheme.hpp"

namespace resfeat {

enum class BlockVariant { PreAct, Classic, ModifiedPreAct, ModifiedClassic, FeatureBased };

enum class Sharing { PerLayer, PerLevel };

struct SharingPolicy {
  Sharing a = Sharing::PerLayer;
  Sharing b = Sharing::PerLayer;
};

enum class PoolingVariant { PreActPool, ClassicPool, FBPool, AppendixPool };

inline const char* block_variant_name(BlockVariant v) {
  switch (v) {
    case BlockVariant::PreAct: return "preact";
    case BlockVariant::Classic: return "classic";
    case BlockVariant::ModifiedPreAct: return "modified-preact";
    case BlockVariant::ModifiedClassic: return "modified-classic";
    case BlockVariant::FeatureBased: return "feature-based";
  }
  return "?";
}

// Pre-activation basic block: r + A * sigma(BN(B * sigma(BN(r)))).
// With BN disabled this is exactly the residual form with the learned sign;
// the modified variant differs only in A being the level-shared kernel.
template <class Ex, typename T>
typename Ex::Value preact_block(Ex& ex, const typename Ex::Value& r, KernelParam<T>& A,
                                KernelParam<T>& B, BatchNormState<T>* bn1,
                                BatchNormState<T>* bn2) {
  auto t = ex.relu(ex.bn(bn1, r));
  t = ex.conv(B, t);
  t = ex.relu(ex.bn(bn2, t));
  t = ex.conv(A, t);
  return ex.add(r, t);
}

// Classic basic block: sigma(r + BN(A * sigma(BN(B * r)))). The outer sigma
// makes every output elementwise nonnegative.
template <class Ex, typename T>
typename Ex::Value classic_block(Ex& ex, const typename Ex::Value& r, KernelParam<T>& A,
                                 KernelParam<T>& B, BatchNormState<T>* bn1,
                                 BatchNormState<T>* bn2) {
  auto t = ex.conv(B, r);
  t = ex.relu(ex.bn(bn1, t));
  t = ex.conv(A, t);
  t = ex.bn(bn2, t);
  return ex.relu(ex.add(r, t));
}

// Pre-activation pooling (restriction) block:
//   R *2 x + A' * sigma(BN(B0 *2 sigma(BN(x))))
// R is the 1x1 stride-2 projection, B0 the 3x3 stride-2 kernel. The Appendix
// variant is this block with A' tied to the shared next-level kernel, which
// is a call-site distinction, not a structural one.
template <class Ex, typename T>
typename Ex::Value preact_pool(Ex& ex, const typename Ex::Value& x, KernelParam<T>& R,
                               KernelParam<T>& B0, KernelParam<T>& Aprime,
                               BatchNormState<T>* bn1, BatchNormState<T>* bn2) {
  auto skip = ex.conv(R, x);
  auto t = ex.relu(ex.bn(bn1, x));
  t = ex.conv(B0, t);
  t = ex.relu(ex.bn(bn2, t));
  t = ex.conv(Aprime, t);
  return ex.add(skip, t);
}

// Classic pooling block: sigma(BN(R *2 x) + BN(A' * sigma(BN(B0 *2 x)))).
template <class Ex, typename T>
typename Ex::Value classic_pool(Ex& ex, const typename Ex::Value& x, KernelParam<T>& R,
                                KernelParam<T>& B0, KernelParam<T>& Aprime,
                                BatchNormState<T>* bn1, BatchNormState<T>* bn2,
                                BatchNormState<T>* bnR) {
  auto skip = ex.bn(bnR, ex.conv(R, x));
  auto t = ex.conv(B0, x);
  t = ex.relu(ex.bn(bn1, t));
  t = ex.conv(Aprime, t);
  t = ex.bn(bn2, t);
  return ex.relu(ex.add(skip, t));
}

// Feature-based pooling (interpolation and restriction), carrying the (u, f)
// pair across levels:
//   u' = Pi *2 u
//   f' = R *2 (f - A_src(u)) + A_dst(u')
template <class Ex, typename T>
std::pair<typename Ex::Value, typename Ex::Value> fb_pool(Ex& ex, const typename Ex::Value& u,
                                                          const typename Ex::Value& f,
                                                          KernelParam<T>& Pi, KernelParam<T>& R,
                                                          const SchemeOp<T>& A_src,
                                                          const SchemeOp<T>& A_dst) {
  auto u_next = ex.conv(Pi, u);
  auto resid = ex.sub(f, apply_scheme(ex, A_src, u));
  auto f_next = ex.add(ex.conv(R, resid), apply_scheme(ex, A_dst, u_next));
  return {u_next, f_next};
}

// Numeric conveniences used by the verification suites.

template <typename T>
Tensor4<T> preact_block(const Tensor4<T>& r, KernelParam<T>& A, KernelParam<T>& B,
                        BatchNormState<T>* bn1 = nullptr, BatchNormState<T>* bn2 = nullptr) {
  NumericExec<T> ex;
  return preact_block(ex, r, A, B, bn1, bn2);
}

template <typename T>
Tensor4<T> classic_block(const Tensor4<T>& r, KernelParam<T>& A, KernelParam<T>& B,
                         BatchNormState<T>* bn1 = nullptr, BatchNormState<T>* bn2 = nullptr) {
  NumericExec<T> ex;
  return classic_block(ex, r, A, B, bn1, bn2);
}

}  // namespace resfeat
