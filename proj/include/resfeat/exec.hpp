#pragma once

#include "resfeat/autodiff.hpp"
#include "resfeat/nn_ops.hpp"
#include "resfeat/params.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

// Execution contexts let one definition of each block/scheme serve both the
// plain numeric path and the differentiable tape path. A null BN state means
// the normalization slot is disabled and the value passes through.

template <typename T>
struct NumericExec {
  using Scalar = T;
  using Value = Tensor4<T>;

  Value conv(KernelParam<T>& k, const Value& x) { return conv2d(x, k); }
  Value relu(const Value& x) { return resfeat::relu(x); }
  Value bn(BatchNormState<T>* s, const Value& x) { return s ? resfeat::batchnorm(x, *s) : x; }
  Value add(const Value& a, const Value& b) { return resfeat::add(a, b); }
  Value sub(const Value& a, const Value& b) { return resfeat::sub(a, b); }
  Value subsample(const Value& x) { return resfeat::subsample(x); }
  Value global_avg_pool(const Value& x) { return resfeat::global_avg_pool(x); }
  Value max_pool(const Value& x) { return max_pool3x3s2(x); }
  Value linear(DenseParam<T>& d, const Value& x) { return resfeat::linear(x, d); }
  Value zeros(int n, int c, int h, int w) { return Tensor4<T>(n, c, h, w); }
  static const Tensor4<T>& tensor_of(const Value& v) { return v; }
};

template <typename T>
struct TapeExec {
  using Scalar = T;
  using Value = typename Tape<T>::Var;

  Tape<T>* tape;

  explicit TapeExec(Tape<T>& t) : tape(&t) {}

  Value conv(KernelParam<T>& k, const Value& x) { return tape->conv(k, x); }
  Value relu(const Value& x) { return tape->relu(x); }
  Value bn(BatchNormState<T>* s, const Value& x) { return s ? tape->batchnorm(*s, x) : x; }
  Value add(const Value& a, const Value& b) { return tape->add(a, b); }
  Value sub(const Value& a, const Value& b) { return tape->sub(a, b); }
  Value subsample(const Value& x) { return tape->subsample(x); }
  Value global_avg_pool(const Value& x) { return tape->global_avg_pool(x); }
  Value max_pool(const Value& x) { return tape->max_pool3x3s2(x); }
  Value linear(DenseParam<T>& d, const Value& x) { return tape->linear(d, x); }
  Value zeros(int n, int c, int h, int w) { return tape->leaf(Tensor4<T>(n, c, h, w)); }
  static const Tensor4<T>& tensor_of(const Value& v) { return *v.v; }
};

}  // namespace resfeat
