#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "resfeat/conv.hpp"
#include "resfeat/error.hpp"
#include "resfeat/nn_ops.hpp"
#include "resfeat/params.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

// Reverse-mode differentiation tape over the Tensor4 operator set.
//
// Every op returns a Var holding shared ownership of its value and a
// zero-initialized gradient buffer, and pushes a closure that routes the
// output gradient to its inputs. Parameter gradients accumulate into the
// parameter objects themselves, so a kernel used at several sites receives
// the sum of the per-site gradients.
template <typename T>
class Tape {
 public:
  struct Var {
    std::shared_ptr<Tensor4<T>> v;
    std::shared_ptr<Tensor4<T>> g;
    const Tensor4<T>& value() const { return *v; }
  };

  Var leaf(Tensor4<T> x) {
    return make_var(std::move(x));
  }

  Var conv(KernelParam<T>& k, const Var& x) {
    Var out = make_var(conv2d(*x.v, k));
    record([xv = x.v, xg = x.g, og = out.g, kp = &k]() {
      conv2d_backward(*xv, *kp, *og, xg.get(), true);
    });
    return out;
  }

  Var relu(const Var& x) {
    Var out = make_var(resfeat::relu(*x.v));
    record([xv = x.v, xg = x.g, og = out.g]() { relu_backward(*xv, *og, xg.get()); });
    return out;
  }

  Var batchnorm(BatchNormState<T>& s, const Var& x) {
    if (s.train_mode) {
      auto xhat = std::make_shared<Tensor4<T>>();
      auto invstd = std::make_shared<std::vector<T>>();
      Var out = make_var(batchnorm_train(*x.v, s, xhat.get(), invstd.get()));
      record([xhat, invstd, xg = x.g, og = out.g, sp = &s]() {
        batchnorm_train_backward(*xhat, *invstd, *sp, *og, xg.get());
      });
      return out;
    }
    Var out = make_var(batchnorm_eval(*x.v, s));
    record([xv = x.v, xg = x.g, og = out.g, sp = &s]() {
      batchnorm_eval_backward(*xv, *sp, *og, xg.get());
    });
    return out;
  }

  Var add(const Var& a, const Var& b) {
    Var out = make_var(resfeat::add(*a.v, *b.v));
    record([ag = a.g, bg = b.g, og = out.g]() {
      *ag += *og;
      *bg += *og;
    });
    return out;
  }

  Var sub(const Var& a, const Var& b) {
    Var out = make_var(resfeat::sub(*a.v, *b.v));
    record([ag = a.g, bg = b.g, og = out.g]() {
      *ag += *og;
      *bg -= *og;
    });
    return out;
  }

  Var subsample(const Var& x) {
    Var out = make_var(resfeat::subsample(*x.v));
    record([xg = x.g, og = out.g]() { subsample_backward(*og, xg.get()); });
    return out;
  }

  Var global_avg_pool(const Var& x) {
    Var out = make_var(resfeat::global_avg_pool(*x.v));
    record([h = x.v->h, w = x.v->w, xg = x.g, og = out.g]() {
      global_avg_pool_backward(*og, h, w, xg.get());
    });
    return out;
  }

  Var max_pool3x3s2(const Var& x) {
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    Var out = make_var(resfeat::max_pool3x3s2(*x.v, argmax.get()));
    record([argmax, xg = x.g, og = out.g]() { max_pool3x3s2_backward(*og, *argmax, xg.get()); });
    return out;
  }

  Var linear(DenseParam<T>& d, const Var& x) {
    Var out = make_var(resfeat::linear(*x.v, d));
    record([xv = x.v, xg = x.g, og = out.g, dp = &d]() {
      linear_backward(*xv, *dp, *og, xg.get());
    });
    return out;
  }

  // Runs the recorded program in reverse with dL/droot = seed.
  void backward(const Var& root, const Tensor4<T>& seed) {
    if (ops_.empty()) throw StateError("backward called with no recorded forward pass");
    root.v->require_same_shape(seed, "backward seed");
    *root.g += seed;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void reset() { ops_.clear(); }
  std::size_t op_count() const { return ops_.size(); }

 private:
  Var make_var(Tensor4<T> value) {
    Var v;
    v.v = std::make_shared<Tensor4<T>>(std::move(value));
    v.g = std::make_shared<Tensor4<T>>(zeros_like(*v.v));
    return v;
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  std::vector<std::function<void()>> ops_;
};

}  // namespace resfeat
