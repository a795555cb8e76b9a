#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "resfeat/error.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

// A learnable convolution kernel. Weight layout is [c_out][c_in][kh][kw].
// Identity (id/name) is what expresses weight sharing: two block instances
// share weights iff they reference the same KernelParam object.
template <typename T>
struct KernelParam {
  std::uint32_t id = 0;
  std::string name;  // canonical checkpoint name
  int c_out = 0, c_in = 0, kh = 0, kw = 0;
  int stride = 1;
  std::vector<T> values;
  std::vector<T> bias;  // empty = no bias
  std::vector<T> values_grad;
  std::vector<T> bias_grad;

  KernelParam() = default;

  KernelParam(std::uint32_t id_, std::string name_, int c_out_, int c_in_, int k, int stride_,
              bool with_bias = false)
      : id(id_), name(std::move(name_)), c_out(c_out_), c_in(c_in_), kh(k), kw(k), stride(stride_) {
    if (k != 1 && k != 3 && k != 7)
      throw ConfigError("kernel size must be 1, 3 or 7 (7 is reserved for stems), got " + std::to_string(k));
    if (stride_ != 1 && stride_ != 2)
      throw ConfigError("kernel stride must be 1 or 2, got " + std::to_string(stride_));
    if (c_out_ < 1 || c_in_ < 1) throw ConfigError("kernel channel counts must be >= 1");
    values.assign(static_cast<std::size_t>(c_out_) * c_in_ * k * k, T(0));
    values_grad.assign(values.size(), T(0));
    if (with_bias) {
      bias.assign(c_out_, T(0));
      bias_grad.assign(c_out_, T(0));
    }
  }

  int pad() const { return kh / 2; }
  bool has_bias() const { return !bias.empty(); }
  std::size_t weight_count() const { return values.size() + bias.size(); }

  std::size_t windex(int co, int ci, int ky, int kx) const {
    return ((static_cast<std::size_t>(co) * c_in + ci) * kh + ky) * kw + kx;
  }

  T& at(int co, int ci, int ky, int kx) { return values[windex(co, ci, ky, kx)]; }
  T at(int co, int ci, int ky, int kx) const { return values[windex(co, ci, ky, kx)]; }

  void zero_grad() {
    std::fill(values_grad.begin(), values_grad.end(), T(0));
    std::fill(bias_grad.begin(), bias_grad.end(), T(0));
  }
};

// Per-channel batch normalization state. Never shared between layers even
// when the adjacent kernel is: sharing applies to A/B kernels only.
template <typename T>
struct BatchNormState {
  std::string name;
  int channels = 0;
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);
  bool train_mode = false;

  std::vector<T> gamma_grad, beta_grad;

  BatchNormState() = default;

  BatchNormState(std::string name_, int channels_) : name(std::move(name_)), channels(channels_) {
    if (channels_ < 1) throw ConfigError("batchnorm channel count must be >= 1");
    gamma.assign(channels_, T(1));
    beta.assign(channels_, T(0));
    running_mean.assign(channels_, T(0));
    running_var.assign(channels_, T(1));
    gamma_grad.assign(channels_, T(0));
    beta_grad.assign(channels_, T(0));
  }

  std::size_t weight_count() const { return gamma.size() + beta.size(); }

  void zero_grad() {
    std::fill(gamma_grad.begin(), gamma_grad.end(), T(0));
    std::fill(beta_grad.begin(), beta_grad.end(), T(0));
  }
};

// Fully connected classification head: y = W x + b over flattened features.
template <typename T>
struct DenseParam {
  std::string name;
  int out_dim = 0, in_dim = 0;
  std::vector<T> weights;  // [out][in] row-major
  std::vector<T> bias;
  std::vector<T> weights_grad;
  std::vector<T> bias_grad;

  DenseParam() = default;

  DenseParam(std::string name_, int out_dim_, int in_dim_)
      : name(std::move(name_)), out_dim(out_dim_), in_dim(in_dim_) {
    if (out_dim_ < 1 || in_dim_ < 1) throw ConfigError("dense dimensions must be >= 1");
    weights.assign(static_cast<std::size_t>(out_dim_) * in_dim_, T(0));
    bias.assign(out_dim_, T(0));
    weights_grad.assign(weights.size(), T(0));
    bias_grad.assign(out_dim_, T(0));
  }

  std::size_t weight_count() const { return weights.size() + bias.size(); }

  void zero_grad() {
    std::fill(weights_grad.begin(), weights_grad.end(), T(0));
    std::fill(bias_grad.begin(), bias_grad.end(), T(0));
  }
};

// Owns every parameter of a model. Kernels are unique objects, so a shared
// kernel is stored (and counted, and serialized) exactly once.
template <typename T>
class ParamStore {
 public:
  KernelParam<T>& add_kernel(const std::string& name, int c_out, int c_in, int k, int stride,
                             bool with_bias = false) {
    kernels_.push_back(std::make_unique<KernelParam<T>>(next_id_++, name, c_out, c_in, k, stride, with_bias));
    return *kernels_.back();
  }

  BatchNormState<T>& add_bn(const std::string& name, int channels) {
    bns_.push_back(std::make_unique<BatchNormState<T>>(name, channels));
    return *bns_.back();
  }

  DenseParam<T>& add_dense(const std::string& name, int out_dim, int in_dim) {
    denses_.push_back(std::make_unique<DenseParam<T>>(name, out_dim, in_dim));
    return *denses_.back();
  }

  const std::vector<std::unique_ptr<KernelParam<T>>>& kernels() const { return kernels_; }
  const std::vector<std::unique_ptr<BatchNormState<T>>>& bns() const { return bns_; }
  const std::vector<std::unique_ptr<DenseParam<T>>>& denses() const { return denses_; }
  std::vector<std::unique_ptr<KernelParam<T>>>& kernels() { return kernels_; }
  std::vector<std::unique_ptr<BatchNormState<T>>>& bns() { return bns_; }
  std::vector<std::unique_ptr<DenseParam<T>>>& denses() { return denses_; }

  void zero_grad() {
    for (auto& k : kernels_) k->zero_grad();
    for (auto& b : bns_) b->zero_grad();
    for (auto& d : denses_) d->zero_grad();
  }

  void set_train_mode(bool train) {
    for (auto& b : bns_) b->train_mode = train;
  }

  std::size_t total_weight_count() const {
    std::size_t t = 0;
    for (const auto& k : kernels_) t += k->weight_count();
    for (const auto& b : bns_) t += b->weight_count();
    for (const auto& d : denses_) t += d->weight_count();
    return t;
  }

 private:
  std::uint32_t next_id_ = 1;
  std::vector<std::unique_ptr<KernelParam<T>>> kernels_;
  std::vector<std::unique_ptr<BatchNormState<T>>> bns_;
  std::vector<std::unique_ptr<DenseParam<T>>> denses_;
};

}  // namespace resfeat
