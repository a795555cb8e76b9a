#pragma once

#include <string>

#include "resfeat/error.hpp"
#include "resfeat/exec.hpp"
#include "resfeat/params.hpp"
#include "resfeat/tensor.hpp"

namespace resfeat {

// The four operator forms applicable to a kernel K:
//   ConvOnly      K*x              (linear)
//   ConvAfterAct  K*sigma(x)
//   ActAfterConv  sigma(K*x)
//   Sandwich      sigma(K*sigma(x))
// Every nonlinear form is positively homogeneous of degree 1 but not additive.
enum class SchemeForm { ConvOnly, ConvAfterAct, ActAfterConv, Sandwich };

inline const char* scheme_form_name(SchemeForm f) {
  switch (f) {
    case SchemeForm::ConvOnly: return "K*";
    case SchemeForm::ConvAfterAct: return "K*s";
    case SchemeForm::ActAfterConv: return "s(K*)";
    case SchemeForm::Sandwich: return "s(K*s)";
  }
  return "?";
}

inline const char* scheme_form_id(SchemeForm f) {
  switch (f) {
    case SchemeForm::ConvOnly: return "conv";
    case SchemeForm::ConvAfterAct: return "conv_act";
    case SchemeForm::ActAfterConv: return "act_conv";
    case SchemeForm::Sandwich: return "sandwich";
  }
  return "?";
}

inline bool scheme_is_linear(SchemeForm f) { return f == SchemeForm::ConvOnly; }

// Optional normalization slots, one per sigma in the form (networks insert
// BN immediately before each activation; solver work leaves them null).
template <typename T>
struct SchemeBn {
  BatchNormState<T>* pre = nullptr;   // before the inner sigma (applied to the input)
  BatchNormState<T>* post = nullptr;  // before the outer sigma (applied to the conv output)
};

template <typename T>
struct SchemeOp {
  SchemeForm form = SchemeForm::ConvOnly;
  KernelParam<T>* kernel = nullptr;
  SchemeBn<T> bn;
};

template <class Ex, typename T>
typename Ex::Value apply_scheme(Ex& ex, const SchemeOp<T>& op, const typename Ex::Value& x) {
  switch (op.form) {
    case SchemeForm::ConvOnly:
      return ex.conv(*op.kernel, x);
    case SchemeForm::ConvAfterAct:
      return ex.conv(*op.kernel, ex.relu(ex.bn(op.bn.pre, x)));
    case SchemeForm::ActAfterConv:
      return ex.relu(ex.bn(op.bn.post, ex.conv(*op.kernel, x)));
    case SchemeForm::Sandwich:
      return ex.relu(ex.bn(op.bn.post, ex.conv(*op.kernel, ex.relu(ex.bn(op.bn.pre, x)))));
  }
  throw ConfigError("apply_scheme: unknown form");
}

template <typename T>
Tensor4<T> apply_scheme(const SchemeOp<T>& op, const Tensor4<T>& x) {
  NumericExec<T> ex;
  return apply_scheme(ex, op, x);
}

// One smoothing step of the general feature iteration:
//   u <- u + B(f - A(u))
template <class Ex, typename T>
typename Ex::Value feature_step(Ex& ex, const typename Ex::Value& u, const typename Ex::Value& f,
                                const SchemeOp<T>& A, const SchemeOp<T>& B) {
  return ex.add(u, apply_scheme(ex, B, ex.sub(f, apply_scheme(ex, A, u))));
}

template <typename T>
Tensor4<T> feature_step(const Tensor4<T>& u, const Tensor4<T>& f, const SchemeOp<T>& A,
                        const SchemeOp<T>& B) {
  NumericExec<T> ex;
  return feature_step(ex, u, f, A, B);
}

// Constraint-preserving step for the linear data-feature mapping:
//   u <- u + sigma(B * sigma(f - A*u))
// Requires a linear A and a nonnegative iterate; the output dominates the
// input entrywise, so nonnegativity is preserved without any tolerance.
template <typename T>
Tensor4<T> constrained_feature_step(const Tensor4<T>& u, const Tensor4<T>& f, const SchemeOp<T>& A,
                                    const KernelParam<T>& B) {
  if (!scheme_is_linear(A.form))
    throw ConfigError("constrained_feature_step: A must be the linear form K*");
  if (min_entry(u) < T(0))
    throw PreconditionError("constrained_feature_step: input feature has negative entries");
  Tensor4<T> residual = sub(f, conv2d(u, *A.kernel));
  Tensor4<T> corr = relu(conv2d(relu(residual), B));
  return add(u, corr);
}

enum class ResidualSign {
  Analytic,  // minus: the form derived from the feature iteration (Theorem 1 verification)
  Learned,   // plus: the sign used for training, absorbed by linearity
};

// Residual iteration r <- r -/+ A * sigma(B * sigma(r)).
template <typename T>
Tensor4<T> residual_step(const Tensor4<T>& r, const KernelParam<T>& A, const KernelParam<T>& B,
                         ResidualSign sign) {
  Tensor4<T> t = conv2d(relu(conv2d(relu(r), B)), A);
  Tensor4<T> out = r;
  if (sign == ResidualSign::Analytic)
    out -= t;
  else
    out += t;
  return out;
}

// General residual iteration r <- r - A(B(r)), which only exists when the
// data-feature mapping A is linear.
template <typename T>
Tensor4<T> nonlinear_residual_step(const Tensor4<T>& r, const SchemeOp<T>& A,
                                   const SchemeOp<T>& B) {
  if (!scheme_is_linear(A.form))
    throw ConfigError(
        "nonlinear_residual_step: a residual form of the iteration exists only for a linear "
        "data-feature mapping; A uses nonlinear form " +
        std::string(scheme_form_name(A.form)));
  return sub(r, conv2d(apply_scheme(B, r), *A.kernel));
}

}  // namespace resfeat
