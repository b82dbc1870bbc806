#pragma once

#include <functional>
#include <string>
#include <vector>

#include "natscan/tensor.hpp"

namespace natscan {

/// Central-difference gradient of a scalar function:
/// out[i] = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Throws NumericError naming the component if any evaluation is non-finite.
template <std::floating_point T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                           T eps);

struct GradientMismatch {
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double abs_error = 0;
  double rel_error = 0;
};

struct GradientReport {
  bool passed = true;
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_abs_error = 0;
  /// Largest |a-n| / max(|a|,|n|) over components where max(|a|,|n|)
  /// exceeds the absolute tolerance.
  double max_rel_error = 0;
  /// Up to five components with the largest excess over tolerance.
  std::vector<GradientMismatch> worst;

  std::string summary() const;
};

/// Component i passes when |a - n| <= abs_tol + rel_tol * max(|a|, |n|).
template <std::floating_point T>
GradientReport check_gradient(const Tensor<T>& analytic, const Tensor<T>& numeric, double rel_tol,
                              double abs_tol);

}  // namespace natscan
