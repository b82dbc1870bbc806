#include "natscan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace natscan {

template <std::floating_point T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                           T eps) {
  if (x.empty()) throw ShapeError("finite_diff_grad: empty input");
  if (!(eps > T(0))) throw UsageError("finite_diff_grad: eps must be positive");
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = f(probe);
    probe[i] = orig - eps;
    const T down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value when perturbing component " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (T(2) * eps);
  }
  return grad;
}

template <std::floating_point T>
GradientReport check_gradient(const Tensor<T>& analytic, const Tensor<T>& numeric, double rel_tol,
                              double abs_tol) {
  require_same_shape(analytic.shape(), numeric.shape(), "check_gradient");
  GradientReport report;
  report.checked = analytic.size();
  std::vector<std::pair<double, GradientMismatch>> excess;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    const double n = static_cast<double>(numeric[i]);
    const double mag = std::max(std::abs(a), std::abs(n));
    const double err = std::abs(a - n);
    const double rel = mag > 0 ? err / mag : 0.0;
    report.max_abs_error = std::max(report.max_abs_error, err);
    if (mag > abs_tol) report.max_rel_error = std::max(report.max_rel_error, rel);
    const double bound = abs_tol + rel_tol * mag;
    const bool ok = err <= bound && std::isfinite(a) && std::isfinite(n);
    if (!ok) {
      ++report.failures;
      excess.push_back({std::isfinite(err) ? err - bound : HUGE_VAL,
                        GradientMismatch{i, a, n, err, rel}});
    }
  }
  report.passed = report.failures == 0;
  std::sort(excess.begin(), excess.end(),
            [](const auto& l, const auto& r) { return l.first > r.first; });
  for (std::size_t i = 0; i < excess.size() && i < 5; ++i) report.worst.push_back(excess[i].second);
  return report;
}

std::string GradientReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << ": " << failures << "/" << checked
     << " components out of tolerance, max abs err " << max_abs_error << ", max rel err "
     << max_rel_error;
  for (const auto& w : worst) {
    os << "\n  [" << w.index << "] analytic=" << w.analytic << " numeric=" << w.numeric
       << " abs=" << w.abs_error << " rel=" << w.rel_error;
  }
  return os.str();
}

template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&,
                                        const Tensor<float>&, float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&,
                                         const Tensor<double>&, double);
template GradientReport check_gradient(const Tensor<float>&, const Tensor<float>&, double, double);
template GradientReport check_gradient(const Tensor<double>&, const Tensor<double>&, double,
                                       double);

}  // namespace natscan
