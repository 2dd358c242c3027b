#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "hyperkan/tensor.hpp"

namespace hyperkan {

struct GradcheckReport {
  bool passed = false;
  bool numeric_error = false;
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::string message;
};

/// Compares autodiff gradients of a scalar function against central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every element of `wrt`.
///
/// Relative error per element is |analytic - numeric| / max(|analytic|, |numeric|, floor);
/// the floor keeps near-zero gradients from turning rounding noise into huge ratios.
template <typename T>
GradcheckReport gradcheck(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> wrt, double eps, double tol,
                          double floor = 1.0) {
  GradcheckReport report;
  std::vector<std::vector<T>> analytic;
  try {
    for (auto& t : wrt) {
      t.set_requires_grad(true);
      t.clear_grad();
    }
    Tensor<T> y = f();
    if (!std::isfinite(static_cast<double>(y.item()))) {
      report.numeric_error = true;
      report.message = "non-finite function value";
      return report;
    }
    y.backward();
    for (auto& t : wrt) {
      if (t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(t.numel(), T(0));
      }
    }
  } catch (const std::exception& e) {
    report.numeric_error = true;
    report.message = e.what();
    return report;
  }

  NoGradGuard no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto values = wrt[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      double fp = 0, fm = 0;
      try {
        values[i] = saved + static_cast<T>(eps);
        fp = static_cast<double>(f().item());
        values[i] = saved - static_cast<T>(eps);
        fm = static_cast<double>(f().item());
      } catch (const std::exception& e) {
        values[i] = saved;
        report.numeric_error = true;
        report.message = e.what();
        return report;
      }
      values[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.numeric_error = true;
        report.message = "non-finite value under perturbation";
        return report;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error || std::isnan(rel)) {
        report.max_rel_error = rel;
        report.worst_tensor = k;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  if (!report.passed) {
    report.message = "max relative error " + std::to_string(report.max_rel_error) + " at tensor " +
                     std::to_string(report.worst_tensor) + " index " + std::to_string(report.worst_index);
  }
  return report;
}

}  // namespace hyperkan
