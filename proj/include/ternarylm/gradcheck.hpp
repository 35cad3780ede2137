#pragma once

// Central finite-difference checks of reverse-mode gradients.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ternarylm/error.hpp"
#include "ternarylm/tensor.hpp"

namespace ternarylm {

inline constexpr double kGradCheckEpsDiv = 1e-6;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

namespace detail {

template <class T, class F>
double eval_scalar(F& f) {
  NoGradGuard no_grad;
  const Tensor<T> y = f();
  if (y.numel() != 1) throw GraphError("finite_diff_check: function must return a scalar, got " + shape_str(y.shape()));
  return static_cast<double>(y.item());
}

}  // namespace detail

/// Compares the reverse-mode gradient of the scalar f() with respect to each
/// named tensor against central differences with step h * max(1, |x_i|).
/// Error per coordinate: |analytic - numeric| / (|numeric| + 1e-6).
/// f must rebuild its graph from the current tensor values on every call.
template <class T, class F>
GradCheckReport finite_diff_check(F f, std::vector<std::pair<std::string, Tensor<T>>> params, double h = 1e-5) {
  if (!(h > 0)) throw ConfigError("finite_diff_check: step must be positive");
  const double base = detail::eval_scalar<T>(f);
  if (detail::eval_scalar<T>(f) != base) throw NumericError("finite_diff_check: function is not deterministic");

  for (auto& [name, x] : params) {
    if (!x.requires_grad()) throw GraphError("finite_diff_check: '" + name + "' does not require grad");
    x.zero_grad();
  }
  {
    const Tensor<T> y = f();
    backward(y);
  }

  GradCheckReport report;
  for (auto& [name, x] : params) {
    GradCheckEntry entry;
    entry.name = name;
    const std::vector<T> analytic(x.grad().begin(), x.grad().end());
    auto data = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T orig = data[i];
      const double step = h * std::max(1.0, std::abs(static_cast<double>(orig)));
      data[i] = static_cast<T>(static_cast<double>(orig) + step);
      const double up = detail::eval_scalar<T>(f);
      data[i] = static_cast<T>(static_cast<double>(orig) - step);
      const double down = detail::eval_scalar<T>(f);
      data[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = static_cast<double>(analytic[i]);
      double err = std::abs(a - numeric) / (std::abs(numeric) + kGradCheckEpsDiv);
      if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
      if (i == 0 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  if (detail::eval_scalar<T>(f) != base) throw NumericError("finite_diff_check: function is not deterministic");
  return report;
}

/// Single-tensor form; returns the maximum relative error.
template <class T, class F>
double finite_diff_check(F f, Tensor<T> x, double h = 1e-5) {
  return finite_diff_check<T>(std::move(f), {{"x", std::move(x)}}, h).max_rel_error();
}

}  // namespace ternarylm
