#pragma once

// Shared helpers for the unit tests: tolerance comparisons and small
// numeric oracles (brute-force sums, finite differences, golden section)
// used to pin expected values independently of the library code.

#include <cmath>
#include <functional>

#include <Eigen/Core>

namespace test_util {

inline bool rel_close(double a, double b, double tol) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) <= tol * scale;
}

inline double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Brute-force sum of squared centered indexes, the oracle for the closed
// form n(n+1)(n-1)/12.
inline double weight_sum_brute(int n) {
  double acc = 0.0;
  for (int idx = 1; idx <= n; ++idx) {
    const double v = idx - 0.5 * (n + 1);
    acc += v * v;
  }
  return acc;
}

// Central finite difference gradient, the oracle for analytic gradients.
inline Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int d = 0; d < x.size(); ++d) {
    const double orig = xp[d];
    xp[d] = orig + h;
    const double fp = f(xp);
    xp[d] = orig - h;
    const double fm = f(xp);
    xp[d] = orig;
    g[d] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Golden-section minimizer over [lo, hi], the oracle for closed-form
// one-dimensional minimizers.
inline double golden_section_min(const std::function<double(double)>& f,
                                 double lo, double hi, double tol) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace test_util
