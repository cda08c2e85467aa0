#include "ctbnids/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace ctbnids {

Matrix expm(const Matrix& a) {
  if (a.size() == 0) return a;
  if (a.rows() == 1) return Matrix::Constant(1, 1, std::exp(a(0, 0)));
  return a.exp();
}

Matrix expm_runge_kutta(const Matrix& a, double t, double rel_tol, int min_steps) {
  const Eigen::Index n = a.rows();
  Matrix x = Matrix::Identity(n, n);
  if (t <= 0.0) return x;

  // Dormand-Prince 5(4) tableau.
  constexpr double c21 = 1.0 / 5.0;
  constexpr double c31 = 3.0 / 40.0, c32 = 9.0 / 40.0;
  constexpr double c41 = 44.0 / 45.0, c42 = -56.0 / 15.0, c43 = 32.0 / 9.0;
  constexpr double c51 = 19372.0 / 6561.0, c52 = -25360.0 / 2187.0,
                   c53 = 64448.0 / 6561.0, c54 = -212.0 / 729.0;
  constexpr double c61 = 9017.0 / 3168.0, c62 = -355.0 / 33.0, c63 = 46732.0 / 5247.0,
                   c64 = 49.0 / 176.0, c65 = -5103.0 / 18656.0;
  constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                   b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
  constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                   e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
  constexpr double abs_tol = 1e-14;

  const double max_step = t / std::max(min_steps, 1);
  double h = max_step;
  double now = 0.0;
  Matrix k1 = a * x;
  while (now < t) {
    h = std::min({h, max_step, t - now});
    const Matrix k2 = a * (x + h * c21 * k1);
    const Matrix k3 = a * (x + h * (c31 * k1 + c32 * k2));
    const Matrix k4 = a * (x + h * (c41 * k1 + c42 * k2 + c43 * k3));
    const Matrix k5 = a * (x + h * (c51 * k1 + c52 * k2 + c53 * k3 + c54 * k4));
    const Matrix k6 = a * (x + h * (c61 * k1 + c62 * k2 + c63 * k3 + c64 * k4 + c65 * k5));
    Matrix next = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Matrix k7 = a * next;
    const Matrix err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const Matrix scale =
        (abs_tol + rel_tol * x.cwiseAbs().cwiseMax(next.cwiseAbs()).array()).matrix();
    const double err_norm = (err.cwiseQuotient(scale)).cwiseAbs().maxCoeff();
    if (err_norm <= 1.0 || h < 1e-14 * t) {
      now += h;
      x = std::move(next);
      k1 = k7;
      const double grow = err_norm == 0.0 ? 5.0 : 0.9 * std::pow(err_norm, -0.2);
      h *= std::clamp(grow, 0.2, 5.0);
    } else {
      h *= std::max(0.2, 0.9 * std::pow(err_norm, -0.2));
    }
  }
  return x;
}

double log_add(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace ctbnids
