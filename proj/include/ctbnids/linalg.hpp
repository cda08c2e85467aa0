#ifndef CTBNIDS_LINALG_HPP
#define CTBNIDS_LINALG_HPP

#include <Eigen/Dense>

namespace ctbnids {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Matrix exponential exp(a) by scaling and squaring with a Padé core.
Matrix expm(const Matrix& a);

/// exp(a * t) obtained by integrating X' = a X, X(0) = I with an adaptive
/// Dormand-Prince 5(4) scheme. Slower than expm(); kept as an independent
/// ODE route for the interval integrals.
Matrix expm_runge_kutta(const Matrix& a, double t, double rel_tol = 1e-6,
                        int min_steps = 32);

// log(exp(a) + exp(b)) without overflow; handles -inf.
double log_add(double a, double b);

}  // namespace ctbnids

#endif
