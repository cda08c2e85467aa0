#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ctbnids/chain.hpp"
#include "ctbnids/errors.hpp"
#include "ctbnids/linalg.hpp"
#include "ctbnids/random.hpp"
#include "ctbnids/text.hpp"
#include "oracles.hpp"

using namespace ctbnids;

TEST_CASE("expm matches the two-state closed form") {
  for (double t : {0.0, 0.01, 0.5, 3.0, 40.0}) {
    Matrix q(2, 2);
    q << -1.5, 1.5, 0.25, -0.25;
    const Matrix p = expm(q * t);
    const Matrix ref = oracle::two_state_transition(1.5, 0.25, t);
    CHECK((p - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("expm and the Runge-Kutta route agree") {
  Matrix q(3, 3);
  q << -2.0, 1.5, 0.5, 0.1, -0.3, 0.2, 4.0, 0.0, -4.0;
  for (double t : {0.1, 1.0, 7.5}) {
    const Matrix a = expm(q * t);
    const Matrix b = expm_runge_kutta(q, t, 1e-10);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-7);
    // Rows of a stochastic matrix sum to one.
    CHECK((a.rowwise().sum() - Vector::Ones(3)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("log_add") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(log_add(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)));
  CHECK(log_add(-inf, 1.5) == 1.5);
  CHECK(log_add(2.0, -inf) == 2.0);
  CHECK(log_add(-inf, -inf) == -inf);
  CHECK(log_add(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(7, 1) == derive_seed(7, 1));
  CHECK(derive_seed(7, "a") == derive_seed(7, "a"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(3, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(3, 1, 0) != derive_seed(3, 1, 1));
  CHECK(derive_seed(3, "x") != derive_seed(3, "y"));
}

TEST_CASE("uniform and exponential draws") {
  Rng rng(11);
  double sum = 0.0, lo = 1.0, hi = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += exponential(rng, 4.0);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  // Mean 1/4 with standard error 0.25/sqrt(n).
  CHECK(std::abs(sum / n - 0.25) < 5 * 0.25 / std::sqrt(n));
  CHECK(std::isinf(exponential(rng, 0.0)));
}

TEST_CASE("number formatting round trips") {
  for (double x : {0.1, 1e-300, 123456.789, -2.5, 1.0 / 3.0}) {
    CHECK(text::parse_number(text::format_number(x), "t") == x);
  }
  CHECK(text::parse_number(" +3.5 ", "t") == 3.5);
  CHECK_THROWS_AS(text::parse_number("3.5x", "t"), InputError);
  CHECK_THROWS_AS(text::parse_number("", "t"), InputError);
  CHECK(text::parse_integer("42", "t") == 42);
  CHECK_THROWS_AS(text::parse_integer("4.2", "t"), InputError);
  CHECK(text::split("a,,b", ',').size() == 3);
  CHECK(text::tokens("  a \t b  ").size() == 2);
}

namespace {

std::shared_ptr<const Matrix> shared(const Matrix& m) { return std::make_shared<const Matrix>(m); }

}  // namespace

TEST_CASE("forward-backward evidence matches a direct product") {
  Matrix q(2, 2);
  q << -1.0, 1.0, 2.0, -2.0;
  Matrix r0 = Matrix::Zero(2, 2);
  r0(0, 0) = 1.0;
  std::vector<ChainStep> steps{ChainStep::propagate(shared(q), 0.0, 0.7),
                               ChainStep::jump(shared(r0), 0.7),
                               ChainStep::propagate(shared(q), 0.7, 1.3)};
  RowVector init(2);
  init << 0.3, 0.7;
  ForwardBackward fb(init, steps);
  const double direct =
      (init * oracle::two_state_transition(1.0, 2.0, 0.7) * r0 * oracle::two_state_transition(1.0, 2.0, 1.3))
          .sum();
  CHECK(fb.log_evidence() == doctest::Approx(std::log(direct)).epsilon(1e-12));
  fb.backward();
  CHECK(fb.backward_log_evidence() == doctest::Approx(fb.log_evidence()).epsilon(1e-12));

  // The marginal right after the restriction is a point mass.
  const Vector m = fb.marginal(1.0);
  CHECK(m.sum() == doctest::Approx(1.0));
  const Vector at = fb.marginal(0.7);
  CHECK(at(0) == doctest::Approx(1.0));

  RowVector alpha = init;
  const double lf = propagate_forward(alpha, steps);
  CHECK(lf == doctest::Approx(std::log(direct)).epsilon(1e-12));
}

TEST_CASE("interval integrals match quadrature and the ODE route") {
  Matrix q(3, 3);
  q << -1.0, 0.6, 0.4, 0.3, -0.5, 0.2, 0.0, 2.0, -2.0;
  const double h = 1.7;
  RowVector init(3);
  init << 0.2, 0.5, 0.3;
  Matrix r = Matrix::Zero(3, 3);
  r(1, 1) = 1.0;
  r(2, 2) = 1.0;
  std::vector<ChainStep> steps{ChainStep::propagate(shared(q), 0.0, h), ChainStep::jump(shared(r), h)};

  std::vector<Matrix> block(2), rk(2);
  ForwardBackward fb(init, steps);
  fb.backward(IntegralMethod::kBlockExponential, [&](std::size_t s, const Matrix& occ) { block[s] = occ; });
  ForwardBackward fb2(init, steps);
  fb2.backward(IntegralMethod::kRungeKutta, [&](std::size_t s, const Matrix& occ) { rk[s] = occ; });

  // Simpson's rule on alpha_t(x) beta_t(y) / P.
  const Vector end = r * Vector::Ones(3);
  const double p = (init * expm(q * h) * end)(0);
  const int n = 2000;
  Matrix quad = Matrix::Zero(3, 3);
  for (int i = 0; i <= n; ++i) {
    const double t = h * i / n;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const RowVector a = init * expm(q * t);
    const Vector b = expm(q * (h - t)) * end;
    quad += w * (a.transpose() * b.transpose());
  }
  quad *= h / (3.0 * n) / p;
  CHECK((block[0] - quad).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((rk[0] - quad).cwiseAbs().maxCoeff() < 1e-5);
  // Expected dwell times add up to the duration.
  CHECK(block[0].diagonal().sum() == doctest::Approx(h).epsilon(1e-12));
  // Jump occupancy is the posterior of passing through each entry.
  CHECK(block[1].sum() == doctest::Approx(1.0));
}

TEST_CASE("impossible evidence") {
  Matrix q(2, 2);
  q << 0.0, 0.0, 0.0, 0.0;
  Matrix only1 = Matrix::Zero(2, 2);
  only1(1, 1) = 1.0;
  RowVector init(2);
  init << 1.0, 0.0;
  ForwardBackward fb(init, {ChainStep::propagate(shared(q), 0.0, 1.0), ChainStep::jump(shared(only1), 1.0)});
  CHECK(fb.impossible());
  CHECK(std::isinf(fb.log_evidence()));
}
