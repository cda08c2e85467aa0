#include "ctbnids/chain.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "ctbnids/errors.hpp"

namespace ctbnids {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// exp(A h) and, when wanted, the integral
//   integral_0^h exp(A (h - s)) B exp(A s) ds
// read off the upper-right block of exp([[A, B], [0, A]] h).
struct BlockExp {
  Matrix transition;
  Matrix integral;
};

BlockExp block_exponential(const Matrix& a, const Matrix& b, double h, IntegralMethod method) {
  const Eigen::Index d = a.rows();
  Matrix big = Matrix::Zero(2 * d, 2 * d);
  big.topLeftCorner(d, d) = a;
  big.bottomRightCorner(d, d) = a;
  big.topRightCorner(d, d) = b;
  Matrix e = method == IntegralMethod::kRungeKutta ? expm_runge_kutta(big, h) : expm(big * h);
  BlockExp out;
  out.transition = e.topLeftCorner(d, d);
  out.integral = e.topRightCorner(d, d);
  return out;
}

Matrix step_operator(const ChainStep& step) {
  if (step.kind == ChainStep::Kind::kJump) return *step.op;
  if (step.duration == 0.0) return Matrix::Identity(step.op->rows(), step.op->cols());
  return expm(*step.op * step.duration);
}

}  // namespace

ChainStep ChainStep::propagate(std::shared_ptr<const Matrix> generator, double start,
                               double duration, int tag) {
  ChainStep s;
  s.kind = Kind::kPropagate;
  s.op = std::move(generator);
  s.start = start;
  s.duration = duration;
  s.tag = tag;
  return s;
}

ChainStep ChainStep::jump(std::shared_ptr<const Matrix> matrix, double time, int tag) {
  ChainStep s;
  s.kind = Kind::kJump;
  s.op = std::move(matrix);
  s.start = time;
  s.tag = tag;
  return s;
}

ForwardBackward::ForwardBackward(RowVector initial, std::vector<ChainStep> steps)
    : steps_(std::move(steps)), log_evidence_(kNegInf), backward_log_evidence_(kNegInf) {
  end_time_ = steps_.empty() ? 0.0 : steps_.back().start + steps_.back().duration;
  alpha_.reserve(steps_.size() + 1);
  alpha_scale_.reserve(steps_.size() + 1);

  const double mass = initial.sum();
  if (!(mass > 0.0)) return;
  alpha_.push_back(initial / mass);
  alpha_scale_.push_back(std::log(mass));

  for (const ChainStep& step : steps_) {
    RowVector next = (alpha_.back() * step_operator(step)).cwiseMax(0.0);
    const double c = next.sum();
    if (!(c > 0.0)) return;
    alpha_scale_.push_back(alpha_scale_.back() + std::log(c));
    alpha_.push_back(next / c);
  }
  log_evidence_ = alpha_scale_.back();
}

bool ForwardBackward::impossible() const { return log_evidence_ == kNegInf; }

double ForwardBackward::position_time(std::size_t p) const {
  return p < steps_.size() ? steps_[p].start : end_time_;
}

void ForwardBackward::backward(IntegralMethod method, const StepVisitor& visit) {
  if (impossible()) throw NumericalError("backward pass on zero-probability evidence");
  const std::size_t k = steps_.size();
  beta_.assign(k + 1, Vector());
  beta_scale_.assign(k + 1, 0.0);

  const Eigen::Index d_end = alpha_[k].size();
  beta_[k] = Vector::Constant(d_end, 1.0 / static_cast<double>(d_end));
  beta_scale_[k] = std::log(static_cast<double>(d_end));

  for (std::size_t i = k; i-- > 0;) {
    const ChainStep& step = steps_[i];
    const double scale = std::exp(alpha_scale_[i] + beta_scale_[i + 1] - log_evidence_);
    Vector prev;
    if (step.kind == ChainStep::Kind::kJump) {
      prev = *step.op * beta_[i + 1];
      if (visit) {
        Matrix flow = alpha_[i].transpose().asDiagonal() * (*step.op) *
                      beta_[i + 1].asDiagonal();
        visit(i, flow * scale);
      }
    } else if (visit) {
      const Matrix outer = beta_[i + 1] * alpha_[i];
      BlockExp be = block_exponential(*step.op, outer, step.duration, method);
      prev = be.transition * beta_[i + 1];
      visit(i, be.integral.transpose() * scale);
    } else {
      prev = step_operator(step) * beta_[i + 1];
    }
    prev = prev.cwiseMax(0.0);
    const double c = prev.sum();
    if (!(c > 0.0)) throw NumericalError("backward messages vanished");
    beta_[i] = prev / c;
    beta_scale_[i] = beta_scale_[i + 1] + std::log(c);
  }
  backward_log_evidence_ = alpha_scale_[0] + beta_scale_[0] + std::log(alpha_[0].dot(beta_[0]));
}

Vector ForwardBackward::marginal(double t) const {
  if (!has_backward()) throw std::logic_error("marginal() requires backward()");
  const std::size_t k = steps_.size();
  std::size_t p = 0;
  while (p < k && position_time(p) < t) ++p;
  Vector joint;
  if (p == k && t > end_time_) throw std::out_of_range("time beyond the evidence horizon");
  if (position_time(p) == t || p == 0) {
    joint = alpha_[p].transpose().cwiseProduct(beta_[p]);
  } else {
    const ChainStep& step = steps_[p - 1];
    const Matrix& a = *step.op;
    const RowVector fwd = alpha_[p - 1] * expm(a * (t - step.start));
    const Vector bwd = expm(a * (step.start + step.duration - t)) * beta_[p];
    joint = fwd.transpose().cwiseProduct(bwd);
  }
  joint = joint.cwiseMax(0.0);
  const double total = joint.sum();
  if (!(total > 0.0)) throw NumericalError("smoothed marginal has zero mass");
  return joint / total;
}

double propagate_forward(RowVector& alpha, std::span<const ChainStep> steps) {
  double log_mass = 0.0;
  for (const ChainStep& step : steps) {
    RowVector next = (alpha * step_operator(step)).cwiseMax(0.0);
    const double c = next.sum();
    if (!(c > 0.0)) return kNegInf;
    log_mass += std::log(c);
    alpha = next / c;
  }
  return log_mass;
}

}  // namespace ctbnids
