#ifndef CTBNIDS_CHAIN_HPP
#define CTBNIDS_CHAIN_HPP

// Forward-backward message passing over a piecewise evidence chain.
//
// A chain is an initial row vector followed by a sequence of steps. A
// propagate step multiplies by exp(A h) for a (sub-)generator A that holds
// over a duration h; a jump step multiplies by a fixed, possibly rectangular,
// matrix J at an instant (evidence restriction, observed transition, state
// space embedding). The evidence probability is the total mass at the end.
//
// Forward vectors alpha and backward vectors beta are renormalized at every
// position and their log scales accumulated, so arbitrarily long traces do
// not underflow. Position p sits before step p; position K is the chain end.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ctbnids/linalg.hpp"

namespace ctbnids {

enum class IntegralMethod { kBlockExponential, kRungeKutta };

struct ChainStep {
  enum class Kind : unsigned char { kPropagate, kJump };

  Kind kind = Kind::kPropagate;
  std::shared_ptr<const Matrix> op;
  double start = 0.0;     // time at which the step begins
  double duration = 0.0;  // zero for jumps
  int tag = 0;            // caller bookkeeping, untouched here

  static ChainStep propagate(std::shared_ptr<const Matrix> generator, double start,
                             double duration, int tag = 0);
  static ChainStep jump(std::shared_ptr<const Matrix> matrix, double time, int tag = 0);
};

// Posterior quantities for one step, already divided by P(evidence).
//  propagate: occupancy(x, y) = (1/P) * integral over the step of
//             alpha_t(x) * beta_t(y); expected dwell in x is occupancy(x, x)
//             and expected x->y transitions are A(x, y) * occupancy(x, y).
//  jump:      occupancy(x, y) = (1/P) * alpha(x) J(x, y) beta(y), the
//             posterior probability of passing through entry (x, y).
using StepVisitor = std::function<void(std::size_t step, const Matrix& occupancy)>;

class ForwardBackward {
 public:
  ForwardBackward(RowVector initial, std::vector<ChainStep> steps);

  const std::vector<ChainStep>& steps() const { return steps_; }
  double end_time() const { return end_time_; }
  void set_end_time(double t) { end_time_ = t; }

  // log P(evidence) from the forward pass; -inf when the evidence is impossible.
  double log_evidence() const { return log_evidence_; }
  bool impossible() const;

  std::size_t positions() const { return steps_.size() + 1; }
  double position_time(std::size_t p) const;
  const RowVector& alpha(std::size_t p) const { return alpha_[p]; }
  double alpha_log_scale(std::size_t p) const { return alpha_scale_[p]; }

  // Backward pass. Without a visitor only beta is computed; with one, the
  // interval integrals are evaluated as well.
  void backward(IntegralMethod method = IntegralMethod::kBlockExponential,
                const StepVisitor& visit = {});
  bool has_backward() const { return !beta_.empty(); }
  const Vector& beta(std::size_t p) const { return beta_[p]; }
  double beta_log_scale(std::size_t p) const { return beta_scale_[p]; }
  double backward_log_evidence() const { return backward_log_evidence_; }

  // P(state at t | evidence). Requires backward().
  Vector marginal(double t) const;

 private:
  std::vector<ChainStep> steps_;
  double end_time_ = 0.0;
  std::vector<RowVector> alpha_;
  std::vector<double> alpha_scale_;
  std::vector<Vector> beta_;
  std::vector<double> beta_scale_;
  double log_evidence_;
  double backward_log_evidence_;
};

// Forward-only propagation without storage. alpha is renormalized in place;
// the return value is the log of the mass multiplier (-inf if all mass dies).
double propagate_forward(RowVector& alpha, std::span<const ChainStep> steps);

}  // namespace ctbnids

#endif
