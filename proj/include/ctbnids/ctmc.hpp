#ifndef CTBNIDS_CTMC_HPP
#define CTBNIDS_CTMC_HPP

// Finite-state homogeneous Markov processes: rate matrices, sampling,
// complete-data likelihood and MLE, message passing under interval
// evidence, expected sufficient statistics and EM.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ctbnids/chain.hpp"
#include "ctbnids/linalg.hpp"

namespace ctbnids::ctmc {

/// Intensity (rate) matrix of a homogeneous Markov process.
///
/// Only the off-diagonal entries of the matrix handed to the constructor are
/// read; the diagonal is always rebuilt as the negative row sum, so every
/// constructed value has exactly zero row sums up to rounding.
class IntensityMatrix {
 public:
  IntensityMatrix() = default;
  /// Throws InputError on non-finite or negative off-diagonal entries.
  explicit IntensityMatrix(const Matrix& rates);
  static IntensityMatrix zeros(int n);

  int size() const { return static_cast<int>(q_.rows()); }
  double rate(int from, int to) const { return q_(from, to); }
  double exit_rate(int x) const { return -q_(x, x); }
  /// theta_{xx'} = q_{xx'} / q_x; zero for absorbing states.
  double jump_probability(int from, int to) const;
  const Matrix& matrix() const { return q_; }

  bool operator==(const IntensityMatrix& other) const { return q_ == other.q_; }

 private:
  Matrix q_;
};

/// One observed sojourn: stayed in `state` for `dwell`, then moved to `next`.
struct Transition {
  int state = 0;
  double dwell = 0.0;
  int next = 0;
};

/// Complete record of a process on [0, horizon]. After the last transition
/// the process stays in final_state() until the horizon (a censored dwell).
struct Trajectory {
  int start_state = 0;
  double horizon = 0.0;
  std::vector<Transition> transitions;

  int final_state() const { return transitions.empty() ? start_state : transitions.back().next; }
  double censored_dwell() const;
  /// Throws InputError if the chain of states or the dwell times are inconsistent.
  void validate(int n) const;
};

/// Evidence that X stays inside `states` over [start, start + duration].
/// Zero duration is point evidence.
struct EvidenceSegment {
  std::vector<int> states;
  double start = 0.0;
  double duration = 0.0;
};

/// Partially observed trajectory. Segments are time ordered and do not
/// overlap; uncovered stretches of [0, horizon] carry no evidence.
///
/// Contiguous segments with disjoint state sets imply an observed
/// transition at the boundary; overlapping sets only restrict the state.
struct EvidenceTrajectory {
  std::vector<EvidenceSegment> segments;
  double horizon = 0.0;

  void validate(int n) const;
  /// Fully observed evidence equivalent to a complete trajectory.
  static EvidenceTrajectory from_trajectory(const Trajectory& traj);
};

/// Dwell totals T[x] and transition counts M[x, x']. Real valued, so the
/// same type carries expected statistics.
struct SufficientStatistics {
  Vector dwell;
  Matrix counts;

  SufficientStatistics() = default;
  explicit SufficientStatistics(int n) : dwell(Vector::Zero(n)), counts(Matrix::Zero(n, n)) {}

  int size() const { return static_cast<int>(dwell.size()); }
  double exits(int x) const { return counts.row(x).sum(); }
  SufficientStatistics& operator+=(const SufficientStatistics& other);
  SufficientStatistics& operator*=(double w);
};

/// Pseudo statistics for rows with a zero count or zero dwell time.
struct Regularization {
  double pseudo_count = 1e-3;
  double pseudo_time = 1e-3;

  static Regularization none() { return {0.0, 0.0}; }
};

// exp(Q t) with negative round-off clamped and rows renormalized.
Matrix transition_probabilities(const IntensityMatrix& q, double t);

Trajectory sample_trajectory(const IntensityMatrix& q, const Vector& initial, double horizon,
                             std::uint64_t seed);

SufficientStatistics suff_stats_complete(std::span<const Trajectory> data, int n);

/// Complete-data log-likelihood; -inf when a counted transition has zero rate.
double loglik_complete(const IntensityMatrix& q, const SufficientStatistics& ss);

IntensityMatrix mle_complete(const SufficientStatistics& ss, const Regularization& reg = {});

/// Forward-backward messages for one evidence trajectory. Holds the
/// breakpoint vectors alpha, alpha-, beta, beta+ (renormalized) with their
/// log scales and the log-evidence from each direction.
class MessagePass {
 public:
  struct Breakpoint {
    double time;
    RowVector alpha_minus;  // before the evidence at `time`
    RowVector alpha;        // after it
    Vector beta;            // includes the evidence at `time`
    Vector beta_plus;       // excludes it
  };

  explicit MessagePass(ForwardBackward fb) : fb_(std::move(fb)) {}

  double log_evidence() const { return fb_.log_evidence(); }
  double backward_log_evidence() const { return fb_.backward_log_evidence(); }
  bool impossible() const { return fb_.impossible(); }
  std::vector<Breakpoint> breakpoints() const;
  const ForwardBackward& messages() const { return fb_; }

 private:
  ForwardBackward fb_;
};

/// Builds the evidence chain. `initial` defaults to uniform; it is restricted
/// to the evidence at time 0 and renormalized, so the log-evidence is
/// log P(tau | X_0 in S_0).
ForwardBackward evidence_chain(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                               const std::optional<Vector>& initial = std::nullopt);

MessagePass message_pass(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                         const std::optional<Vector>& initial = std::nullopt);

struct EssOptions {
  IntegralMethod method = IntegralMethod::kBlockExponential;
  std::optional<Vector> initial;
};

struct ExpectedStatistics {
  SufficientStatistics stats;
  double log_evidence = 0.0;  // -inf when the evidence is impossible
};

ExpectedStatistics expected_statistics(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                                       const EssOptions& options = {});

/// Expected T[x], M[x, x'] given the evidence. Throws NumericalError when
/// the evidence has zero probability.
SufficientStatistics expected_suff_stats(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                                         const EssOptions& options = {});

/// P(X_t = x | evidence).
Vector smoothed_marginal(const MessagePass& mp, double t);

struct EmConfig {
  int max_iterations = 100;
  double tolerance = 1e-6;  // relative log-likelihood improvement
  Regularization regularization;
  IntegralMethod method = IntegralMethod::kBlockExponential;
};

struct EmResult {
  IntensityMatrix model;
  std::vector<double> log_likelihoods;  // one per E step; the last belongs to `model`
  int iterations = 0;                   // M steps taken
  bool converged = false;               // false when the iteration cap was hit
};

EmResult em_fit(std::span<const EvidenceTrajectory> data, const IntensityMatrix& init,
                const EmConfig& config = {});

/// Off-diagonal rates drawn log-uniformly from [lo, hi].
IntensityMatrix random_intensity_matrix(int n, std::uint64_t seed, double lo = 0.1,
                                        double hi = 10.0);

}  // namespace ctbnids::ctmc

#endif
