#include "ctbnids/ctmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>

#include "ctbnids/errors.hpp"
#include "ctbnids/random.hpp"

namespace ctbnids::ctmc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool same_time(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

int sample_categorical(Rng& rng, const Eigen::Ref<const RowVector>& weights) {
  const double total = weights.sum();
  double u = uniform01(rng) * total;
  const Eigen::Index n = weights.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights(i) <= 0.0) continue;
    if (u < weights(i)) return static_cast<int>(i);
    u -= weights(i);
  }
  // Round-off: fall back to the last positive entry.
  for (Eigen::Index i = n; i-- > 0;)
    if (weights(i) > 0.0) return static_cast<int>(i);
  return 0;
}

bool disjoint(const std::vector<int>& a, const std::vector<int>& b) {
  for (int x : a)
    if (std::find(b.begin(), b.end(), x) != b.end()) return false;
  return true;
}

// Builds and caches the generator pieces for one evidence trajectory.
class EvidenceMatrices {
 public:
  explicit EvidenceMatrices(const IntensityMatrix& q) : q_(q) {}

  std::shared_ptr<const Matrix> full() {
    if (!full_) full_ = std::make_shared<const Matrix>(q_.matrix());
    return full_;
  }

  // Q_S: transitions into or out of S removed, diagonal kept.
  std::shared_ptr<const Matrix> restricted(const std::vector<int>& s) {
    auto& slot = restricted_[s];
    if (!slot) {
      Matrix m = Matrix::Zero(q_.size(), q_.size());
      for (int x : s)
        for (int y : s) m(x, y) = q_.matrix()(x, y);
      slot = std::make_shared<const Matrix>(std::move(m));
    }
    return slot;
  }

  // Q_{SS'}: only S -> S' transitions.
  std::shared_ptr<const Matrix> transfer(const std::vector<int>& from, const std::vector<int>& to) {
    Matrix m = Matrix::Zero(q_.size(), q_.size());
    for (int x : from)
      for (int y : to)
        if (x != y) m(x, y) = q_.rate(x, y);
    return std::make_shared<const Matrix>(std::move(m));
  }

  std::shared_ptr<const Matrix> restriction(const std::vector<int>& s) {
    auto& slot = restriction_[s];
    if (!slot) {
      Matrix m = Matrix::Zero(q_.size(), q_.size());
      for (int x : s) m(x, x) = 1.0;
      slot = std::make_shared<const Matrix>(std::move(m));
    }
    return slot;
  }

 private:
  const IntensityMatrix& q_;
  std::shared_ptr<const Matrix> full_;
  std::map<std::vector<int>, std::shared_ptr<const Matrix>> restricted_;
  std::map<std::vector<int>, std::shared_ptr<const Matrix>> restriction_;
};

}  // namespace

IntensityMatrix::IntensityMatrix(const Matrix& rates) {
  if (rates.rows() != rates.cols() || rates.rows() == 0)
    throw InputError("intensity matrix must be square and non-empty");
  const Eigen::Index n = rates.rows();
  q_ = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double exit = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double r = rates(i, j);
      if (!std::isfinite(r)) throw InputError("intensity matrix has a non-finite entry");
      if (r < 0.0) throw InputError("intensity matrix has a negative off-diagonal rate");
      q_(i, j) = r;
      exit += r;
    }
    q_(i, i) = -exit;
  }
}

IntensityMatrix IntensityMatrix::zeros(int n) { return IntensityMatrix(Matrix::Zero(n, n)); }

double IntensityMatrix::jump_probability(int from, int to) const {
  const double exit = exit_rate(from);
  if (from == to || exit <= 0.0) return 0.0;
  return q_(from, to) / exit;
}

double Trajectory::censored_dwell() const {
  double used = 0.0;
  for (const Transition& t : transitions) used += t.dwell;
  return std::max(0.0, horizon - used);
}

void Trajectory::validate(int n) const {
  auto bad = [](const std::string& what) { throw InputError("invalid trajectory: " + what); };
  if (start_state < 0 || start_state >= n) bad("start state out of range");
  int state = start_state;
  double used = 0.0;
  for (const Transition& t : transitions) {
    if (t.state != state) bad("transitions do not chain");
    if (t.next < 0 || t.next >= n) bad("state out of range");
    if (t.next == t.state) bad("self transition");
    if (!(t.dwell >= 0.0)) bad("negative dwell");
    used += t.dwell;
    state = t.next;
  }
  if (used > horizon * (1.0 + 1e-12) + 1e-12) bad("dwell times exceed the horizon");
}

void EvidenceTrajectory::validate(int n) const {
  auto bad = [](const std::string& what) { throw InputError("invalid evidence: " + what); };
  double cursor = 0.0;
  for (const EvidenceSegment& seg : segments) {
    if (seg.states.empty()) bad("empty state subset");
    for (int x : seg.states)
      if (x < 0 || x >= n) bad("state out of range");
    if (!(seg.duration >= 0.0)) bad("negative duration");
    if (seg.start < cursor && !same_time(seg.start, cursor)) bad("segments overlap or are unordered");
    cursor = seg.start + seg.duration;
  }
  if (cursor > horizon && !same_time(cursor, horizon)) bad("segments extend past the horizon");
}

EvidenceTrajectory EvidenceTrajectory::from_trajectory(const Trajectory& traj) {
  EvidenceTrajectory ev;
  ev.horizon = traj.horizon;
  double t = 0.0;
  for (const Transition& tr : traj.transitions) {
    ev.segments.push_back({{tr.state}, t, tr.dwell});
    t += tr.dwell;
  }
  ev.segments.push_back({{traj.final_state()}, t, traj.censored_dwell()});
  return ev;
}

SufficientStatistics& SufficientStatistics::operator+=(const SufficientStatistics& other) {
  if (dwell.size() == 0) {
    *this = other;
    return *this;
  }
  dwell += other.dwell;
  counts += other.counts;
  return *this;
}

SufficientStatistics& SufficientStatistics::operator*=(double w) {
  dwell *= w;
  counts *= w;
  return *this;
}

Matrix transition_probabilities(const IntensityMatrix& q, double t) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw InputError("duration must be finite and >= 0");
  Matrix p = expm(q.matrix() * t).cwiseMax(0.0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
  return p;
}

Trajectory sample_trajectory(const IntensityMatrix& q, const Vector& initial, double horizon,
                             std::uint64_t seed) {
  if (initial.size() != q.size()) throw InputError("initial distribution has the wrong size");
  if (!(horizon > 0.0)) throw InputError("horizon must be positive");
  Rng rng(seed);
  Trajectory traj;
  traj.horizon = horizon;
  traj.start_state = sample_categorical(rng, initial.transpose());
  int x = traj.start_state;
  double t = 0.0;
  for (;;) {
    const double dwell = exponential(rng, q.exit_rate(x));
    if (t + dwell >= horizon) break;
    RowVector row = q.matrix().row(x);
    row(x) = 0.0;
    const int next = sample_categorical(rng, row);
    traj.transitions.push_back({x, dwell, next});
    t += dwell;
    x = next;
  }
  return traj;
}

SufficientStatistics suff_stats_complete(std::span<const Trajectory> data, int n) {
  SufficientStatistics ss(n);
  for (const Trajectory& traj : data) {
    traj.validate(n);
    for (const Transition& t : traj.transitions) {
      ss.dwell(t.state) += t.dwell;
      ss.counts(t.state, t.next) += 1.0;
    }
    ss.dwell(traj.final_state()) += traj.censored_dwell();
  }
  return ss;
}

double loglik_complete(const IntensityMatrix& q, const SufficientStatistics& ss) {
  double ll = 0.0;
  const int n = q.size();
  for (int x = 0; x < n; ++x) {
    if (ss.dwell(x) > 0.0) ll -= q.exit_rate(x) * ss.dwell(x);
    for (int y = 0; y < n; ++y) {
      if (x == y || ss.counts(x, y) <= 0.0) continue;
      const double r = q.rate(x, y);
      if (r <= 0.0) return kNegInf;
      ll += ss.counts(x, y) * std::log(r);
    }
  }
  return ll;
}

IntensityMatrix mle_complete(const SufficientStatistics& ss, const Regularization& reg) {
  const int n = ss.size();
  Matrix rates = Matrix::Zero(n, n);
  if (n == 1) return IntensityMatrix(rates);
  for (int x = 0; x < n; ++x) {
    double time = ss.dwell(x);
    RowVector row = ss.counts.row(x);
    row(x) = 0.0;
    bool sparse = !(time > 0.0);
    for (int y = 0; y < n; ++y)
      if (y != x && !(row(y) > 0.0)) sparse = true;
    if (sparse) {
      for (int y = 0; y < n; ++y)
        if (y != x) row(y) += reg.pseudo_count / (n - 1);
      time += reg.pseudo_time;
    }
    if (!(time > 0.0)) {
      if (row.sum() > 0.0) throw InputError("transitions counted out of a state with zero dwell");
      continue;  // never visited, unregularized: absorbing
    }
    // q_x * theta_{xx'} = (M[x] / T[x]) * (M[x, x'] / M[x]).
    for (int y = 0; y < n; ++y)
      if (y != x) rates(x, y) = row(y) / time;
  }
  return IntensityMatrix(rates);
}

std::vector<MessagePass::Breakpoint> MessagePass::breakpoints() const {
  std::vector<Breakpoint> out;
  if (!fb_.has_backward()) return out;
  const auto& steps = fb_.steps();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].kind != ChainStep::Kind::kJump) continue;
    out.push_back({steps[i].start, fb_.alpha(i), fb_.alpha(i + 1), fb_.beta(i), fb_.beta(i + 1)});
  }
  return out;
}

ForwardBackward evidence_chain(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                               const std::optional<Vector>& initial) {
  const int n = q.size();
  ev.validate(n);
  EvidenceMatrices mats(q);

  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;

  RowVector init = initial ? RowVector(initial->transpose())
                           : RowVector::Constant(n, 1.0 / static_cast<double>(n));
  if (init.size() != n) throw InputError("initial distribution has the wrong size");

  std::vector<ChainStep> steps;
  double cursor = 0.0;
  const std::vector<int>* prev = nullptr;
  for (std::size_t i = 0; i < ev.segments.size(); ++i) {
    const EvidenceSegment& seg = ev.segments[i];
    std::vector<int> s = seg.states;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());

    if (i == 0 && same_time(seg.start, 0.0)) {
      // Condition on the evidence at time 0.
      RowVector masked = RowVector::Zero(n);
      for (int x : s) masked(x) = init(x);
      const double mass = masked.sum();
      init = mass > 0.0 ? RowVector(masked / mass) : masked;
    } else {
      if (!same_time(seg.start, cursor)) {
        steps.push_back(ChainStep::propagate(mats.full(), cursor, seg.start - cursor));
        prev = &all;
      }
      if (prev && disjoint(*prev, s)) {
        steps.push_back(ChainStep::jump(mats.transfer(*prev, s), seg.start));
      } else if (static_cast<int>(s.size()) < n) {
        steps.push_back(ChainStep::jump(mats.restriction(s), seg.start));
      }
    }
    if (seg.duration > 0.0)
      steps.push_back(ChainStep::propagate(mats.restricted(s), seg.start, seg.duration));
    cursor = seg.start + seg.duration;
    prev = &ev.segments[i].states;
  }
  if (ev.horizon > cursor && !same_time(ev.horizon, cursor))
    steps.push_back(ChainStep::propagate(mats.full(), cursor, ev.horizon - cursor));

  ForwardBackward fb(std::move(init), std::move(steps));
  fb.set_end_time(ev.horizon);
  return fb;
}

MessagePass message_pass(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                         const std::optional<Vector>& initial) {
  ForwardBackward fb = evidence_chain(q, ev, initial);
  if (!fb.impossible()) fb.backward();
  return MessagePass(std::move(fb));
}

ExpectedStatistics expected_statistics(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                                       const EssOptions& options) {
  const int n = q.size();
  ForwardBackward fb = evidence_chain(q, ev, options.initial);
  ExpectedStatistics out{SufficientStatistics(n), fb.log_evidence()};
  if (fb.impossible()) return out;
  const auto& steps = fb.steps();
  fb.backward(options.method, [&](std::size_t i, const Matrix& occ) {
    const ChainStep& step = steps[i];
    if (step.kind == ChainStep::Kind::kPropagate) {
      out.stats.dwell += occ.diagonal();
      Matrix flow = step.op->cwiseProduct(occ);
      flow.diagonal().setZero();
      out.stats.counts += flow;
    } else {
      Matrix flow = occ;
      flow.diagonal().setZero();
      out.stats.counts += flow;
    }
  });
  return out;
}

SufficientStatistics expected_suff_stats(const IntensityMatrix& q, const EvidenceTrajectory& ev,
                                         const EssOptions& options) {
  ExpectedStatistics es = expected_statistics(q, ev, options);
  if (es.log_evidence == kNegInf) throw NumericalError("evidence has zero probability under Q");
  return es.stats;
}

Vector smoothed_marginal(const MessagePass& mp, double t) {
  if (mp.impossible()) throw NumericalError("evidence has zero probability under Q");
  return mp.messages().marginal(t);
}

EmResult em_fit(std::span<const EvidenceTrajectory> data, const IntensityMatrix& init,
                const EmConfig& config) {
  if (config.max_iterations < 0) throw InputError("max_iterations must be >= 0");
  const int n = init.size();
  EmResult result;
  result.model = init;
  EssOptions ess;
  ess.method = config.method;
  for (int it = 0;; ++it) {
    SufficientStatistics total(n);
    double ll = 0.0;
    for (const EvidenceTrajectory& ev : data) {
      ExpectedStatistics es = expected_statistics(result.model, ev, ess);
      if (es.log_evidence == kNegInf)
        throw NumericalError("evidence has zero probability under the current model");
      total += es.stats;
      ll += es.log_evidence;
    }
    result.log_likelihoods.push_back(ll);
    if (it > 0) {
      const double prev = result.log_likelihoods[it - 1];
      const double rel = (ll - prev) / std::max(std::abs(prev), 1e-300);
      if (rel < config.tolerance) {
        result.converged = true;
        break;
      }
    }
    if (it == config.max_iterations) break;
    result.model = mle_complete(total, config.regularization);
    result.iterations = it + 1;
  }
  return result;
}

IntensityMatrix random_intensity_matrix(int n, std::uint64_t seed, double lo, double hi) {
  if (n < 1 || !(lo > 0.0) || !(hi >= lo)) throw InputError("invalid random rate range");
  Rng rng(seed);
  Matrix rates = Matrix::Zero(n, n);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) rates(i, j) = std::exp(llo + (lhi - llo) * uniform01(rng));
  return IntensityMatrix(rates);
}

}  // namespace ctbnids::ctmc
