#include "ctbnids/ctbn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ctbnids/errors.hpp"
#include "ctbnids/random.hpp"

namespace ctbnids::ctbn {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int sample_index(Rng& rng, const Eigen::Ref<const RowVector>& weights) {
  const double total = weights.sum();
  double u = uniform01(rng) * total;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) <= 0.0) continue;
    if (u < weights(i)) return static_cast<int>(i);
    u -= weights(i);
  }
  for (Eigen::Index i = weights.size(); i-- > 0;)
    if (weights(i) > 0.0) return static_cast<int>(i);
  return 0;
}

}  // namespace

int CtbnModel::add_variable(const std::string& name, int cardinality, bool toggle) {
  if (name.empty() || name.find_first_of(" \t\n=") != std::string::npos)
    throw InputError("invalid variable name '" + name + "'");
  if (cardinality < 1 || (cardinality < 2 && !toggle))
    throw InputError("variable '" + name + "' needs at least 2 states");
  if (find(name)) throw InputError("duplicate variable '" + name + "'");
  variables_.push_back({name, cardinality, toggle});
  cims_.push_back({{}, {ctmc::IntensityMatrix::zeros(cardinality)}});
  initial_.push_back(Vector::Constant(cardinality, 1.0 / cardinality));
  children_.emplace_back();
  return size() - 1;
}

void CtbnModel::set_cim(int var, std::vector<int> parents,
                        std::vector<ctmc::IntensityMatrix> matrices) {
  if (var < 0 || var >= size()) throw InputError("unknown variable id");
  long long instantiations = 1;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const int p = parents[i];
    if (p < 0 || p >= size()) throw InputError("unknown parent id");
    if (p == var) throw InputError("a variable cannot be its own parent");
    if (std::find(parents.begin(), parents.begin() + i, p) != parents.begin() + i)
      throw InputError("duplicate parent");
    instantiations *= variables_[p].cardinality;
  }
  if (static_cast<long long>(matrices.size()) != instantiations)
    throw InputError("CIM of '" + variables_[var].name + "' needs " +
                     std::to_string(instantiations) + " matrices, got " +
                     std::to_string(matrices.size()));
  for (const auto& m : matrices)
    if (m.size() != variables_[var].cardinality)
      throw InputError("CIM matrix of '" + variables_[var].name + "' has the wrong size");

  for (int p : cims_[var].parents) {
    auto& ch = children_[p];
    ch.erase(std::remove(ch.begin(), ch.end(), var), ch.end());
  }
  for (int p : parents) children_[p].push_back(var);
  for (auto& ch : children_) std::sort(ch.begin(), ch.end());
  cims_[var] = {std::move(parents), std::move(matrices)};
}

void CtbnModel::set_initial(int var, const Vector& distribution) {
  if (var < 0 || var >= size()) throw InputError("unknown variable id");
  if (distribution.size() != variables_[var].cardinality)
    throw InputError("initial distribution of '" + variables_[var].name + "' has the wrong size");
  if ((distribution.array() < 0.0).any() || !distribution.allFinite() ||
      std::abs(distribution.sum() - 1.0) > 1e-9)
    throw InputError("initial distribution of '" + variables_[var].name +
                     "' is not a probability vector");
  initial_[var] = distribution;
}

std::optional<int> CtbnModel::find(const std::string& name) const {
  for (int v = 0; v < size(); ++v)
    if (variables_[v].name == name) return v;
  return std::nullopt;
}

int CtbnModel::parent_instantiations(int v) const {
  int n = 1;
  for (int p : cims_[v].parents) n *= variables_[p].cardinality;
  return n;
}

int CtbnModel::parent_index(int v, std::span<const int> values) const {
  int u = 0;
  for (int p : cims_[v].parents) u = u * variables_[p].cardinality + values[p];
  return u;
}

std::vector<int> CtbnModel::parent_values(int v, int u) const {
  const auto& parents = cims_[v].parents;
  std::vector<int> out(parents.size());
  for (std::size_t i = parents.size(); i-- > 0;) {
    const int card = variables_[parents[i]].cardinality;
    out[i] = u % card;
    u /= card;
  }
  return out;
}

bool CtbnModel::operator==(const CtbnModel& other) const {
  if (size() != other.size() || meta_ != other.meta_) return false;
  for (int v = 0; v < size(); ++v) {
    const Variable& a = variables_[v];
    const Variable& b = other.variables_[v];
    if (a.name != b.name || a.cardinality != b.cardinality || a.toggle != b.toggle) return false;
    if (cims_[v].parents != other.cims_[v].parents) return false;
    if (cims_[v].matrices != other.cims_[v].matrices) return false;
    if (initial_[v] != other.initial_[v]) return false;
  }
  return true;
}

void JointTrajectory::validate(const CtbnModel& model) const {
  auto bad = [](const std::string& what) { throw InputError("invalid joint trajectory: " + what); };
  if (static_cast<int>(initial.size()) != model.size()) bad("initial state has the wrong size");
  std::vector<int> values = initial;
  for (int v = 0; v < model.size(); ++v)
    if (values[v] < 0 || values[v] >= model.variable(v).cardinality) bad("value out of range");
  double last = -std::numeric_limits<double>::infinity();
  for (const JointEvent& e : events) {
    if (e.variable < 0 || e.variable >= model.size())
      bad("unknown variable id " + std::to_string(e.variable));
    if (e.value < 0 || e.value >= model.variable(e.variable).cardinality) bad("value out of range");
    if (e.value == values[e.variable]) bad("event does not change its variable");
    if (!(e.time > last)) bad("event times must be strictly increasing");
    if (e.time < 0.0 || e.time > horizon) bad("event outside [0, horizon]");
    last = e.time;
    values[e.variable] = e.value;
  }
}

std::vector<int> JointTrajectory::state_after(std::size_t n_events) const {
  std::vector<int> values = initial;
  for (std::size_t i = 0; i < n_events && i < events.size(); ++i)
    values[events[i].variable] = events[i].value;
  return values;
}

ConditionalSuffStats::ConditionalSuffStats(const CtbnModel& model) {
  stats.resize(model.size());
  for (int v = 0; v < model.size(); ++v)
    stats[v].assign(model.parent_instantiations(v),
                    ctmc::SufficientStatistics(model.variable(v).cardinality));
}

ConditionalSuffStats& ConditionalSuffStats::operator+=(const ConditionalSuffStats& other) {
  if (stats.empty()) {
    stats = other.stats;
    return *this;
  }
  for (std::size_t v = 0; v < stats.size(); ++v)
    for (std::size_t u = 0; u < stats[v].size(); ++u) stats[v][u] += other.stats[v][u];
  return *this;
}

long long joint_size(const CtbnModel& model) {
  long long n = 1;
  for (const Variable& v : model.variables()) {
    if (n > std::numeric_limits<long long>::max() / v.cardinality)
      return std::numeric_limits<long long>::max();
    n *= v.cardinality;
  }
  return n;
}

int joint_index(const CtbnModel& model, std::span<const int> values) {
  int index = 0;
  for (int v = model.size(); v-- > 0;) index = index * model.variable(v).cardinality + values[v];
  return index;
}

std::vector<int> joint_values(const CtbnModel& model, int index) {
  std::vector<int> values(model.size());
  for (int v = 0; v < model.size(); ++v) {
    const int card = model.variable(v).cardinality;
    values[v] = index % card;
    index /= card;
  }
  return values;
}

static void check_cap(const CtbnModel& model, const AmalgamationOptions& options) {
  const long long n = joint_size(model);
  if (n <= options.max_states) return;
  std::string product;
  for (const Variable& v : model.variables())
    product += (product.empty() ? "" : " x ") + std::to_string(v.cardinality);
  throw std::length_error("joint state space " + product + " = " +
                          (n == std::numeric_limits<long long>::max() ? std::string("overflow")
                                                                      : std::to_string(n)) +
                          " states exceeds the cap of " + std::to_string(options.max_states));
}

ctmc::IntensityMatrix amalgamate(const CtbnModel& model, const AmalgamationOptions& options) {
  check_cap(model, options);
  const int n = static_cast<int>(joint_size(model));
  Matrix rates = Matrix::Zero(n, n);
  std::vector<int> stride(model.size(), 1);
  for (int v = 1; v < model.size(); ++v)
    stride[v] = stride[v - 1] * model.variable(v - 1).cardinality;
  for (int s = 0; s < n; ++s) {
    const std::vector<int> values = joint_values(model, s);
    for (int v = 0; v < model.size(); ++v) {
      const ctmc::IntensityMatrix& q = model.conditional(v, values);
      const int x = values[v];
      for (int y = 0; y < model.variable(v).cardinality; ++y)
        if (y != x) rates(s, s + (y - x) * stride[v]) = q.rate(x, y);
    }
  }
  return ctmc::IntensityMatrix(rates);
}

Vector joint_initial(const CtbnModel& model, const AmalgamationOptions& options) {
  check_cap(model, options);
  const int n = static_cast<int>(joint_size(model));
  Vector p(n);
  for (int s = 0; s < n; ++s) {
    const std::vector<int> values = joint_values(model, s);
    double prob = 1.0;
    for (int v = 0; v < model.size(); ++v) prob *= model.initial(v)(values[v]);
    p(s) = prob;
  }
  return p;
}

JointTrajectory forward_sample(const CtbnModel& model, double horizon, std::uint64_t seed) {
  if (!(horizon > 0.0)) throw InputError("horizon must be positive");
  Rng rng(seed);
  JointTrajectory traj;
  traj.horizon = horizon;
  const int nv = model.size();
  traj.initial.resize(nv);
  for (int v = 0; v < nv; ++v) traj.initial[v] = sample_index(rng, model.initial(v).transpose());

  std::vector<int> values = traj.initial;
  std::vector<double> next(nv);
  auto redraw = [&](int v, double now) {
    next[v] = now + exponential(rng, model.conditional(v, values).exit_rate(values[v]));
  };
  for (int v = 0; v < nv; ++v) redraw(v, 0.0);

  for (;;) {
    const int v = static_cast<int>(std::min_element(next.begin(), next.end()) - next.begin());
    const double t = next[v];
    if (!(t < horizon)) break;
    RowVector row = model.conditional(v, values).matrix().row(values[v]);
    row(values[v]) = 0.0;
    const int value = sample_index(rng, row);
    traj.events.push_back({t, v, value});
    values[v] = value;
    redraw(v, t);
    for (int c : model.children(v)) redraw(c, t);
  }
  return traj;
}

ConditionalSuffStats ctbn_suff_stats(const CtbnModel& model, const JointTrajectory& traj) {
  traj.validate(model);
  ConditionalSuffStats ss(model);
  std::vector<int> values = traj.initial;
  std::vector<int> u(model.size());
  for (int v = 0; v < model.size(); ++v) u[v] = model.parent_index(v, values);
  double t = 0.0;
  auto accumulate_dwell = [&](double until) {
    const double dt = until - t;
    for (int v = 0; v < model.size(); ++v) ss.stats[v][u[v]].dwell(values[v]) += dt;
    t = until;
  };
  for (const JointEvent& e : traj.events) {
    accumulate_dwell(e.time);
    ss.stats[e.variable][u[e.variable]].counts(values[e.variable], e.value) += 1.0;
    values[e.variable] = e.value;
    for (int c : model.children(e.variable)) u[c] = model.parent_index(c, values);
  }
  accumulate_dwell(traj.horizon);
  return ss;
}

CtbnModel ctbn_mle(const CtbnModel& model, const ConditionalSuffStats& ss,
                   const ctmc::Regularization& reg) {
  CtbnModel out = model;
  for (int v = 0; v < model.size(); ++v) {
    std::vector<ctmc::IntensityMatrix> matrices;
    for (const auto& s : ss.stats.at(v)) matrices.push_back(ctmc::mle_complete(s, reg));
    out.set_cim(v, model.cim(v).parents, std::move(matrices));
  }
  return out;
}

double ctbn_loglik(const CtbnModel& model, const ConditionalSuffStats& ss) {
  double ll = 0.0;
  for (int v = 0; v < model.size(); ++v)
    for (std::size_t u = 0; u < ss.stats[v].size(); ++u) {
      ll += ctmc::loglik_complete(model.cim(v).matrices[u], ss.stats[v][u]);
      if (ll == kNegInf) return ll;
    }
  return ll;
}

ctmc::Trajectory flatten(const CtbnModel& model, const JointTrajectory& traj) {
  traj.validate(model);
  ctmc::Trajectory out;
  out.horizon = traj.horizon;
  std::vector<int> values = traj.initial;
  out.start_state = joint_index(model, values);
  int state = out.start_state;
  double t = 0.0;
  for (const JointEvent& e : traj.events) {
    values[e.variable] = e.value;
    const int next = joint_index(model, values);
    out.transitions.push_back({state, e.time - t, next});
    state = next;
    t = e.time;
  }
  return out;
}

ctmc::EvidenceTrajectory observe(const CtbnModel& model, const JointTrajectory& traj,
                                 std::span<const int> observed) {
  traj.validate(model);
  const int n = static_cast<int>(joint_size(model));
  std::vector<bool> is_observed(model.size(), false);
  for (int v : observed) is_observed.at(v) = true;

  auto subset = [&](const std::vector<int>& values) {
    std::vector<int> states;
    for (int s = 0; s < n; ++s) {
      const std::vector<int> joint = joint_values(model, s);
      bool match = true;
      for (int v = 0; v < model.size() && match; ++v)
        if (is_observed[v] && joint[v] != values[v]) match = false;
      if (match) states.push_back(s);
    }
    return states;
  };

  ctmc::EvidenceTrajectory ev;
  ev.horizon = traj.horizon;
  std::vector<int> values = traj.initial;
  double start = 0.0;
  for (const JointEvent& e : traj.events) {
    const bool visible = is_observed[e.variable];
    if (visible) {
      ev.segments.push_back({subset(values), start, e.time - start});
      start = e.time;
    }
    values[e.variable] = e.value;
  }
  ev.segments.push_back({subset(values), start, traj.horizon - start});
  return ev;
}

ConditionalSuffStats project_joint_stats(const CtbnModel& model,
                                         const ctmc::SufficientStatistics& joint) {
  ConditionalSuffStats ss(model);
  const int n = joint.size();
  std::vector<int> stride(model.size(), 1);
  for (int v = 1; v < model.size(); ++v)
    stride[v] = stride[v - 1] * model.variable(v - 1).cardinality;
  for (int s = 0; s < n; ++s) {
    const std::vector<int> values = joint_values(model, s);
    for (int v = 0; v < model.size(); ++v) {
      auto& target = ss.stats[v][model.parent_index(v, values)];
      const int x = values[v];
      target.dwell(x) += joint.dwell(s);
      for (int y = 0; y < model.variable(v).cardinality; ++y)
        if (y != x) target.counts(x, y) += joint.counts(s, s + (y - x) * stride[v]);
    }
  }
  return ss;
}

ExactEmResult exact_em(const CtbnModel& init, std::span<const ctmc::EvidenceTrajectory> data,
                       const ctmc::EmConfig& config, const AmalgamationOptions& options) {
  if (config.max_iterations < 0) throw InputError("max_iterations must be >= 0");
  ExactEmResult result{init, {}, 0, false};
  ctmc::EssOptions ess;
  ess.method = config.method;
  ess.initial = joint_initial(init, options);
  for (int it = 0;; ++it) {
    const ctmc::IntensityMatrix q = amalgamate(result.model, options);
    ctmc::SufficientStatistics total(q.size());
    double ll = 0.0;
    for (const auto& ev : data) {
      ctmc::ExpectedStatistics es = ctmc::expected_statistics(q, ev, ess);
      if (es.log_evidence == kNegInf)
        throw NumericalError("evidence has zero probability under the current model");
      total += es.stats;
      ll += es.log_evidence;
    }
    result.log_likelihoods.push_back(ll);
    if (it > 0) {
      const double prev = result.log_likelihoods[it - 1];
      if ((ll - prev) / std::max(std::abs(prev), 1e-300) < config.tolerance) {
        result.converged = true;
        break;
      }
    }
    if (it == config.max_iterations) break;
    result.model = ctbn_mle(result.model, project_joint_stats(result.model, total),
                            config.regularization);
    result.iterations = it + 1;
  }
  return result;
}

}  // namespace ctbnids::ctbn
