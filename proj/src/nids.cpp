#include "ctbnids/nids.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "ctbnids/chain.hpp"
#include "ctbnids/errors.hpp"
#include "ctbnids/random.hpp"

namespace ctbnids::nids {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int kind_index(EventKind k) { return static_cast<int>(k); }

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uniform01(rng));
}

ctmc::IntensityMatrix random_rates(Rng& rng, int n, double lo, double hi) {
  Matrix m = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) m(i, j) = log_uniform(rng, lo, hi);
  return ctmc::IntensityMatrix(m);
}

std::string port_label(int port) { return port == kOtherPort ? "other" : std::to_string(port); }

// Chain operators of one submodel.
struct SubmodelOps {
  std::vector<std::shared_ptr<const Matrix>> quiet;  // per g: Q_{H|g} minus the event rates
  std::array<std::shared_ptr<const Matrix>, 4> emit;

  explicit SubmodelOps(const PortSubmodel& sub) {
    const int nh = sub.hidden.front().size();
    Vector rates(nh);
    for (int h = 0; h < nh; ++h) rates(h) = sub.event_rate(h);
    for (const auto& q : sub.hidden) {
      Matrix m = q.matrix();
      m.diagonal() -= rates;
      quiet.push_back(std::make_shared<const Matrix>(std::move(m)));
    }
    for (int k = 0; k < 4; ++k) {
      Matrix m = Matrix::Zero(nh, nh);
      for (int h = 0; h < nh; ++h)
        if (sub.toggles[k].active(h)) m(h, h) = sub.toggles[k].rate;
      emit[k] = std::make_shared<const Matrix>(std::move(m));
    }
  }
};

// Tags: propagate steps carry the global state, emission jumps -1 - kind.
void append_steps(const GlobalPath& g, const SubmodelOps& ops, const PortEvents& events,
                  std::size_t first, std::size_t last, std::vector<ChainStep>& out) {
  double cursor = g.begin;
  int value = g.initial;
  std::size_t jump = 0;
  std::size_t e = first;
  auto advance = [&](double t) {
    if (t > cursor) out.push_back(ChainStep::propagate(ops.quiet[value], cursor, t - cursor, value));
    cursor = std::max(cursor, t);
  };
  while (jump < g.jumps.size() || e < last) {
    const bool take_event = e < last && (jump >= g.jumps.size() || events[e].first <= g.jumps[jump].first);
    if (take_event) {
      advance(events[e].first);
      const int k = kind_index(events[e].second);
      out.push_back(ChainStep::jump(ops.emit[k], cursor, -1 - k));
      ++e;
    } else {
      advance(g.jumps[jump].first);
      value = g.jumps[jump].second;
      ++jump;
    }
  }
  advance(g.end);
}

double log_sum_exp(const std::vector<double>& xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Events of each submodel inside consecutive spans; ranges index PortEvents.
std::pair<std::size_t, std::size_t> event_range(const PortEvents& ev, double begin, double end,
                                                bool closed) {
  auto lo = std::lower_bound(ev.begin(), ev.end(), begin,
                             [](const auto& a, double t) { return a.first < t; });
  auto hi = closed ? std::upper_bound(ev.begin(), ev.end(), end,
                                      [](double t, const auto& a) { return t < a.first; })
                   : std::lower_bound(ev.begin(), ev.end(), end,
                                      [](const auto& a, double t) { return a.first < t; });
  return {static_cast<std::size_t>(lo - ev.begin()), static_cast<std::size_t>(hi - ev.begin())};
}

// Particles over G with filtered forward vectors of every submodel.
class ParticleFilter {
 public:
  ParticleFilter(const TrafficModel& model, const std::vector<PortEvents>& events, int particles,
                 std::uint64_t seed)
      : model_(model), events_(events), seed_(seed) {
    if (particles < 1) throw InputError("particle count must be >= 1");
    for (const auto& sub : model.ports) ops_.emplace_back(sub);
    const int ng = model.global_states();
    const int nh = model.hidden_states();
    Rng rng(derive_seed(seed, "initial-global"));
    particles_.resize(particles);
    for (auto& p : particles_) {
      p.g = static_cast<int>(uniform01(rng) * ng);
      p.g = std::min(p.g, ng - 1);
      p.alpha.assign(model.ports.size(), RowVector::Constant(nh, 1.0 / nh));
      p.log_weight = -std::log(static_cast<double>(particles));
      p.node = -1;
    }
  }

  // Moves every particle over [begin, end) (closed at the trace end) and
  // returns the log of the weighted mean evidence increment.
  double advance(double begin, double end, bool closed, std::uint64_t span) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& ev : events_) ranges.push_back(event_range(ev, begin, end, closed));

    std::vector<double> updated(particles_.size());
    std::vector<ChainStep> steps;
    for (std::size_t i = 0; i < particles_.size(); ++i) {
      Particle& p = particles_[i];
      GlobalPath seg = sample_global_path(model_.global, p.g, begin, end,
                                          derive_seed(seed_, span, i));
      double delta = 0.0;
      for (std::size_t j = 0; j < ops_.size() && delta > kNegInf; ++j) {
        steps.clear();
        append_steps(seg, ops_[j], events_[j], ranges[j].first, ranges[j].second, steps);
        delta += propagate_forward(p.alpha[j], steps);
      }
      p.g = seg.final_value();
      nodes_.push_back({p.node, std::move(seg)});
      p.node = static_cast<int>(nodes_.size()) - 1;
      updated[i] = p.log_weight + delta;
    }
    const double total = log_sum_exp(updated);
    if (total == kNegInf)
      throw NumericalError("all particle weights vanished in [" + std::to_string(begin) + ", " +
                           std::to_string(end) + "); try more particles");
    for (std::size_t i = 0; i < particles_.size(); ++i)
      particles_[i].log_weight = updated[i] - total;
    return total;
  }

  void resample(std::uint64_t span) {
    const std::size_t n = particles_.size();
    Rng rng(derive_seed(derive_seed(seed_, "resample"), span));
    const double step = 1.0 / static_cast<double>(n);
    double u = uniform01(rng) * step;
    double cumulative = 0.0;
    std::vector<Particle> next;
    next.reserve(n);
    std::size_t i = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double target = u + k * step;
      while (i + 1 < n && cumulative + std::exp(particles_[i].log_weight) < target) {
        cumulative += std::exp(particles_[i].log_weight);
        ++i;
      }
      // Never copy a particle with zero weight.
      std::size_t pick = i;
      while (particles_[pick].log_weight == kNegInf) pick = (pick + n - 1) % n;
      next.push_back(particles_[pick]);
      next.back().log_weight = -std::log(static_cast<double>(n));
    }
    particles_ = std::move(next);
  }

  // Weighted full G trajectories of the current particles, identical
  // ancestries merged.
  std::vector<std::pair<GlobalPath, double>> paths() const {
    std::map<int, double> weight_by_node;
    for (const auto& p : particles_)
      if (p.log_weight > kNegInf) weight_by_node[p.node] += std::exp(p.log_weight);
    std::vector<std::pair<GlobalPath, double>> out;
    for (const auto& [node, w] : weight_by_node) {
      std::vector<int> chain;
      for (int n = node; n >= 0; n = nodes_[n].parent) chain.push_back(n);
      GlobalPath path = nodes_[chain.back()].segment;
      for (std::size_t k = chain.size() - 1; k-- > 0;) path.extend(nodes_[chain[k]].segment);
      out.emplace_back(std::move(path), w);
    }
    return out;
  }

 private:
  struct Particle {
    int node;
    int g;
    std::vector<RowVector> alpha;
    double log_weight;
  };
  struct Node {
    int parent;
    GlobalPath segment;
  };

  const TrafficModel& model_;
  const std::vector<PortEvents>& events_;
  std::uint64_t seed_;
  std::vector<SubmodelOps> ops_;
  std::vector<Particle> particles_;
  std::vector<Node> nodes_;
};

}  // namespace

std::array<int, 2> toggle_active_states(int toggle_index, int hidden_states) {
  return {(2 * toggle_index) % hidden_states, (2 * toggle_index + 1) % hidden_states};
}

double PortSubmodel::event_rate(int h) const {
  double r = 0.0;
  for (const auto& t : toggles)
    if (t.active(h)) r += t.rate;
  return r;
}

bool TrafficModel::has_other_bucket() const {
  return std::any_of(ports.begin(), ports.end(),
                     [](const PortSubmodel& s) { return s.port == kOtherPort; });
}

std::optional<int> TrafficModel::submodel_for(int port) const {
  std::optional<int> other;
  for (std::size_t i = 0; i < ports.size(); ++i) {
    if (ports[i].port == port) return static_cast<int>(i);
    if (ports[i].port == kOtherPort) other = static_cast<int>(i);
  }
  return other;
}

std::vector<int> TrafficModel::port_list() const {
  std::vector<int> out;
  for (const auto& s : ports) out.push_back(s.port);
  return out;
}

bool TrafficModel::operator==(const TrafficModel& other) const {
  if (!(global == other.global) || ports.size() != other.ports.size()) return false;
  for (std::size_t i = 0; i < ports.size(); ++i) {
    const auto& a = ports[i];
    const auto& b = other.ports[i];
    if (a.port != b.port || a.hidden != b.hidden) return false;
    for (int k = 0; k < 4; ++k)
      if (a.toggles[k].rate != b.toggles[k].rate ||
          a.toggles[k].active_states != b.toggles[k].active_states)
        return false;
  }
  return true;
}

ctbn::CtbnModel TrafficModel::to_ctbn() const {
  ctbn::CtbnModel m;
  const int ng = global_states();
  const int nh = hidden_states();
  const int g = m.add_variable("G", ng);
  m.set_cim(g, {}, {global});
  for (const auto& sub : ports) {
    const std::string label = port_label(sub.port);
    const int h = m.add_variable("H@" + label, nh);
    m.set_cim(h, {g}, sub.hidden);
    for (const auto& t : sub.toggles) {
      const int v = m.add_variable(std::string(event_kind_name(t.kind)) + "@" + label, 2, true);
      std::vector<ctmc::IntensityMatrix> per_h;
      for (int s = 0; s < nh; ++s) {
        const double r = t.active(s) ? t.rate : 0.0;
        Matrix q(2, 2);
        q << -r, r, r, -r;
        per_h.emplace_back(q);
      }
      m.set_cim(v, {h}, std::move(per_h));
    }
  }
  m.meta()["model"] = "traffic";
  return m;
}

TrafficModel TrafficModel::from_ctbn(const ctbn::CtbnModel& m) {
  auto bad = [](const std::string& what) { throw InputError("not a traffic model: " + what); };
  const auto g = m.find("G");
  if (!g || !m.cim(*g).parents.empty()) bad("missing parentless variable G");
  TrafficModel out;
  out.global = m.cim(*g).matrices.front();
  for (int v = 0; v < m.size(); ++v) {
    const std::string& name = m.variable(v).name;
    if (!name.starts_with("H@")) continue;
    const std::string label = name.substr(2);
    PortSubmodel sub;
    if (label == "other") {
      sub.port = kOtherPort;
    } else {
      try {
        std::size_t used = 0;
        sub.port = std::stoi(label, &used);
        if (used != label.size()) bad("bad port label '" + label + "'");
      } catch (const std::logic_error&) {
        bad("bad port label '" + label + "'");
      }
    }
    if (m.cim(v).parents != std::vector<int>{*g}) bad(name + " must have G as its only parent");
    sub.hidden = m.cim(v).matrices;
    const int nh = m.variable(v).cardinality;
    for (int k = 0; k < 4; ++k) {
      const std::string tname = std::string(event_kind_name(kEventKinds[k])) + "@" + label;
      const auto t = m.find(tname);
      if (!t || !m.variable(*t).toggle || m.variable(*t).cardinality != 2)
        bad("missing toggle " + tname);
      if (m.cim(*t).parents != std::vector<int>{v}) bad(tname + " must have " + name + " as parent");
      ToggleVariable tv;
      tv.kind = kEventKinds[k];
      tv.active_states = toggle_active_states(k, nh);
      tv.rate = m.cim(*t).matrices[tv.active_states[0]].rate(0, 1);
      for (int s = 0; s < nh; ++s) {
        const auto& q = m.cim(*t).matrices[s];
        const double expect = tv.active(s) ? tv.rate : 0.0;
        if (q.rate(0, 1) != expect || q.rate(1, 0) != expect) bad(tname + " rates are not tied");
      }
      sub.toggles[k] = tv;
    }
    out.ports.push_back(std::move(sub));
  }
  if (out.ports.empty()) bad("no port submodels");
  if (m.size() != out.variable_count()) bad("unexpected extra variables");
  return out;
}

TrafficModel build_traffic_model(const std::vector<int>& ports, const TrafficSizes& sizes,
                                 std::uint64_t seed, const BuildOptions& options) {
  if (sizes.global_states < 2) throw InputError("|G| must be >= 2");
  if (sizes.hidden_states < 2 || sizes.hidden_states % 2 != 0)
    throw InputError("|H| must be even and >= 2");
  if (ports.empty() && !options.other_bucket) throw InputError("at least one port is required");
  std::set<int> seen;
  for (int p : ports)
    if (p < 0 || !seen.insert(p).second) throw InputError("ports must be distinct and >= 0");

  Rng rng(seed);
  TrafficModel model;
  model.global = random_rates(rng, sizes.global_states, options.hidden_rate_lo,
                              options.hidden_rate_hi);
  std::vector<int> all = ports;
  if (options.other_bucket) all.push_back(kOtherPort);
  for (int port : all) {
    PortSubmodel sub;
    sub.port = port;
    for (int g = 0; g < sizes.global_states; ++g)
      sub.hidden.push_back(random_rates(rng, sizes.hidden_states, options.hidden_rate_lo,
                                        options.hidden_rate_hi));
    for (int k = 0; k < 4; ++k) {
      sub.toggles[k].kind = kEventKinds[k];
      sub.toggles[k].active_states = toggle_active_states(k, sizes.hidden_states);
      sub.toggles[k].rate = log_uniform(rng, options.toggle_rate_lo, options.toggle_rate_hi);
    }
    model.ports.push_back(std::move(sub));
  }
  return model;
}

std::vector<int> top_ports(const TrafficTrace& trace, int k) {
  std::map<int, long long> counts;
  for (const auto& e : trace.events) ++counts[e.port];
  std::vector<std::pair<int, long long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<int> out;
  for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i) out.push_back(ranked[i].first);
  return out;
}

void GlobalPath::extend(const GlobalPath& next) {
  jumps.insert(jumps.end(), next.jumps.begin(), next.jumps.end());
  end = next.end;
}

ctmc::SufficientStatistics GlobalPath::statistics(int global_states) const {
  ctmc::SufficientStatistics ss(global_states);
  double t = begin;
  int value = initial;
  for (const auto& [time, next] : jumps) {
    ss.dwell(value) += time - t;
    ss.counts(value, next) += 1.0;
    t = time;
    value = next;
  }
  ss.dwell(value) += end - t;
  return ss;
}

GlobalPath sample_global_path(const ctmc::IntensityMatrix& global, int initial, double begin,
                              double end, std::uint64_t seed) {
  GlobalPath path{begin, end, initial, {}};
  if (!(end > begin)) return path;
  const ctmc::Trajectory traj = ctmc::sample_trajectory(
      global, Vector::Unit(global.size(), initial), end - begin, seed);
  double t = begin;
  for (const auto& tr : traj.transitions) {
    t += tr.dwell;
    path.jumps.emplace_back(t, tr.next);
  }
  return path;
}

PortStats::PortStats(int global_states, int hidden_states)
    : hidden(global_states, ctmc::SufficientStatistics(hidden_states)) {}

PortStats& PortStats::operator+=(const PortStats& other) {
  if (hidden.empty()) return *this = other;
  for (std::size_t g = 0; g < hidden.size(); ++g) hidden[g] += other.hidden[g];
  for (int k = 0; k < 4; ++k) {
    events[k] += other.events[k];
    active_time[k] += other.active_time[k];
  }
  return *this;
}

PortStats& PortStats::operator*=(double w) {
  for (auto& s : hidden) s *= w;
  for (int k = 0; k < 4; ++k) {
    events[k] *= w;
    active_time[k] *= w;
  }
  return *this;
}

TrafficStats::TrafficStats(const TrafficModel& model)
    : global(model.global_states()),
      ports(model.ports.size(), PortStats(model.global_states(), model.hidden_states())) {}

std::vector<PortEvents> events_by_submodel(const TrafficModel& model, const TrafficTrace& trace) {
  std::vector<PortEvents> out(model.ports.size());
  std::map<int, std::optional<int>> cache;
  for (const auto& e : trace.events) {
    auto it = cache.find(e.port);
    if (it == cache.end()) it = cache.emplace(e.port, model.submodel_for(e.port)).first;
    if (it->second) out[*it->second].emplace_back(e.time, e.kind);
  }
  return out;
}

SubmodelResult submodel_estep(const GlobalPath& g, const PortSubmodel& sub,
                              const PortEvents& events, IntegralMethod method) {
  const int ng = static_cast<int>(sub.hidden.size());
  const int nh = sub.hidden.front().size();
  if (g.initial < 0 || g.initial >= ng) throw InputError("G path state out of range");
  const SubmodelOps ops(sub);
  std::vector<ChainStep> steps;
  const auto range = event_range(events, g.begin, g.end, true);
  if (range.first != 0 || range.second != events.size())
    throw InputError("events fall outside the G trajectory span");
  append_steps(g, ops, events, range.first, range.second, steps);

  SubmodelResult result{0.0, PortStats(ng, nh)};
  ForwardBackward fb(RowVector::Constant(nh, 1.0 / nh), std::move(steps));
  result.log_likelihood = fb.log_evidence();
  if (fb.impossible()) return result;
  for (const auto& e : events) result.stats.events[kind_index(e.second)] += 1.0;
  const auto& all = fb.steps();
  fb.backward(method, [&](std::size_t i, const Matrix& occ) {
    const ChainStep& step = all[i];
    if (step.kind != ChainStep::Kind::kPropagate) return;
    auto& ss = result.stats.hidden[step.tag];
    ss.dwell += occ.diagonal();
    Matrix flow = sub.hidden[step.tag].matrix().cwiseProduct(occ);
    flow.diagonal().setZero();
    ss.counts += flow;
    for (int k = 0; k < 4; ++k)
      for (int h : sub.toggles[k].active_states) result.stats.active_time[k] += occ(h, h);
  });
  return result;
}

TrafficStats rbpf_estep(const TrafficModel& model, const TrafficTrace& trace,
                        const RbpfOptions& options) {
  validate_trace(trace);
  if (!(options.resample_every > 0.0)) throw InputError("resample interval must be positive");
  const std::vector<PortEvents> events = events_by_submodel(model, trace);
  ParticleFilter filter(model, events, options.particles, options.seed);

  TrafficStats stats(model);
  std::uint64_t span = 0;
  for (double begin = trace.begin;; ++span) {
    const double end = std::min(trace.begin + (span + 1) * options.resample_every, trace.end);
    const bool last = end >= trace.end;
    stats.log_likelihood += filter.advance(begin, end, last, span);
    if (last) break;
    filter.resample(span);
    begin = end;
  }

  for (const auto& [path, weight] : filter.paths()) {
    ctmc::SufficientStatistics gs = path.statistics(model.global_states());
    gs *= weight;
    stats.global += gs;
    for (std::size_t j = 0; j < model.ports.size(); ++j) {
      SubmodelResult r = submodel_estep(path, model.ports[j], events[j]);
      if (r.log_likelihood == kNegInf) continue;
      r.stats *= weight;
      stats.ports[j] += r.stats;
    }
  }
  return stats;
}

TrafficModel nids_mstep(const TrafficModel& model, const TrafficStats& stats,
                        const ctmc::Regularization& reg) {
  TrafficModel out = model;
  out.global = ctmc::mle_complete(stats.global, reg);
  for (std::size_t j = 0; j < model.ports.size(); ++j) {
    const PortStats& ps = stats.ports.at(j);
    PortSubmodel& sub = out.ports[j];
    for (std::size_t g = 0; g < sub.hidden.size(); ++g)
      sub.hidden[g] = ctmc::mle_complete(ps.hidden[g], reg);
    for (int k = 0; k < 4; ++k) {
      const double m = ps.events[k];
      const double t = ps.active_time[k];
      sub.toggles[k].rate = (m > 0.0 && t > 0.0) ? m / t : reg.pseudo_count / (reg.pseudo_time + t);
    }
  }
  return out;
}

RbpfEmResult rbpf_em(const TrafficModel& init, const TrafficTrace& trace,
                     const RbpfEmConfig& config) {
  if (config.iterations < 0) throw InputError("iterations must be >= 0");
  RbpfEmResult result{init, {}};
  for (int it = 0; it < config.iterations; ++it) {
    RbpfOptions options = config.filter;
    options.seed = derive_seed(config.filter.seed, static_cast<std::uint64_t>(it));
    const TrafficStats stats = rbpf_estep(result.model, trace, options);
    result.log_likelihoods.push_back(stats.log_likelihood);
    result.model = nids_mstep(result.model, stats, config.regularization);
  }
  return result;
}

std::vector<WindowScore> score_windows(const TrafficModel& model, const TrafficTrace& trace,
                                       double window, int particles, std::uint64_t seed) {
  validate_trace(trace);
  if (!(window > 0.0)) throw InputError("window length must be positive");
  const std::vector<PortEvents> events = events_by_submodel(model, trace);
  ParticleFilter filter(model, events, particles, seed);
  std::vector<WindowScore> out;
  if (!(trace.end > trace.begin)) return out;
  for (std::uint64_t w = 0;; ++w) {
    const double begin = trace.begin + w * window;
    const double end = std::min(begin + window, trace.end);
    const bool last = end >= trace.end;
    WindowScore score;
    score.start = begin;
    score.length = end - begin;
    for (const auto& ev : events) {
      const auto r = event_range(ev, begin, end, last);
      score.event_count += static_cast<int>(r.second - r.first);
    }
    score.skipped = score.event_count == 0;
    score.log_likelihood = filter.advance(begin, end, last, w);
    out.push_back(score);
    if (last) break;
    filter.resample(w);
  }
  return out;
}

std::vector<CountScore> connection_count_baseline(const TrafficTrace& trace, double window) {
  validate_trace(trace);
  if (!(window > 0.0)) throw InputError("window length must be positive");
  std::vector<CountScore> out;
  if (!(trace.end > trace.begin)) return out;
  std::size_t e = 0;
  for (std::uint64_t w = 0;; ++w) {
    const double begin = trace.begin + w * window;
    const double end = std::min(begin + window, trace.end);
    const bool last = end >= trace.end;
    CountScore score;
    score.start = begin;
    score.length = end - begin;
    while (e < trace.events.size() && (trace.events[e].time < end || last)) {
      ++score.event_count;
      if (trace.events[e].kind == EventKind::kConnOpen) score.score += 1.0;
      ++e;
    }
    score.skipped = score.event_count == 0;
    out.push_back(score);
    if (last) break;
  }
  return out;
}

}  // namespace ctbnids::nids
