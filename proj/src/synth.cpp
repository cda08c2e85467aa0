#include "ctbnids/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "ctbnids/ctbn.hpp"
#include "ctbnids/errors.hpp"
#include "ctbnids/random.hpp"

namespace ctbnids::synth {
namespace {

void check_spec(const InjectionSpec& spec) {
  if (!(spec.alpha > 0.0 && spec.alpha <= 1.0)) throw InputError("alpha must be in (0, 1]");
  if (!(spec.beta > 0.0 && spec.beta <= 1.0)) throw InputError("beta must be in (0, 1]");
}

// Host events first on equal times; records where injected events land.
InjectionResult merge(const TrafficTrace& host, const std::vector<TrafficEvent>& extra) {
  InjectionResult out;
  out.trace.begin = host.begin;
  out.trace.end = host.end;
  out.trace.events.reserve(host.events.size() + extra.size());
  std::size_t i = 0, j = 0;
  while (i < host.events.size() || j < extra.size()) {
    const bool take_host =
        j >= extra.size() || (i < host.events.size() && host.events[i].time <= extra[j].time);
    if (take_host) {
      out.trace.events.push_back(host.events[i++]);
    } else {
      out.injected.push_back(out.trace.events.size());
      out.trace.events.push_back(extra[j++]);
    }
  }
  if (!extra.empty())
    out.truth.intervals.push_back(
        {extra.front().time,
         std::nextafter(extra.back().time, std::numeric_limits<double>::infinity())});
  return out;
}

EventBurst regular_burst(int count, double rate, auto make) {
  if (count < 0 || !(rate > 0.0)) throw InputError("template needs count >= 0 and rate > 0");
  EventBurst b;
  for (int i = 0; i < count; ++i) make(b, i, i / rate);
  return b;
}

}  // namespace

bool GroundTruth::intersects(double start, double end) const {
  for (const Interval& iv : intervals)
    if (iv.start < end && start < iv.end) return true;
  return false;
}

TrafficTrace gen_traffic(const nids::TrafficModel& model, double duration, std::uint64_t seed,
                         double begin) {
  if (!(duration > 0.0)) throw InputError("duration must be positive");
  const ctbn::CtbnModel net = model.to_ctbn();
  // Variable id -> (port, kind) for toggles.
  std::vector<std::pair<int, int>> emits(net.size(), {0, -1});
  for (std::size_t j = 0; j < model.ports.size(); ++j) {
    const int h = *net.find("H@" + (model.ports[j].port == nids::kOtherPort
                                        ? std::string("other")
                                        : std::to_string(model.ports[j].port)));
    for (int k = 0; k < 4; ++k) emits[h + 1 + k] = {model.ports[j].port, k};
  }
  const ctbn::JointTrajectory traj = ctbn::forward_sample(net, duration, seed);
  TrafficTrace trace;
  trace.begin = begin;
  trace.end = begin + duration;
  std::map<int, long long> open;
  for (const auto& e : traj.events) {
    const auto [port, k] = emits[e.variable];
    if (k < 0) continue;
    const EventKind kind = kEventKinds[k];
    if (kind == EventKind::kConnOpen) ++open[port];
    if (kind == EventKind::kConnClose) {
      if (open[port] == 0) continue;
      --open[port];
    }
    trace.events.push_back({begin + e.time, port, kind});
  }
  return trace;
}

nids::TrafficModel reference_traffic_model(const std::vector<int>& ports,
                                           const nids::TrafficSizes& sizes, std::uint64_t seed) {
  nids::BuildOptions options;
  options.hidden_rate_lo = 0.002;
  options.hidden_rate_hi = 0.02;
  options.toggle_rate_lo = 0.02;
  options.toggle_rate_hi = 0.3;
  return nids::build_traffic_model(ports, sizes, seed, options);
}

nids::TrafficModel scale_rates(const nids::TrafficModel& model, double factor) {
  if (!(factor > 0.0)) throw InputError("scale factor must be positive");
  nids::TrafficModel out = model;
  out.global = ctmc::IntensityMatrix(model.global.matrix() * factor);
  for (auto& sub : out.ports) {
    for (auto& q : sub.hidden) q = ctmc::IntensityMatrix(q.matrix() * factor);
    for (auto& t : sub.toggles) t.rate *= factor;
  }
  return out;
}

EventBurst scan_template(int first_port, int count, double rate) {
  return regular_burst(count, rate, [&](EventBurst& b, int i, double t) {
    b.events.push_back({t, first_port + i, EventKind::kConnOpen});
  });
}

EventBurst flood_template(int port, int count, double rate) {
  return regular_burst(count, rate, [&](EventBurst& b, int, double t) {
    b.events.push_back({t, port, EventKind::kPacketIn});
  });
}

EventBurst probe_template(int port, int pairs, double rate) {
  return regular_burst(pairs, rate, [&](EventBurst& b, int, double t) {
    b.events.push_back({t, port, EventKind::kConnOpen});
    b.events.push_back({t + 0.5 / rate, port, EventKind::kConnClose});
  });
}

InjectionResult inject_anomaly(const TrafficTrace& trace, const InjectionSpec& spec) {
  validate_trace(trace);
  check_spec(spec);
  const double horizon = trace.horizon();
  const double length = spec.alpha * horizon;
  Rng rng(derive_seed(spec.seed, "inject-start"));
  const double start = trace.begin + uniform01(rng) * horizon / 2.0;

  std::vector<TrafficEvent> offsets;
  if (const auto* burst = std::get_if<EventBurst>(&spec.anomaly)) {
    offsets = burst->events;
  } else {
    const auto& model = std::get<nids::TrafficModel>(spec.anomaly);
    offsets = gen_traffic(model, length * spec.beta, derive_seed(spec.seed, "inject-template"))
                  .events;
  }
  const std::size_t available = offsets.size();
  std::vector<TrafficEvent> extra;
  for (TrafficEvent e : offsets) {
    const double offset = e.time / spec.beta;
    if (offset > length) break;
    e.time = start + offset;
    if (e.time > trace.end) break;
    extra.push_back(e);
  }
  InjectionResult out = merge(trace, extra);
  if (available > 1 && extra.size() == 1)
    out.warnings.push_back("injection window shorter than one anomaly event gap; injected a single event");
  return out;
}

InjectionResult mix_hosts(const TrafficTrace& trace_a, const TrafficTrace& trace_b,
                          const InjectionSpec& spec) {
  validate_trace(trace_a);
  validate_trace(trace_b);
  check_spec(spec);
  const double length = spec.alpha * trace_a.horizon();
  const double source_length = length * spec.beta;
  Rng rng(derive_seed(spec.seed, "mix-hosts"));
  const double dest = trace_a.begin + uniform01(rng) * trace_a.horizon() / 2.0;
  const double slack = std::max(0.0, trace_b.horizon() - source_length);
  const double source = trace_b.begin + uniform01(rng) * slack;

  std::vector<TrafficEvent> extra;
  for (TrafficEvent e : trace_b.events) {
    if (e.time < source || e.time >= source + source_length) continue;
    e.time = dest + (e.time - source) / spec.beta;
    if (e.time > trace_a.end) break;
    extra.push_back(e);
  }
  return merge(trace_a, extra);
}

std::vector<TimedCall> sample_calls(const hids::SyscallModel& model, double horizon,
                                    std::uint64_t seed) {
  model.validate();
  if (!(horizon > 0.0)) throw InputError("horizon must be positive");
  Rng rng(seed);
  const int m = model.hidden_states();
  int h = std::min(static_cast<int>(uniform01(rng) * m), m - 1);
  std::vector<TimedCall> out;
  double t = 0.0;
  for (;;) {
    const double switch_rate = model.hidden.exit_rate(h);
    const double call_rate = model.call_rates.row(h).sum();
    t += exponential(rng, switch_rate + call_rate);
    if (!(t < horizon)) break;
    double u = uniform01(rng) * (switch_rate + call_rate);
    if (u < call_rate) {
      int s = 0;
      for (; s + 1 < model.vocabulary_size(); ++s) {
        if (u < model.call_rates(h, s)) break;
        u -= model.call_rates(h, s);
      }
      out.push_back({t, s});
    } else {
      u -= call_rate;
      int next = h;
      for (int x = 0; x < m; ++x) {
        if (x == h) continue;
        next = x;
        if (u < model.hidden.rate(h, x)) break;
        u -= model.hidden.rate(h, x);
      }
      h = next;
    }
  }
  return out;
}

hids::ProcessTrace quantize(const std::string& id, const std::vector<TimedCall>& calls,
                            const std::vector<std::string>& vocabulary, double delta) {
  if (!(delta > 0.0)) throw InputError("resolution must be positive");
  hids::ProcessTrace trace;
  trace.id = id;
  trace.resolution = delta;
  long long last_tick = std::numeric_limits<long long>::min();
  for (const TimedCall& c : calls) {
    const long long tick = static_cast<long long>(std::floor(c.time / delta));
    if (tick != last_tick) {
      trace.ticks.push_back({static_cast<double>(tick) * delta, {}});
      last_tick = tick;
    }
    trace.ticks.back().calls.push_back(vocabulary.at(c.call));
  }
  return trace;
}

std::vector<hids::ProcessTrace> gen_syscalls(const hids::SyscallModel& model, int n_processes,
                                             double mean_horizon, double delta,
                                             std::uint64_t seed, const std::string& id_prefix) {
  if (n_processes < 0 || !(mean_horizon > 0.0) || !(delta > 0.0))
    throw InputError("invalid syscall generation parameters");
  std::vector<hids::ProcessTrace> out;
  for (int i = 0; i < n_processes; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 1));
    const double horizon = mean_horizon * (0.5 + uniform01(rng));
    const auto calls = sample_calls(model, horizon, derive_seed(seed, static_cast<std::uint64_t>(i), 2));
    out.push_back(quantize(id_prefix + std::to_string(i), calls, model.vocabulary, delta));
  }
  return out;
}

hids::SyscallModel permute_call_rates(const hids::SyscallModel& model, std::uint64_t seed) {
  const int n = model.vocabulary_size();
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = std::min(static_cast<int>(uniform01(rng) * (i + 1)), i);
    std::swap(perm[i], perm[j]);
  }
  hids::SyscallModel out = model;
  for (int s = 0; s < n; ++s) out.call_rates.col(s) = model.call_rates.col(perm[s]);
  return out;
}

hids::SyscallModel reference_syscall_model(int hidden_states, std::uint64_t seed) {
  hids::RateRanges ranges;
  ranges.hidden_lo = 0.2;
  ranges.hidden_hi = 2.0;
  ranges.call_lo = 0.2;
  ranges.call_hi = 20.0;
  return hids::random_syscall_model(hidden_states, hids::default_vocabulary(), seed, ranges);
}

}  // namespace ctbnids::synth
