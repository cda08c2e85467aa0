#ifndef CTBNIDS_SYNTH_HPP
#define CTBNIDS_SYNTH_HPP

// Synthetic traffic and system call traces, anomaly injection and host
// mixing.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ctbnids/hids.hpp"
#include "ctbnids/nids.hpp"
#include "ctbnids/traffic.hpp"

namespace ctbnids::synth {

// Events at offsets from 0, time ordered.
struct EventBurst {
  std::vector<TrafficEvent> events;
};

using AnomalyTemplate = std::variant<EventBurst, nids::TrafficModel>;

struct InjectionSpec {
  double alpha = 0.02;  // injected window as a fraction of the trace horizon
  double beta = 1.0;    // speed of the anomaly relative to its template
  std::uint64_t seed = 1;
  AnomalyTemplate anomaly;
};

// Half-open [start, end).
struct Interval {
  double start = 0.0;
  double end = 0.0;
};

struct GroundTruth {
  std::vector<Interval> intervals;

  bool intersects(double start, double end) const;
};

struct InjectionResult {
  TrafficTrace trace;
  GroundTruth truth;
  std::vector<std::size_t> injected;  // indices into trace.events
  std::vector<std::string> warnings;
};

// Forward sample of the traffic model. CONN_CLOSE events that would drive a
// port's open-connection count below zero are dropped.
TrafficTrace gen_traffic(const nids::TrafficModel& model, double duration, std::uint64_t seed,
                         double begin = 0.0);

// A generator with slow hidden dynamics and moderate event rates.
nids::TrafficModel reference_traffic_model(const std::vector<int>& ports,
                                           const nids::TrafficSizes& sizes, std::uint64_t seed);

// Every rate of the model multiplied by `factor`.
nids::TrafficModel scale_rates(const nids::TrafficModel& model, double factor);

// CONN_OPEN on ports first_port, first_port + 1, ... at `rate` per second.
EventBurst scan_template(int first_port, int count, double rate);
// `count` PKT_IN on one port at `rate` per second.
EventBurst flood_template(int port, int count, double rate);
// CONN_OPEN / CONN_CLOSE pairs on one port.
EventBurst probe_template(int port, int pairs, double rate);

// Starts uniformly in the first half of the trace; template offsets are
// divided by beta and cut off at alpha * horizon.
InjectionResult inject_anomaly(const TrafficTrace& trace, const InjectionSpec& spec);

// A window of trace_b of length alpha * beta * horizon(a), stretched by
// 1 / beta, is placed in the first half of trace_a. spec.anomaly is unused.
InjectionResult mix_hosts(const TrafficTrace& trace_a, const TrafficTrace& trace_b,
                          const InjectionSpec& spec);

struct TimedCall {
  double time = 0.0;
  int call = 0;
};

// Exact call times of one process over [0, horizon), H starting uniform.
std::vector<TimedCall> sample_calls(const hids::SyscallModel& model, double horizon,
                                    std::uint64_t seed);

// Floors every time to a multiple of delta; order within a tick is kept.
hids::ProcessTrace quantize(const std::string& id, const std::vector<TimedCall>& calls,
                            const std::vector<std::string>& vocabulary, double delta);

// Horizons drawn uniformly from [0.5, 1.5] * mean_horizon.
std::vector<hids::ProcessTrace> gen_syscalls(const hids::SyscallModel& model, int n_processes,
                                             double mean_horizon, double delta,
                                             std::uint64_t seed,
                                             const std::string& id_prefix = "p");

// The same model with its call rate columns shuffled.
hids::SyscallModel permute_call_rates(const hids::SyscallModel& model, std::uint64_t seed);

// Syscall generator with well separated hidden states: state h favours a
// different subset of calls.
hids::SyscallModel reference_syscall_model(int hidden_states, std::uint64_t seed);

}  // namespace ctbnids::synth

#endif
