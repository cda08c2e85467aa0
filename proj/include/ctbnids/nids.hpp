#ifndef CTBNIDS_NIDS_HPP
#define CTBNIDS_NIDS_HPP

// Network traffic model: a global hidden process G, one hidden process H per
// port whose rates depend on G, and four toggle variables per port (packet
// in/out, connection open/close) whose events are emitted while H is in one
// of two states. Learning uses a Rao-Blackwellized particle filter over G
// with exact marginalization of every port submodel; detection scores
// fixed-length windows by their likelihood given the filtered history.

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "ctbnids/ctbn.hpp"
#include "ctbnids/ctmc.hpp"
#include "ctbnids/traffic.hpp"

namespace ctbnids::nids {

// Port id of the submodel that absorbs traffic on unlisted ports.
inline constexpr int kOtherPort = -1;

struct ToggleVariable {
  EventKind kind = EventKind::kPacketIn;
  std::array<int, 2> active_states{0, 1};
  double rate = 0.0;  // shared by both active states; zero elsewhere

  bool active(int h) const { return h == active_states[0] || h == active_states[1]; }
};

// Toggle j is active in hidden states {2j, 2j+1} taken modulo |H|.
std::array<int, 2> toggle_active_states(int toggle_index, int hidden_states);

struct PortSubmodel {
  int port = 0;
  std::vector<ctmc::IntensityMatrix> hidden;  // Q_{H|g}, one per global state
  std::array<ToggleVariable, 4> toggles;      // in kEventKinds order

  // Sum of toggle rates active in hidden state h.
  double event_rate(int h) const;
};

struct TrafficModel {
  ctmc::IntensityMatrix global;
  std::vector<PortSubmodel> ports;

  int global_states() const { return global.size(); }
  int hidden_states() const { return ports.empty() ? 0 : ports.front().hidden.front().size(); }
  int variable_count() const { return 1 + 5 * static_cast<int>(ports.size()); }
  bool has_other_bucket() const;
  // Submodel index receiving events on `port`: its own submodel, else the
  // other bucket, else nothing (the event is ignored).
  std::optional<int> submodel_for(int port) const;
  std::vector<int> port_list() const;

  // Variables G, H@<port>, <KIND>@<port>; the other bucket uses "other".
  ctbn::CtbnModel to_ctbn() const;
  // Throws InputError if the network does not have the traffic model shape.
  static TrafficModel from_ctbn(const ctbn::CtbnModel& model);

  bool operator==(const TrafficModel& other) const;
};

struct TrafficSizes {
  int global_states = 4;
  int hidden_states = 8;
};

struct BuildOptions {
  bool other_bucket = false;
  // Log-uniform ranges for the random initial rates (events per second).
  double hidden_rate_lo = 0.001;
  double hidden_rate_hi = 0.1;
  double toggle_rate_lo = 0.01;
  double toggle_rate_hi = 1.0;
};

// Throws InputError on |G| < 2, odd or too small |H|, empty or repeated ports.
TrafficModel build_traffic_model(const std::vector<int>& ports, const TrafficSizes& sizes,
                                 std::uint64_t seed, const BuildOptions& options = {});

// The K most active ports (ties broken by lower port number).
std::vector<int> top_ports(const TrafficTrace& trace, int k);

// A sampled trajectory of G over [begin, end].
struct GlobalPath {
  double begin = 0.0;
  double end = 0.0;
  int initial = 0;
  std::vector<std::pair<double, int>> jumps;  // (time, new value)

  int final_value() const { return jumps.empty() ? initial : jumps.back().second; }
  // Appends a later, contiguous path.
  void extend(const GlobalPath& next);
  ctmc::SufficientStatistics statistics(int global_states) const;
};

GlobalPath sample_global_path(const ctmc::IntensityMatrix& global, int initial, double begin,
                              double end, std::uint64_t seed);

// Expected statistics of one port submodel.
struct PortStats {
  std::vector<ctmc::SufficientStatistics> hidden;  // T[h|g], M[h, h'|g]
  std::array<double, 4> events{};                  // observed toggle events
  std::array<double, 4> active_time{};             // expected time H spends in active states

  PortStats() = default;
  PortStats(int global_states, int hidden_states);
  PortStats& operator+=(const PortStats& other);
  PortStats& operator*=(double w);
};

struct TrafficStats {
  ctmc::SufficientStatistics global;
  std::vector<PortStats> ports;
  double log_likelihood = 0.0;  // estimate of log P(trace)

  TrafficStats() = default;
  explicit TrafficStats(const TrafficModel& model);
};

// Events of one submodel, time ordered.
using PortEvents = std::vector<std::pair<double, EventKind>>;

// Splits trace events by submodel index.
std::vector<PortEvents> events_by_submodel(const TrafficModel& model, const TrafficTrace& trace);

struct SubmodelResult {
  double log_likelihood = 0.0;  // log P(events | g); -inf when impossible
  PortStats stats;              // posterior expectations given g (zero if impossible)
};

// Exact E step of one port submodel given a full G trajectory. The hidden
// state starts uniform at g.begin.
SubmodelResult submodel_estep(const GlobalPath& g, const PortSubmodel& sub,
                              const PortEvents& events,
                              IntegralMethod method = IntegralMethod::kBlockExponential);

struct RbpfOptions {
  int particles = 100;
  double resample_every = 50.0;
  std::uint64_t seed = 1;
};

// Particle-filter E step. Throws NumericalError when every particle weight
// vanishes inside a span.
TrafficStats rbpf_estep(const TrafficModel& model, const TrafficTrace& trace,
                        const RbpfOptions& options = {});

// Parameters from expected statistics; toggle rates are tied over their two
// active states and never drop to zero.
TrafficModel nids_mstep(const TrafficModel& model, const TrafficStats& stats,
                        const ctmc::Regularization& reg = {});

struct RbpfEmConfig {
  int iterations = 10;
  RbpfOptions filter;
  ctmc::Regularization regularization;
};

struct RbpfEmResult {
  TrafficModel model;
  std::vector<double> log_likelihoods;  // E-step estimate per iteration
};

RbpfEmResult rbpf_em(const TrafficModel& init, const TrafficTrace& trace,
                     const RbpfEmConfig& config = {});

struct WindowScore {
  double start = 0.0;
  double length = 0.0;
  int event_count = 0;
  double log_likelihood = 0.0;  // given the history before the window
  bool skipped = false;         // no events in the window
};

// Windows tile [trace.begin, trace.end); the last one may be shorter.
// Events outside the model's ports count only if the other bucket exists.
std::vector<WindowScore> score_windows(const TrafficModel& model, const TrafficTrace& trace,
                                       double window, int particles, std::uint64_t seed);

struct CountScore {
  double start = 0.0;
  double length = 0.0;
  int event_count = 0;
  double score = 0.0;  // CONN_OPEN events in the window
  bool skipped = false;
};

std::vector<CountScore> connection_count_baseline(const TrafficTrace& trace, double window);

}  // namespace ctbnids::nids

#endif
