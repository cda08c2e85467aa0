#ifndef CTBNIDS_TRAFFIC_HPP
#define CTBNIDS_TRAFFIC_HPP

// Network event traces and their text format:
//
//   timestamp_seconds,port,kind
//   12.5,80,CONN_OPEN
//
// with kind one of PKT_IN, PKT_OUT, CONN_OPEN, CONN_CLOSE. Lines starting
// with '#' are comments, except "#@ span=<begin>,<end>" which records the
// observation interval; without it the span is [first event, last event].

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ctbnids {

enum class EventKind : unsigned char { kPacketIn, kPacketOut, kConnOpen, kConnClose };

inline constexpr std::array<EventKind, 4> kEventKinds = {
    EventKind::kPacketIn, EventKind::kPacketOut, EventKind::kConnOpen, EventKind::kConnClose};

std::string_view event_kind_name(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view name);

struct TrafficEvent {
  double time = 0.0;
  int port = 0;
  EventKind kind = EventKind::kPacketIn;

  bool operator==(const TrafficEvent&) const = default;
};

struct TrafficTrace {
  double begin = 0.0;
  double end = 0.0;
  std::vector<TrafficEvent> events;  // non-decreasing in time

  double horizon() const { return end - begin; }
  bool operator==(const TrafficTrace&) const = default;
};

// Throws InputError on unordered events or events outside [begin, end].
void validate_trace(const TrafficTrace& trace);

// First port (in event order) whose CONN_CLOSE count exceeds its CONN_OPEN
// count at some prefix, if any.
std::optional<int> connection_balance_violation(const TrafficTrace& trace);

// Events with begin <= time < end (the last window also keeps time == trace end).
TrafficTrace slice(const TrafficTrace& trace, double begin, double end);

std::string write_trace(const TrafficTrace& trace);
// Throws InputError naming the line.
TrafficTrace read_trace(std::string_view content, const std::string& source = "<trace>");

}  // namespace ctbnids

#endif
