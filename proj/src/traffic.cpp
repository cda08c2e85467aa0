#include "ctbnids/traffic.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "ctbnids/errors.hpp"
#include "ctbnids/text.hpp"

namespace ctbnids {

std::string_view event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kPacketIn: return "PKT_IN";
    case EventKind::kPacketOut: return "PKT_OUT";
    case EventKind::kConnOpen: return "CONN_OPEN";
    case EventKind::kConnClose: return "CONN_CLOSE";
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
  for (EventKind k : kEventKinds)
    if (event_kind_name(k) == name) return k;
  return std::nullopt;
}

void validate_trace(const TrafficTrace& trace) {
  if (!(trace.end >= trace.begin)) throw InputError("trace end precedes its begin");
  double last = trace.begin;
  for (const TrafficEvent& e : trace.events) {
    if (e.time < last) throw InputError("trace events are not time ordered");
    if (e.time > trace.end) throw InputError("trace event after the end of the trace");
    last = e.time;
  }
}

std::optional<int> connection_balance_violation(const TrafficTrace& trace) {
  std::map<int, long long> open;
  for (const TrafficEvent& e : trace.events) {
    if (e.kind == EventKind::kConnOpen) ++open[e.port];
    if (e.kind == EventKind::kConnClose && --open[e.port] < 0) return e.port;
  }
  return std::nullopt;
}

TrafficTrace slice(const TrafficTrace& trace, double begin, double end) {
  TrafficTrace out;
  out.begin = begin;
  out.end = end;
  const bool closed = end >= trace.end;
  for (const TrafficEvent& e : trace.events)
    if (e.time >= begin && (e.time < end || (closed && e.time <= end))) out.events.push_back(e);
  return out;
}

std::string write_trace(const TrafficTrace& trace) {
  std::ostringstream out;
  out << "timestamp_seconds,port,kind\n";
  out << "#@ span=" << text::format_number(trace.begin) << ',' << text::format_number(trace.end)
      << '\n';
  for (const TrafficEvent& e : trace.events)
    out << text::format_number(e.time) << ',' << e.port << ',' << event_kind_name(e.kind) << '\n';
  return out.str();
}

TrafficTrace read_trace(std::string_view content, const std::string& source) {
  TrafficTrace trace;
  std::optional<std::pair<double, double>> span;
  bool header = false;
  const auto lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.starts_with("#@ span=")) {
        const auto parts = text::split(line.substr(8), ',');
        if (parts.size() != 2) throw InputError(where + ": malformed span directive");
        span = {text::parse_number(parts[0], where), text::parse_number(parts[1], where)};
      }
      continue;
    }
    if (!header) {
      if (line != "timestamp_seconds,port,kind")
        throw InputError(where + ": expected header 'timestamp_seconds,port,kind'");
      header = true;
      continue;
    }
    const auto fields = text::split(line, ',');
    if (fields.size() != 3) throw InputError(where + ": expected 3 comma separated fields");
    TrafficEvent e;
    e.time = text::parse_number(fields[0], where);
    e.port = static_cast<int>(text::parse_integer(fields[1], where));
    const auto kind = parse_event_kind(text::trim(fields[2]));
    if (!kind) throw InputError(where + ": unknown event kind '" + std::string(fields[2]) + "'");
    e.kind = *kind;
    if (!trace.events.empty() && e.time < trace.events.back().time)
      throw InputError(where + ": timestamps must be non-decreasing");
    trace.events.push_back(e);
  }
  if (!header) throw InputError(source + ": missing header line");
  if (span) {
    trace.begin = span->first;
    trace.end = span->second;
  } else if (!trace.events.empty()) {
    trace.begin = trace.events.front().time;
    trace.end = trace.events.back().time;
  }
  try {
    validate_trace(trace);
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
  return trace;
}

}  // namespace ctbnids
