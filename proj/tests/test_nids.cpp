#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ctbnids/errors.hpp"
#include "ctbnids/nids.hpp"
#include "ctbnids/synth.hpp"
#include "ctbnids/traffic.hpp"
#include "oracles.hpp"

using namespace ctbnids;
using namespace ctbnids::nids;

namespace {

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

// A model whose ports ignore G: every Q_{H|g} equals Q_{H|0}.
TrafficModel tied(TrafficModel m) {
  for (auto& sub : m.ports)
    for (auto& q : sub.hidden) q = sub.hidden[0];
  return m;
}

ctmc::SufficientStatistics sum_over_g(const std::vector<ctmc::SufficientStatistics>& per_g) {
  ctmc::SufficientStatistics total;
  for (const auto& s : per_g) total += s;
  return total;
}

// Port statistics summed over g; exact whenever the ports ignore G.
void check_ports(const TrafficStats& stats, const oracle::FlatTrafficStats& flat, double tol) {
  for (std::size_t j = 0; j < flat.hidden.size(); ++j) {
    const auto lib = sum_over_g(stats.ports[j].hidden);
    const auto ref = sum_over_g(flat.hidden[j]);
    CHECK(max_abs(lib.dwell, ref.dwell) < tol);
    CHECK(max_abs(lib.counts, ref.counts) < tol);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(stats.ports[j].active_time[k] - flat.active_time[j][k]) < tol);
  }
}

}  // namespace

TEST_CASE("toggle active states wrap around the hidden states") {
  CHECK(toggle_active_states(0, 8) == std::array<int, 2>{0, 1});
  CHECK(toggle_active_states(3, 8) == std::array<int, 2>{6, 7});
  CHECK(toggle_active_states(2, 4) == std::array<int, 2>{0, 1});
  CHECK(toggle_active_states(3, 2) == std::array<int, 2>{0, 1});
}

TEST_CASE("model construction") {
  const std::vector<int> ports{21, 22, 23, 25, 53, 80, 110, 143, 443};
  const TrafficModel m = build_traffic_model(ports, {4, 8}, 1);
  CHECK(m.variable_count() == 46);
  CHECK(m.to_ctbn().size() == 46);
  CHECK(!m.has_other_bucket());
  CHECK(m.submodel_for(80) == 5);
  CHECK(!m.submodel_for(9999));

  BuildOptions with_other;
  with_other.other_bucket = true;
  const TrafficModel o = build_traffic_model(ports, {4, 8}, 1, with_other);
  CHECK(o.has_other_bucket());
  CHECK(o.submodel_for(9999) == 9);

  CHECK_THROWS_AS(build_traffic_model(ports, {4, 7}, 1), InputError);
  CHECK_THROWS_AS(build_traffic_model({80, 80}, {4, 8}, 1), InputError);
  CHECK_THROWS_AS(build_traffic_model({}, {4, 8}, 1), InputError);
  CHECK_THROWS_AS(build_traffic_model({80}, {1, 8}, 1), InputError);
}

TEST_CASE("network conversion round trips") {
  BuildOptions options;
  options.other_bucket = true;
  const TrafficModel m = build_traffic_model({22, 80}, {3, 4}, 5, options);
  const ctbn::CtbnModel net = m.to_ctbn();
  CHECK(net.find("G"));
  CHECK(net.find("H@80"));
  CHECK(net.find("CONN_OPEN@other"));
  CHECK(TrafficModel::from_ctbn(net) == m);
  ctbn::CtbnModel broken;
  broken.add_variable("X", 2);
  CHECK_THROWS_AS(TrafficModel::from_ctbn(broken), InputError);
}

TEST_CASE("event rate sums the active toggles") {
  const TrafficModel m = build_traffic_model({80}, {2, 4}, 2);
  const PortSubmodel& sub = m.ports[0];
  // |H| = 4: toggles 0 and 2 share {0, 1}, toggles 1 and 3 share {2, 3}.
  CHECK(sub.event_rate(0) == doctest::Approx(sub.toggles[0].rate + sub.toggles[2].rate));
  CHECK(sub.event_rate(3) == doctest::Approx(sub.toggles[1].rate + sub.toggles[3].rate));
}

TEST_CASE("top ports") {
  TrafficTrace t;
  t.end = 10.0;
  for (int i = 0; i < 3; ++i) t.events.push_back({1.0 + i, 80, EventKind::kPacketIn});
  for (int i = 0; i < 3; ++i) t.events.push_back({5.0 + i, 22, EventKind::kPacketIn});
  t.events.push_back({9.0, 443, EventKind::kPacketIn});
  CHECK(top_ports(t, 2) == std::vector<int>{22, 80});
  CHECK(top_ports(t, 10).size() == 3);
}

TEST_CASE("global paths") {
  Matrix q(2, 2);
  q << 0.0, 0.5, 0.5, 0.0;
  const GlobalPath p = sample_global_path(ctmc::IntensityMatrix(q), 1, 10.0, 110.0, 3);
  const auto ss = p.statistics(2);
  CHECK(ss.dwell.sum() == doctest::Approx(100.0));
  CHECK(ss.counts.sum() == static_cast<double>(p.jumps.size()));
  GlobalPath a = sample_global_path(ctmc::IntensityMatrix(q), 0, 0.0, 5.0, 1);
  const GlobalPath b = sample_global_path(ctmc::IntensityMatrix(q), a.final_value(), 5.0, 9.0, 2);
  a.extend(b);
  CHECK(a.end == 9.0);
  CHECK(a.statistics(2).dwell.sum() == doctest::Approx(9.0));
}

TEST_CASE("ports that ignore G: the filter is exact and matches the flattened process") {
  // Two small ports, or one port with informative toggles.
  const std::vector<std::pair<std::vector<int>, TrafficSizes>> cases{{{22, 80}, {2, 2}}, {{22}, {2, 8}}};
  for (const auto& [ports, sizes] : cases) {
    const TrafficModel m = tied(synth::reference_traffic_model(ports, sizes, 7));
    const TrafficTrace trace = synth::gen_traffic(m, 60.0, 11);
    REQUIRE(!trace.events.empty());
    RbpfOptions options;
    options.particles = 3;
    options.resample_every = 20.0;
    const TrafficStats stats = rbpf_estep(m, trace, options);
    const oracle::FlatTrafficStats flat = oracle::flattened_traffic_estep(m, trace);
    CHECK(stats.log_likelihood == doctest::Approx(flat.log_evidence).epsilon(1e-9));
    check_ports(stats, flat, 1e-8);
    CHECK(stats.global.dwell.sum() == doctest::Approx(trace.horizon()));

    // Window scores chain to the full log-likelihood.
    const auto windows = score_windows(m, trace, 7.0, 3, 1);
    double total = 0.0;
    int events = 0;
    for (const auto& w : windows) {
      total += w.log_likelihood;
      events += w.event_count;
      CHECK(w.skipped == (w.event_count == 0));
    }
    CHECK(total == doctest::Approx(flat.log_evidence).epsilon(1e-9));
    CHECK(events == static_cast<int>(trace.events.size()));
    CHECK(windows.back().start + windows.back().length == doctest::Approx(trace.end));
  }
}

TEST_CASE("submodel E step matches the flattened single port") {
  TrafficModel m = tied(synth::reference_traffic_model({443}, {2, 8}, 2));
  m.global = ctmc::IntensityMatrix::zeros(2);
  const TrafficTrace trace = synth::gen_traffic(m, 80.0, 4);
  const auto events = events_by_submodel(m, trace);
  GlobalPath g;
  g.begin = trace.begin;
  g.end = trace.end;
  const SubmodelResult r = submodel_estep(g, m.ports[0], events[0]);
  const SubmodelResult rk = submodel_estep(g, m.ports[0], events[0], IntegralMethod::kRungeKutta);
  const oracle::FlatTrafficStats flat = oracle::flattened_traffic_estep(m, trace);
  CHECK(r.log_likelihood == doctest::Approx(flat.log_evidence).epsilon(1e-9));
  const auto ref = sum_over_g(flat.hidden[0]);
  CHECK(max_abs(r.stats.hidden[0].dwell, ref.dwell) < 1e-8);
  CHECK(max_abs(r.stats.hidden[0].counts, ref.counts) < 1e-8);
  CHECK(max_abs(rk.stats.hidden[0].counts, ref.counts) < 1e-4);
  for (int k = 0; k < 4; ++k) {
    CHECK(r.stats.active_time[k] == doctest::Approx(flat.active_time[0][k]).epsilon(1e-9));
    int observed = 0;
    for (const auto& e : events[0]) observed += static_cast<int>(e.second) == k;
    CHECK(r.stats.events[k] == observed);
  }
}

TEST_CASE("impossible submodel evidence") {
  TrafficModel m = build_traffic_model({80}, {2, 8}, 2);
  m.ports[0].toggles[0].rate = 0.0;
  const PortEvents events{{1.0, EventKind::kPacketIn}};
  GlobalPath g;
  g.end = 2.0;
  const SubmodelResult r = submodel_estep(g, m.ports[0], events);
  CHECK(std::isinf(r.log_likelihood));
}

TEST_CASE("particle filter approaches the exact E step") {
  const TrafficModel m = synth::reference_traffic_model({22, 80}, {2, 2}, 3);
  const TrafficTrace trace = synth::gen_traffic(m, 40.0, 5);
  const oracle::FlatTrafficStats flat = oracle::flattened_traffic_estep(m, trace);
  RbpfOptions options;
  options.particles = 400;
  options.resample_every = 10.0;
  const TrafficStats stats = rbpf_estep(m, trace, options);
  CHECK(stats.global.dwell.sum() == doctest::Approx(40.0));
  const double scale = flat.global.dwell.maxCoeff();
  CHECK(max_abs(stats.global.dwell, flat.global.dwell) < 0.1 * scale);
  CHECK(std::abs(stats.log_likelihood - flat.log_evidence) < 0.5);
}

TEST_CASE("M step: toggle rates are events over active time, with a floor") {
  const TrafficModel m = build_traffic_model({80}, {2, 8}, 2);
  TrafficStats stats(m);
  stats.global.dwell << 6.0, 4.0;
  stats.global.counts << 0.0, 3.0, 2.0, 0.0;
  auto& ps = stats.ports[0];
  ps.hidden[0].dwell = Vector::Constant(8, 1.25);
  ps.hidden[0].counts = Matrix::Constant(8, 8, 1.0);
  ps.events = {6.0, 0.0, 2.0, 1.0};
  ps.active_time = {3.0, 2.0, 4.0, 0.0};
  const ctmc::Regularization reg{0.1, 0.4};
  const TrafficModel out = nids_mstep(m, stats, reg);
  CHECK(out.ports[0].toggles[0].rate == 2.0);
  CHECK(out.ports[0].toggles[2].rate == 0.5);
  CHECK(out.ports[0].toggles[1].rate == doctest::Approx(0.1 / 2.4));
  CHECK(out.ports[0].toggles[3].rate == doctest::Approx(0.1 / 0.4));
  CHECK(out.ports[0].hidden[0].rate(0, 1) == doctest::Approx(0.8));
  CHECK(out.global.rate(0, 1) == 0.5);
}

TEST_CASE("EM bookkeeping and determinism") {
  const TrafficModel gen = synth::reference_traffic_model({22, 80}, {2, 4}, 1);
  const TrafficTrace trace = synth::gen_traffic(gen, 100.0, 2);
  const TrafficModel init = build_traffic_model({22, 80}, {2, 4}, 9);
  RbpfEmConfig config;
  config.iterations = 0;
  CHECK(rbpf_em(init, trace, config).model == init);
  config.iterations = 2;
  config.filter.particles = 20;
  const RbpfEmResult a = rbpf_em(init, trace, config);
  const RbpfEmResult b = rbpf_em(init, trace, config);
  CHECK(a.model == b.model);
  CHECK(a.log_likelihoods == b.log_likelihoods);
  CHECK(a.log_likelihoods.size() == 2);
}

TEST_CASE("connection-count baseline") {
  TrafficTrace t;
  t.end = 20.0;
  t.events = {{1.0, 80, EventKind::kConnOpen}, {2.0, 80, EventKind::kPacketIn},
              {12.0, 22, EventKind::kConnOpen}, {13.0, 22, EventKind::kConnOpen},
              {20.0, 22, EventKind::kConnClose}};
  const auto s = connection_count_baseline(t, 10.0);
  REQUIRE(s.size() == 2);
  CHECK(s[0].score == 1.0);
  CHECK(s[0].event_count == 2);
  CHECK(s[1].score == 2.0);
  CHECK(s[1].event_count == 3);
  const auto w = connection_count_baseline(t, 7.0);
  CHECK(w.size() == 3);
  CHECK(w[2].length == doctest::Approx(6.0));
}

TEST_CASE("trace text format") {
  TrafficTrace t;
  t.begin = 5.0;
  t.end = 50.0;
  t.events = {{5.5, 80, EventKind::kConnOpen}, {7.25, 443, EventKind::kPacketOut},
              {49.0, 80, EventKind::kConnClose}};
  const std::string text = write_trace(t);
  CHECK(text.find("timestamp_seconds,port,kind") != std::string::npos);
  CHECK(read_trace(text) == t);

  const TrafficTrace bare = read_trace("timestamp_seconds,port,kind\n1,80,PKT_IN\n3,80,PKT_OUT\n");
  CHECK(bare.begin == 1.0);
  CHECK(bare.end == 3.0);

  CHECK_THROWS_AS(read_trace("timestamp_seconds,port,kind\n1,80,BOGUS\n"), InputError);
  CHECK_THROWS_AS(read_trace("timestamp_seconds,port,kind\n2,80,PKT_IN\n1,80,PKT_IN\n"), InputError);
  CHECK_THROWS_AS(read_trace("time,port,kind\n1,80,PKT_IN\n"), InputError);
  try {
    read_trace("timestamp_seconds,port,kind\n1,80,PKT_IN\n2,x,PKT_IN\n", "t.csv");
    FAIL("expected an InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("t.csv:3") != std::string::npos);
  }
}

TEST_CASE("slices and connection balance") {
  TrafficTrace t;
  t.end = 10.0;
  t.events = {{0.0, 80, EventKind::kConnClose}, {5.0, 80, EventKind::kConnOpen},
              {10.0, 80, EventKind::kPacketIn}};
  CHECK(connection_balance_violation(t) == 80);
  const TrafficTrace head = slice(t, 0.0, 5.0);
  CHECK(head.events.size() == 1);
  const TrafficTrace tail = slice(t, 5.0, 10.0);
  CHECK(tail.events.size() == 2);
  t.events.erase(t.events.begin());
  CHECK(!connection_balance_violation(t));
}
