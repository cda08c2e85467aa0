#include <doctest.h>

#include <cmath>

#include "ctbnids/errors.hpp"
#include "ctbnids/hids.hpp"
#include "ctbnids/synth.hpp"
#include "oracles.hpp"

using namespace ctbnids;
using namespace ctbnids::hids;

namespace {

SyscallModel small_model(int m, std::uint64_t seed) {
  RateRanges r;
  r.hidden_lo = 0.5;
  r.hidden_hi = 3.0;
  r.call_lo = 0.5;
  r.call_hi = 8.0;
  return random_syscall_model(m, {"open", "read", "close", std::string(kOtherCall)}, seed, r);
}

ProcessTrace make_trace(std::vector<std::pair<double, std::vector<std::string>>> ticks, double delta) {
  ProcessTrace t;
  t.id = "p";
  t.resolution = delta;
  for (auto& [time, calls] : ticks) t.ticks.push_back({time, calls});
  return t;
}

double factorial(int k) { return k <= 1 ? 1.0 : k * factorial(k - 1); }

}  // namespace

TEST_CASE("vocabulary and call lookup") {
  const auto& v = default_vocabulary();
  CHECK(v.size() == 15);
  CHECK(v.front() == "close");
  CHECK(v.back() == kOtherCall);
  const SyscallModel m = small_model(2, 1);
  CHECK(m.call_index("read") == 1);
  CHECK(m.call_index("socket") == 3);
  SyscallModel strict = m;
  strict.vocabulary = {"a", "b", "c", "d"};
  CHECK(!strict.call_index("socket"));
}

TEST_CASE("quiet generator subtracts the call rate") {
  const SyscallModel m = small_model(3, 2);
  const Matrix g = m.quiet_generator();
  for (int h = 0; h < 3; ++h)
    CHECK(g.row(h).sum() == doctest::Approx(-m.call_rates.row(h).sum()));
}

TEST_CASE("network conversion") {
  const SyscallModel m = small_model(2, 3);
  const ctbn::CtbnModel net = m.to_ctbn();
  CHECK(net.size() == 5);
  CHECK(net.find("call@open"));
  CHECK(SyscallModel::from_ctbn(net) == m);
  CHECK_THROWS_AS(small_model(1, 3).to_ctbn(), InputError);
}

TEST_CASE("single hidden state: spike mass has the Poisson closed form") {
  const SyscallModel m = small_model(1, 4);
  const double lambda = m.call_rates.sum();
  const double delta = 0.05;
  RowVector one(1);
  one << 1.0;
  const std::vector<int> pattern{0, 2, 1, 1, 3, 0};
  for (int k = 1; k <= 6; ++k) {
    const std::vector<int> calls(pattern.begin(), pattern.begin() + k);
    double prod = 1.0;
    for (int c : calls) prod *= m.call_rates(0, c);
    const double expected = std::exp(-lambda * delta) * std::pow(delta, k) * prod / factorial(k);
    const double mass = spike_forward(one, build_spike_generator(m, calls), delta).sum();
    CHECK(std::abs(mass - expected) <= 1e-10 * expected);
  }
}

TEST_CASE("spike order matters only with several hidden states") {
  const std::vector<int> a{0, 1, 2};
  const std::vector<int> b{2, 1, 0};
  RowVector one(1);
  one << 1.0;
  const SyscallModel single = small_model(1, 5);
  const double sa = spike_forward(one, build_spike_generator(single, a), 0.1).sum();
  const double sb = spike_forward(one, build_spike_generator(single, b), 0.1).sum();
  CHECK(sa == doctest::Approx(sb).epsilon(1e-12));

  const SyscallModel two = small_model(2, 5);
  const RowVector start = RowVector::Constant(2, 0.5);
  const double ta = spike_forward(start, build_spike_generator(two, a), 0.1).sum();
  const double tb = spike_forward(start, build_spike_generator(two, b), 0.1).sum();
  CHECK(std::abs(ta - tb) > 1e-6 * ta);
}

TEST_CASE("two hidden states: spike mass matches rejection sampling") {
  const SyscallModel m = small_model(2, 6);
  Vector start(2);
  start << 0.3, 0.7;
  const double delta = 0.3;
  for (const std::vector<int>& calls : {std::vector<int>{1}, std::vector<int>{0, 2}}) {
    const RowVector mass = spike_forward(start.transpose(), build_spike_generator(m, calls), delta);
    const auto est = oracle::spike_rejection(m, calls, start, delta, 200000, 17);
    for (int h = 0; h < 2; ++h)
      CHECK(std::abs(mass(h) - est.mass(h)) < 4.0 * est.standard_error(h) + 1e-12);
  }
}

TEST_CASE("direct and chain routes give the same likelihood") {
  const SyscallModel m = small_model(3, 7);
  const auto traces = synth::gen_syscalls(m, 5, 3.0, 0.05, 8);
  for (const auto& t : traces) {
    if (t.ticks.empty()) continue;
    const std::vector<ProcessTrace> one{t};
    const HidsStats s = hids_estep(m, one);
    CHECK(s.log_likelihood == doctest::Approx(process_loglik(m, t)).epsilon(1e-9));
    CHECK(s.hidden.dwell.sum() == doctest::Approx(t.horizon()).epsilon(1e-9));
    CHECK(s.call_counts.sum() == doctest::Approx(static_cast<double>(t.call_count())).epsilon(1e-9));
    CHECK(s.horizon == doctest::Approx(t.horizon()));
  }
}

TEST_CASE("expected statistics satisfy the score identity") {
  // d log P / d rate = E[count] / rate - E[time in the source state].
  const SyscallModel m = small_model(2, 9);
  const ProcessTrace t = make_trace({{0.0, {"open", "read"}}, {0.4, {"read"}}, {1.1, {"close", "open", "read"}}}, 0.1);
  const std::vector<ProcessTrace> one{t};
  const HidsStats s = hids_estep(m, one);
  const double eps = 1e-6;
  for (int h = 0; h < 2; ++h) {
    for (int c = 0; c < 4; ++c) {
      SyscallModel up = m, down = m;
      up.call_rates(h, c) += eps;
      down.call_rates(h, c) -= eps;
      const double numeric = (process_loglik(up, t) - process_loglik(down, t)) / (2 * eps);
      const double analytic = s.call_counts(h, c) / m.call_rates(h, c) - s.hidden.dwell(h);
      CHECK(numeric == doctest::Approx(analytic).epsilon(1e-5));
    }
    const int other = 1 - h;
    Matrix up = m.hidden.matrix(), down = m.hidden.matrix();
    up(h, other) += eps;
    down(h, other) -= eps;
    SyscallModel mu = m, md = m;
    mu.hidden = ctmc::IntensityMatrix(up);
    md.hidden = ctmc::IntensityMatrix(down);
    const double numeric = (process_loglik(mu, t) - process_loglik(md, t)) / (2 * eps);
    const double analytic = s.hidden.counts(h, other) / m.hidden.rate(h, other) - s.hidden.dwell(h);
    CHECK(numeric == doctest::Approx(analytic).epsilon(1e-5));
  }
}

TEST_CASE("M step: call rates are counts over dwell, unseen calls floored") {
  const SyscallModel m = small_model(2, 10);
  HidsStats s(2, 4);
  s.hidden.dwell << 3.0, 1.0;
  s.hidden.counts << 0.0, 2.0, 1.0, 0.0;
  s.call_counts << 6.0, 0.0, 3.0, 0.0, 2.0, 0.0, 0.0, 0.0;
  s.horizon = 4.0;
  const ctmc::Regularization reg{0.2, 1.0};
  const SyscallModel out = hids_mstep(m, s, reg);
  CHECK(out.call_rates(0, 0) == 2.0);
  CHECK(out.call_rates(1, 0) == 2.0);
  CHECK(out.call_rates(0, 2) == 1.0);
  CHECK(out.call_rates(1, 2) == 0.0);
  CHECK(out.call_rates(0, 1) == doctest::Approx(0.2 / 5.0));
  CHECK(out.call_rates(1, 3) == doctest::Approx(0.2 / 5.0));
  CHECK(out.hidden.rate(0, 1) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("EM never decreases the likelihood") {
  const SyscallModel truth = small_model(2, 11);
  const auto traces = synth::gen_syscalls(truth, 6, 4.0, 0.05, 12);
  HidsEmConfig config;
  config.max_iterations = 15;
  config.tolerance = 1e-12;
  config.regularization = ctmc::Regularization::none();
  const HidsEmResult r = hids_em(small_model(2, 13), traces, config);
  for (std::size_t i = 1; i < r.log_likelihoods.size(); ++i)
    CHECK(r.log_likelihoods[i] >= r.log_likelihoods[i - 1] - 1e-9);
}

TEST_CASE("impossible traces") {
  SyscallModel m = small_model(2, 14);
  m.call_rates.col(0).setZero();
  const ProcessTrace t = make_trace({{0.0, {"open"}}}, 0.1);
  CHECK(std::isinf(process_loglik(m, t)));
  const std::vector<ProcessTrace> one{t};
  CHECK_THROWS_AS(hids_estep(m, one), NumericalError);
}

TEST_CASE("process trace checks") {
  const ProcessTrace t = make_trace({{1.0, {"open"}}, {1.5, {"read", "close"}}}, 0.1);
  CHECK(t.horizon() == doctest::Approx(0.6));
  CHECK(t.call_count() == 3);
  CHECK(call_sequence(t) == std::vector<std::string>{"open", "read", "close"});
  CHECK_THROWS_AS(make_trace({{1.0, {"open"}}, {1.05, {"read"}}}, 0.1).validate(), InputError);
}

TEST_CASE("stide") {
  const ProcessTrace normal = make_trace({{0.0, {"a", "b", "c", "d", "a", "b", "c", "d"}}}, 0.1);
  const std::vector<ProcessTrace> train{normal};
  const StideDatabase db(train, 3);
  CHECK(db.size() == 4);  // abc bcd cda dab
  const std::vector<std::string> abc{"a", "b", "c"};
  CHECK(db.contains(abc));
  CHECK(db.score(normal, 5).score == 0.0);

  const ProcessTrace odd = make_trace({{0.0, {"a", "b", "c", "x", "a", "b", "c", "d", "a"}}}, 0.1);
  // Mismatching windows: bcx cxa xab.
  const StideScore s = db.score(odd, 7);
  CHECK(s.windows == 7);
  CHECK(s.score == 3.0);
  CHECK(db.score(odd, 3).score == 3.0);
  CHECK(db.score(odd, 4).score == 3.0);
  CHECK(stide_baseline(train, odd, 3, 3).score == 3.0);
  const ProcessTrace tiny = make_trace({{0.0, {"a"}}}, 0.1);
  CHECK(db.score(tiny, 5).too_short);
  CHECK_THROWS_AS(db.score(odd, 2), InputError);
}

TEST_CASE("syscall file format and labels") {
  std::vector<ProcessTrace> traces = synth::gen_syscalls(small_model(2, 15), 3, 2.0, 0.01, 16);
  traces[0].label = Label::kAttack;
  traces[1].label = Label::kNormal;
  const std::string text = write_syscall_traces(traces);
  CHECK(text.rfind("resolution_seconds=0.01\n", 0) == 0);
  std::vector<ProcessTrace> back = read_syscall_traces(text);
  std::erase_if(traces, [](const ProcessTrace& t) { return t.ticks.empty(); });
  REQUIRE(back.size() == traces.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == traces[i].id);
    CHECK(back[i].call_count() == traces[i].call_count());
    CHECK(back[i].ticks.size() == traces[i].ticks.size());
  }
  apply_labels(back, write_labels(traces));
  CHECK(back[0].label == traces[0].label);

  CHECK_THROWS_AS(read_syscall_traces("p,0,0,open\n"), InputError);
  CHECK_THROWS_AS(read_syscall_traces("resolution_seconds=0.1\np,0,0,open\np,0,0,read\n"), InputError);
  CHECK_THROWS_AS(apply_labels(back, "p0,evil\n"), InputError);
}
