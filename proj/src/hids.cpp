#include "ctbnids/hids.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <tuple>

#include "ctbnids/errors.hpp"
#include "ctbnids/random.hpp"
#include "ctbnids/text.hpp"

namespace ctbnids::hids {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kQuietTag = -1;

struct EncodedTick {
  double time;
  std::vector<int> calls;
};

std::vector<EncodedTick> encode(const SyscallModel& model, const ProcessTrace& trace) {
  std::vector<EncodedTick> out;
  out.reserve(trace.ticks.size());
  for (const Tick& t : trace.ticks) {
    EncodedTick e{t.time, {}};
    for (const std::string& c : t.calls) {
      const auto idx = model.call_index(c);
      if (!idx) throw InputError("process " + trace.id + ": call '" + c + "' not in the vocabulary");
      e.calls.push_back(*idx);
    }
    out.push_back(std::move(e));
  }
  return out;
}

double gap_after(const std::vector<EncodedTick>& ticks, std::size_t i, double delta) {
  if (i + 1 >= ticks.size()) return 0.0;
  return std::max(0.0, ticks[i + 1].time - ticks[i].time - delta);
}

Matrix spike_generator(const Matrix& quiet, const Matrix& rates, std::span<const int> calls) {
  const Eigen::Index m = quiet.rows();
  const Eigen::Index k = static_cast<Eigen::Index>(calls.size());
  Matrix q = Matrix::Zero(m * (k + 1), m * (k + 1));
  for (Eigen::Index b = 0; b <= k; ++b) q.block(b * m, b * m, m, m) = quiet;
  for (Eigen::Index b = 0; b < k; ++b)
    q.block(b * m, (b + 1) * m, m, m) = rates.col(calls[b]).asDiagonal();
  return q;
}

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uniform01(rng));
}

}  // namespace

const std::vector<std::string>& default_vocabulary() {
  static const std::vector<std::string> vocab = {
      "close", "ioctl", "mmap",  "open",  "fcntl", "stat",  "access", "execve",
      "chdir", "chroot", "unlink", "chown", "mkdir", "chmod", std::string(kOtherCall)};
  return vocab;
}

std::optional<int> SyscallModel::call_index(std::string_view name) const {
  std::optional<int> other;
  for (int i = 0; i < vocabulary_size(); ++i) {
    if (vocabulary[i] == name) return i;
    if (vocabulary[i] == kOtherCall) other = i;
  }
  return other;
}

Vector SyscallModel::total_call_rate() const { return call_rates.rowwise().sum(); }

Matrix SyscallModel::quiet_generator() const {
  Matrix q = hidden.matrix();
  q.diagonal() -= total_call_rate();
  return q;
}

void SyscallModel::validate() const {
  if (hidden.size() < 1) throw InputError("syscall model needs at least one hidden state");
  if (vocabulary.empty()) throw InputError("syscall model needs a vocabulary");
  if (call_rates.rows() != hidden.size() || call_rates.cols() != vocabulary_size())
    throw InputError("call rate table has the wrong shape");
  if (!call_rates.allFinite() || (call_rates.array() < 0.0).any())
    throw InputError("call rates must be finite and >= 0");
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (vocabulary[i] == vocabulary[j]) throw InputError("duplicate call '" + vocabulary[i] + "'");
}

ctbn::CtbnModel SyscallModel::to_ctbn() const {
  validate();
  ctbn::CtbnModel m;
  if (hidden_states() < 2) throw InputError("serialized syscall models need >= 2 hidden states");
  const int h = m.add_variable("H", hidden_states());
  m.set_cim(h, {}, {hidden});
  for (int s = 0; s < vocabulary_size(); ++s) {
    const int v = m.add_variable("call@" + vocabulary[s], 2, true);
    std::vector<ctmc::IntensityMatrix> per_h;
    for (int x = 0; x < hidden_states(); ++x) {
      const double r = call_rates(x, s);
      Matrix q(2, 2);
      q << -r, r, r, -r;
      per_h.emplace_back(q);
    }
    m.set_cim(v, {h}, std::move(per_h));
  }
  m.meta()["model"] = "syscall";
  return m;
}

SyscallModel SyscallModel::from_ctbn(const ctbn::CtbnModel& m) {
  auto bad = [](const std::string& what) { throw InputError("not a syscall model: " + what); };
  const auto h = m.find("H");
  if (!h || !m.cim(*h).parents.empty()) bad("missing parentless variable H");
  SyscallModel out;
  out.hidden = m.cim(*h).matrices.front();
  std::vector<int> calls;
  for (int v = 0; v < m.size(); ++v) {
    if (v == *h) continue;
    const std::string& name = m.variable(v).name;
    if (!name.starts_with("call@") || !m.variable(v).toggle) bad("unexpected variable " + name);
    if (m.cim(v).parents != std::vector<int>{*h}) bad(name + " must have H as its only parent");
    out.vocabulary.push_back(name.substr(5));
    calls.push_back(v);
  }
  out.call_rates = Matrix::Zero(out.hidden_states(), out.vocabulary_size());
  for (int s = 0; s < out.vocabulary_size(); ++s)
    for (int x = 0; x < out.hidden_states(); ++x) {
      const auto& q = m.cim(calls[s]).matrices[x];
      if (q.rate(0, 1) != q.rate(1, 0)) bad("toggle rates are not symmetric");
      out.call_rates(x, s) = q.rate(0, 1);
    }
  out.validate();
  return out;
}

bool SyscallModel::operator==(const SyscallModel& other) const {
  return hidden == other.hidden && vocabulary == other.vocabulary &&
         call_rates == other.call_rates;
}

SyscallModel random_syscall_model(int hidden_states, std::vector<std::string> vocabulary,
                                  std::uint64_t seed, const RateRanges& ranges) {
  if (hidden_states < 1) throw InputError("need at least one hidden state");
  Rng rng(seed);
  Matrix q = Matrix::Zero(hidden_states, hidden_states);
  for (int i = 0; i < hidden_states; ++i)
    for (int j = 0; j < hidden_states; ++j)
      if (i != j) q(i, j) = log_uniform(rng, ranges.hidden_lo, ranges.hidden_hi);
  SyscallModel model;
  model.hidden = ctmc::IntensityMatrix(q);
  model.vocabulary = std::move(vocabulary);
  model.call_rates = Matrix(hidden_states, model.vocabulary_size());
  for (int x = 0; x < hidden_states; ++x)
    for (int s = 0; s < model.vocabulary_size(); ++s)
      model.call_rates(x, s) = log_uniform(rng, ranges.call_lo, ranges.call_hi);
  model.validate();
  return model;
}

std::string_view label_name(Label label) {
  switch (label) {
    case Label::kNormal: return "normal";
    case Label::kAttack: return "attack";
    case Label::kUnknown: return "unknown";
  }
  return "unknown";
}

double ProcessTrace::horizon() const {
  if (ticks.empty()) return 0.0;
  return ticks.back().time + resolution - ticks.front().time;
}

std::size_t ProcessTrace::call_count() const {
  std::size_t n = 0;
  for (const Tick& t : ticks) n += t.calls.size();
  return n;
}

void ProcessTrace::validate() const {
  if (!(resolution > 0.0)) throw InputError("process " + id + ": resolution must be positive");
  for (std::size_t i = 1; i < ticks.size(); ++i)
    if (ticks[i].time - ticks[i - 1].time < resolution * (1.0 - 1e-9))
      throw InputError("process " + id + ": ticks closer than one resolution unit");
}

Matrix build_spike_generator(const SyscallModel& model, std::span<const int> calls) {
  for (int c : calls)
    if (c < 0 || c >= model.vocabulary_size()) throw InputError("call index out of range");
  return spike_generator(model.quiet_generator(), model.call_rates, calls);
}

Matrix build_spike_generator(const SyscallModel& model, const std::vector<std::string>& calls) {
  std::vector<int> idx;
  for (const std::string& c : calls) {
    const auto i = model.call_index(c);
    if (!i) throw InputError("call '" + c + "' not in the vocabulary");
    idx.push_back(*i);
  }
  return build_spike_generator(model, idx);
}

RowVector spike_forward(const RowVector& alpha_in, const Matrix& spike_generator, double delta) {
  const Eigen::Index m = alpha_in.size();
  const Eigen::Index d = spike_generator.rows();
  if (d % m != 0) throw InputError("spike generator size is not a multiple of |H|");
  RowVector v = RowVector::Zero(d);
  v.head(m) = alpha_in;
  const RowVector out = (v * expm(spike_generator * delta)).tail(m);
  return out.cwiseMax(0.0);
}

RowVector quiet_forward(const RowVector& alpha_in, const SyscallModel& model, double gap) {
  if (!(gap >= 0.0)) throw InputError("quiet period must be >= 0");
  if (gap == 0.0) return alpha_in;
  return (alpha_in * expm(model.quiet_generator() * gap)).cwiseMax(0.0);
}

double process_loglik(const SyscallModel& model, const ProcessTrace& trace) {
  trace.validate();
  if (trace.ticks.empty()) throw InputError("process " + trace.id + " has no ticks");
  const auto ticks = encode(model, trace);
  const int m = model.hidden_states();
  const Matrix quiet = model.quiet_generator();
  RowVector alpha = RowVector::Constant(m, 1.0 / m);
  double log_mass = 0.0;
  auto renormalize = [&]() {
    const double c = alpha.sum();
    if (!(c > 0.0)) return false;
    log_mass += std::log(c);
    alpha /= c;
    return true;
  };
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    alpha = spike_forward(alpha, spike_generator(quiet, model.call_rates, ticks[i].calls),
                          trace.resolution);
    if (!renormalize()) return kNegInf;
    const double gap = gap_after(ticks, i, trace.resolution);
    if (gap > 0.0) {
      alpha = (alpha * expm(quiet * gap)).cwiseMax(0.0);
      if (!renormalize()) return kNegInf;
    }
  }
  return log_mass;
}

HidsStats::HidsStats(int hidden_states, int vocabulary_size)
    : hidden(hidden_states), call_counts(Matrix::Zero(hidden_states, vocabulary_size)) {}

HidsStats& HidsStats::operator+=(const HidsStats& other) {
  if (call_counts.size() == 0) return *this = other;
  hidden += other.hidden;
  call_counts += other.call_counts;
  horizon += other.horizon;
  log_likelihood += other.log_likelihood;
  return *this;
}

HidsStats hids_estep(const SyscallModel& model, std::span<const ProcessTrace> traces,
                     IntegralMethod method) {
  model.validate();
  const int m = model.hidden_states();
  const Matrix& qh = model.hidden.matrix();
  const auto quiet = std::make_shared<const Matrix>(model.quiet_generator());
  std::map<std::size_t, std::pair<std::shared_ptr<const Matrix>, std::shared_ptr<const Matrix>>>
      embed_extract;
  auto jumps_for = [&](std::size_t k) {
    auto it = embed_extract.find(k);
    if (it != embed_extract.end()) return it->second;
    const Eigen::Index d = m * static_cast<Eigen::Index>(k + 1);
    Matrix embed = Matrix::Zero(m, d);
    embed.leftCols(m).setIdentity();
    Matrix extract = Matrix::Zero(d, m);
    extract.bottomRows(m).setIdentity();
    auto pair = std::make_pair(std::make_shared<const Matrix>(std::move(embed)),
                               std::make_shared<const Matrix>(std::move(extract)));
    embed_extract.emplace(k, pair);
    return pair;
  };

  HidsStats stats(m, model.vocabulary_size());
  for (const ProcessTrace& trace : traces) {
    trace.validate();
    if (trace.ticks.empty()) continue;
    const auto ticks = encode(model, trace);
    std::vector<ChainStep> steps;
    double t = ticks.front().time;
    for (std::size_t i = 0; i < ticks.size(); ++i) {
      const auto& calls = ticks[i].calls;
      if (calls.empty()) {
        steps.push_back(ChainStep::propagate(quiet, t, trace.resolution, kQuietTag));
      } else {
        const auto [embed, extract] = jumps_for(calls.size());
        steps.push_back(ChainStep::jump(embed, t));
        steps.push_back(ChainStep::propagate(
            std::make_shared<const Matrix>(spike_generator(*quiet, model.call_rates, calls)), t,
            trace.resolution, static_cast<int>(i)));
        steps.push_back(ChainStep::jump(extract, t + trace.resolution));
      }
      t += trace.resolution;
      const double gap = gap_after(ticks, i, trace.resolution);
      if (gap > 0.0) steps.push_back(ChainStep::propagate(quiet, t, gap, kQuietTag));
      t += gap;
    }

    ForwardBackward fb(RowVector::Constant(m, 1.0 / m), std::move(steps));
    if (fb.impossible())
      throw NumericalError("process " + trace.id + " has zero probability under the model");
    stats.log_likelihood += fb.log_evidence();
    stats.horizon += trace.horizon();
    const auto& all = fb.steps();
    fb.backward(method, [&](std::size_t s, const Matrix& occ) {
      const ChainStep& step = all[s];
      if (step.kind != ChainStep::Kind::kPropagate) return;
      const Eigen::Index blocks = occ.rows() / m;
      for (Eigen::Index b = 0; b < blocks; ++b) {
        const auto c = occ.block(b * m, b * m, m, m);
        stats.hidden.dwell += c.diagonal();
        Matrix flow = qh.cwiseProduct(c);
        flow.diagonal().setZero();
        stats.hidden.counts += flow;
      }
      if (step.tag == kQuietTag) return;
      const auto& calls = ticks[step.tag].calls;
      for (Eigen::Index b = 0; b + 1 < blocks; ++b) {
        const int call = calls[b];
        for (int h = 0; h < m; ++h)
          stats.call_counts(h, call) += model.call_rates(h, call) * occ(b * m + h, (b + 1) * m + h);
      }
    });
  }
  return stats;
}

SyscallModel hids_mstep(const SyscallModel& model, const HidsStats& stats,
                        const ctmc::Regularization& reg) {
  SyscallModel out = model;
  out.hidden = ctmc::mle_complete(stats.hidden, reg);
  const double floor = reg.pseudo_count / (reg.pseudo_time + stats.horizon);
  for (int s = 0; s < model.vocabulary_size(); ++s) {
    const bool seen = stats.call_counts.col(s).sum() > 0.0;
    for (int h = 0; h < model.hidden_states(); ++h) {
      const double time = stats.hidden.dwell(h);
      out.call_rates(h, s) = (seen && time > 0.0) ? stats.call_counts(h, s) / time : floor;
    }
  }
  return out;
}

HidsEmResult hids_em(const SyscallModel& init, std::span<const ProcessTrace> traces,
                     const HidsEmConfig& config) {
  if (config.max_iterations < 0) throw InputError("max_iterations must be >= 0");
  HidsEmResult result{init, {}, 0, false};
  for (int it = 0;; ++it) {
    const HidsStats stats = hids_estep(result.model, traces);
    result.log_likelihoods.push_back(stats.log_likelihood);
    if (it > 0) {
      const double prev = result.log_likelihoods[it - 1];
      if ((stats.log_likelihood - prev) / std::max(std::abs(prev), 1e-300) < config.tolerance) {
        result.converged = true;
        break;
      }
    }
    if (it == config.max_iterations) break;
    result.model = hids_mstep(result.model, stats, config.regularization);
    result.iterations = it + 1;
  }
  return result;
}

std::vector<std::string> call_sequence(const ProcessTrace& trace) {
  std::vector<std::string> out;
  for (const Tick& t : trace.ticks) out.insert(out.end(), t.calls.begin(), t.calls.end());
  return out;
}

StideDatabase::StideDatabase(std::span<const ProcessTrace> normal, int k) : k_(k) {
  if (k < 1) throw InputError("stide window length must be >= 1");
  for (const ProcessTrace& trace : normal) {
    const auto seq = call_sequence(trace);
    for (std::size_t i = 0; i + k <= seq.size(); ++i)
      windows_.emplace_back(seq.begin() + i, seq.begin() + i + k);
  }
  std::sort(windows_.begin(), windows_.end());
  windows_.erase(std::unique(windows_.begin(), windows_.end()), windows_.end());
}

bool StideDatabase::contains(std::span<const std::string> window) const {
  return std::binary_search(windows_.begin(), windows_.end(), window,
                            [](const auto& a, const auto& b) {
                              return std::lexicographical_compare(a.begin(), a.end(), b.begin(),
                                                                  b.end());
                            });
}

StideScore StideDatabase::score(const ProcessTrace& test, int frame) const {
  if (frame < k_) throw InputError("stide locality frame must be >= the window length");
  const auto seq = call_sequence(test);
  StideScore out;
  if (seq.size() < static_cast<std::size_t>(k_)) {
    out.too_short = true;
    return out;
  }
  out.windows = seq.size() - k_ + 1;
  std::vector<int> mismatch(out.windows);
  for (std::size_t i = 0; i < out.windows; ++i)
    mismatch[i] = contains(std::span<const std::string>(seq.data() + i, k_)) ? 0 : 1;
  const std::size_t h = std::min<std::size_t>(frame, out.windows);
  int running = 0;
  for (std::size_t i = 0; i < h; ++i) running += mismatch[i];
  int best = running;
  for (std::size_t i = h; i < out.windows; ++i) {
    running += mismatch[i] - mismatch[i - h];
    best = std::max(best, running);
  }
  out.score = best;
  return out;
}

StideScore stide_baseline(std::span<const ProcessTrace> train, const ProcessTrace& test, int k,
                          int h) {
  return StideDatabase(train, k).score(test, h);
}

std::string write_syscall_traces(std::span<const ProcessTrace> traces) {
  std::ostringstream out;
  const double resolution = traces.empty() ? 0.01 : traces.front().resolution;
  for (const auto& t : traces)
    if (t.resolution != resolution) throw InputError("traces in one file must share a resolution");
  out << "resolution_seconds=" << text::format_number(resolution) << '\n';
  for (const auto& trace : traces)
    for (const Tick& tick : trace.ticks)
      for (std::size_t i = 0; i < tick.calls.size(); ++i)
        out << trace.id << ',' << text::format_number(tick.time) << ',' << i << ','
            << tick.calls[i] << '\n';
  return out.str();
}

std::vector<ProcessTrace> read_syscall_traces(std::string_view content, const std::string& source) {
  std::optional<double> resolution;
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::tuple<double, long long, std::string, std::size_t>>> rows;
  const auto lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    if (!resolution) {
      if (!line.starts_with("resolution_seconds="))
        throw InputError(where + ": expected header 'resolution_seconds=<delta>'");
      resolution = text::parse_number(line.substr(19), where);
      if (!(*resolution > 0.0)) throw InputError(where + ": resolution must be positive");
      continue;
    }
    const auto f = text::split(line, ',');
    if (f.size() != 4) throw InputError(where + ": expected 4 comma separated fields");
    const std::string id(text::trim(f[0]));
    const std::string call(text::trim(f[3]));
    if (id.empty() || call.empty()) throw InputError(where + ": empty process id or call name");
    const double time = text::parse_number(f[1], where);
    const long long seq = text::parse_integer(f[2], where);
    if (seq < 0) throw InputError(where + ": negative seq_index");
    auto [it, fresh] = rows.try_emplace(id);
    if (fresh) order.push_back(id);
    it->second.emplace_back(time, seq, call, ln + 1);
  }
  if (!resolution) throw InputError(source + ": missing resolution header");

  std::vector<ProcessTrace> out;
  for (const std::string& id : order) {
    auto& r = rows[id];
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    ProcessTrace trace;
    trace.id = id;
    trace.resolution = *resolution;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto& [time, seq, call, ln] = r[i];
      if (i > 0 && std::get<0>(r[i - 1]) == time && std::get<1>(r[i - 1]) == seq)
        throw InputError(text::location(source, ln) + ": duplicate seq_index within a tick");
      if (trace.ticks.empty() || trace.ticks.back().time != time) trace.ticks.push_back({time, {}});
      trace.ticks.back().calls.push_back(call);
    }
    try {
      trace.validate();
    } catch (const InputError& e) {
      throw InputError(source + ": " + e.what());
    }
    out.push_back(std::move(trace));
  }
  return out;
}

std::string write_labels(std::span<const ProcessTrace> traces) {
  std::ostringstream out;
  for (const auto& t : traces) out << t.id << ',' << label_name(t.label) << '\n';
  return out.str();
}

void apply_labels(std::vector<ProcessTrace>& traces, std::string_view content,
                  const std::string& source) {
  std::map<std::string, ProcessTrace*> by_id;
  for (auto& t : traces) by_id[t.id] = &t;
  const auto lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    const auto f = text::split(line, ',');
    if (f.size() != 2) throw InputError(where + ": expected 'process_id,label'");
    const auto it = by_id.find(std::string(text::trim(f[0])));
    if (it == by_id.end())
      throw InputError(where + ": unknown process '" + std::string(text::trim(f[0])) + "'");
    const std::string_view name = text::trim(f[1]);
    if (name == "normal") it->second->label = Label::kNormal;
    else if (name == "attack") it->second->label = Label::kAttack;
    else if (name == "unknown") it->second->label = Label::kUnknown;
    else throw InputError(where + ": label must be normal, attack or unknown");
  }
}

}  // namespace ctbnids::hids
