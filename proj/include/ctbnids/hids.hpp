#ifndef CTBNIDS_HIDS_HPP
#define CTBNIDS_HIDS_HPP

// System call model: a hidden process H and one toggle per call name whose
// event rate depends on H. Timestamps come from a clock of resolution delta,
// so the calls sharing a tick are an ordered batch ("spike") somewhere in
// [t, t + delta); the gaps between ticks are call-free ("quiet").
//
// A spike s_1..s_k is handled by the block generator over (progress, H),
//
//   [ Qh  Q1   0  ...  0  ]
//   [ 0   Qh   Q2 ...  0  ]        Qh = Q_H with every call rate subtracted
//   [           ...       ]             from its diagonal
//   [ 0   ...      Qh  Qk ]        Qi = diag(q_{s_i | h})
//   [ 0   ...      0   Qh ]
//
// started in block 0 and read out of block k after delta.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctbnids/chain.hpp"
#include "ctbnids/ctbn.hpp"
#include "ctbnids/ctmc.hpp"

namespace ctbnids::hids {

inline constexpr std::string_view kOtherCall = "OTHER";

// close ioctl mmap open fcntl stat access execve chdir chroot unlink chown
// mkdir chmod, then OTHER.
const std::vector<std::string>& default_vocabulary();

struct SyscallModel {
  ctmc::IntensityMatrix hidden;
  std::vector<std::string> vocabulary;
  Matrix call_rates;  // hidden states x vocabulary

  int hidden_states() const { return hidden.size(); }
  int vocabulary_size() const { return static_cast<int>(vocabulary.size()); }
  // Exact match, else the OTHER entry if the vocabulary has one.
  std::optional<int> call_index(std::string_view name) const;
  Vector total_call_rate() const;
  // Q_H with the total call rate subtracted from the diagonal.
  Matrix quiet_generator() const;
  void validate() const;

  // Variables H and call@<name>.
  ctbn::CtbnModel to_ctbn() const;
  static SyscallModel from_ctbn(const ctbn::CtbnModel& model);

  bool operator==(const SyscallModel&) const;
};

struct RateRanges {
  double hidden_lo = 0.5;
  double hidden_hi = 5.0;
  double call_lo = 1.0;
  double call_hi = 50.0;
};

// Log-uniform random rates.
SyscallModel random_syscall_model(int hidden_states, std::vector<std::string> vocabulary,
                                  std::uint64_t seed, const RateRanges& ranges = {});

enum class Label { kUnknown, kNormal, kAttack };
std::string_view label_name(Label label);

struct Tick {
  double time = 0.0;
  std::vector<std::string> calls;  // in execution order
};

struct ProcessTrace {
  std::string id;
  std::vector<Tick> ticks;
  double resolution = 0.01;
  Label label = Label::kUnknown;

  // From the first tick to one resolution unit past the last.
  double horizon() const;
  std::size_t call_count() const;
  // Throws InputError unless ticks are at least one resolution unit apart.
  void validate() const;
};

// Throws InputError on calls outside the vocabulary.
Matrix build_spike_generator(const SyscallModel& model, std::span<const int> calls);
Matrix build_spike_generator(const SyscallModel& model, const std::vector<std::string>& calls);

// alpha_in embedded in block 0, propagated over delta, read out of block k.
// Unnormalized: the sum is the spike's probability mass given alpha_in.
RowVector spike_forward(const RowVector& alpha_in, const Matrix& spike_generator, double delta);

// alpha_in exp(Qh * gap): no call during the gap.
RowVector quiet_forward(const RowVector& alpha_in, const SyscallModel& model, double gap);

// log P(trace) from a uniform initial H; -inf for an impossible trace.
double process_loglik(const SyscallModel& model, const ProcessTrace& trace);

struct HidsStats {
  ctmc::SufficientStatistics hidden;  // T[h], M[h, h']
  Matrix call_counts;                 // expected calls per (h, call)
  double horizon = 0.0;               // total observed time
  double log_likelihood = 0.0;

  HidsStats() = default;
  HidsStats(int hidden_states, int vocabulary_size);
  HidsStats& operator+=(const HidsStats& other);
};

// Exact forward-backward over the spike/quiet segmentation. Throws
// NumericalError if a trace is impossible under the model.
HidsStats hids_estep(const SyscallModel& model, std::span<const ProcessTrace> traces,
                     IntegralMethod method = IntegralMethod::kBlockExponential);

SyscallModel hids_mstep(const SyscallModel& model, const HidsStats& stats,
                        const ctmc::Regularization& reg = {});

struct HidsEmConfig {
  int max_iterations = 100;
  double tolerance = 1e-6;
  ctmc::Regularization regularization;
};

struct HidsEmResult {
  SyscallModel model;
  std::vector<double> log_likelihoods;  // the last belongs to `model`
  int iterations = 0;
  bool converged = false;
};

HidsEmResult hids_em(const SyscallModel& init, std::span<const ProcessTrace> traces,
                     const HidsEmConfig& config = {});

// Calls of a trace in order, ticks concatenated.
std::vector<std::string> call_sequence(const ProcessTrace& trace);

struct StideScore {
  double score = 0.0;  // most mismatching k-windows inside any frame of h windows
  std::size_t windows = 0;
  bool too_short = false;  // fewer than k calls
};

class StideDatabase {
 public:
  StideDatabase(std::span<const ProcessTrace> normal, int k);
  int window() const { return k_; }
  std::size_t size() const { return windows_.size(); }
  bool contains(std::span<const std::string> window) const;
  StideScore score(const ProcessTrace& test, int frame) const;

 private:
  int k_;
  std::vector<std::vector<std::string>> windows_;  // sorted, unique
};

StideScore stide_baseline(std::span<const ProcessTrace> train, const ProcessTrace& test,
                          int k = 5, int h = 50);

// Text format: "resolution_seconds=<delta>" then
// "process_id,tick_timestamp_seconds,seq_index,call_name" per call.
std::string write_syscall_traces(std::span<const ProcessTrace> traces);
// All processes share the header resolution.
std::vector<ProcessTrace> read_syscall_traces(std::string_view content,
                                              const std::string& source = "<syscalls>");

// Sidecar "process_id,label" with label normal, attack or unknown.
std::string write_labels(std::span<const ProcessTrace> traces);
void apply_labels(std::vector<ProcessTrace>& traces, std::string_view content,
                  const std::string& source = "<labels>");

}  // namespace ctbnids::hids

#endif
