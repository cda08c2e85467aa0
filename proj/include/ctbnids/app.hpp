#ifndef CTBNIDS_APP_HPP
#define CTBNIDS_APP_HPP

// Run configuration, file plumbing and the end-to-end pipelines behind the
// command line tool.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctbnids/eval.hpp"
#include "ctbnids/hids.hpp"
#include "ctbnids/nids.hpp"
#include "ctbnids/synth.hpp"
#include "ctbnids/traffic.hpp"

namespace ctbnids::app {

struct RunConfig {
  std::uint64_t seed = 1;

  // [nids]
  int particles = 100;
  double window = 50.0;
  double resample = 50.0;
  int global_states = 4;
  int hidden_states = 8;
  int ports = 9;
  bool other_bucket = true;
  int nids_iterations = 5;

  // [traffic]
  double duration = 7200.0;
  std::vector<int> generator_ports{22, 25, 80, 443};

  // [inject]
  double alpha = 0.02;
  double beta = 0.01;
  std::string anomaly = "flood";
  int template_events = 2000;
  double template_rate = 200.0;

  // [hostid]
  double segment = 15.0;
  double rate_scale = 4.0;
  double host_train_duration = 1800.0;
  double host_test_duration = 900.0;
  int host_iterations = 3;

  // [hids]
  int syscall_states = 2;
  int hids_iterations = 100;
  double tolerance = 1e-6;
  double resolution = 0.01;
  int stide_k = 5;
  int stide_h = 50;
  int processes = 40;
  int test_processes = 30;
  int attack_processes = 15;
  double mean_horizon = 5.0;

  // Throws InputError when a field is out of range.
  void validate() const;
};

// Every config key with its section, in echo order.
std::vector<std::pair<std::string, std::string>> config_keys();

// "key = value" lines with optional "[section]" headers and '#' comments.
// Keys must belong to the section they appear under (or be unqualified).
void apply_config_text(RunConfig& config, std::string_view content,
                       const std::string& source = "<config>");
// Sets one key; throws InputError on unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, std::string_view value,
                      const std::string& where = "<flag>");
std::string get_config_value(const RunConfig& config, const std::string& key);

// Canonical "section.key=value" lines.
std::string config_echo(const RunConfig& config);
std::string config_hash(const RunConfig& config);

std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Comment line naming the producing command and the config hash.
std::string produced_by(const std::string& command, const RunConfig& config);

// Named sub-stream of the run seed.
std::uint64_t stream_seed(const RunConfig& config, std::string_view name,
                          std::uint64_t index = 0);

synth::EventBurst anomaly_template(const RunConfig& config, int port);

// Text formats produced by the pipelines.
std::string write_truth(const synth::GroundTruth& truth);
synth::GroundTruth read_truth(std::string_view content, const std::string& source = "<truth>");
std::string write_window_scores(const std::vector<nids::WindowScore>& scores);
std::string write_count_scores(const std::vector<nids::CountScore>& scores);

struct ProcessScore {
  std::string id;
  std::size_t calls = 0;
  double log_likelihood = 0.0;
  double per_event = 0.0;
};
std::string write_process_scores(const std::vector<ProcessScore>& scores);
std::vector<ProcessScore> score_processes(const hids::SyscallModel& model,
                                          const std::vector<hids::ProcessTrace>& traces);

// Network pipeline pieces.
nids::TrafficModel traffic_generator(const RunConfig& config);
nids::TrafficModel train_nids(const RunConfig& config, const TrafficTrace& train,
                              std::vector<double>* log_likelihoods = nullptr);

struct NidsDetection {
  synth::InjectionResult injected;
  std::vector<nids::WindowScore> scores;
  std::vector<nids::CountScore> baseline;
  eval::RocResult roc;
  eval::RocResult baseline_roc;
};

// Injects the configured anomaly (at config.beta) into `test`, scores it and
// evaluates both detectors. The anomaly targets `target_port`.
NidsDetection detect_nids(const RunConfig& config, const nids::TrafficModel& model,
                          const TrafficTrace& test, int target_port);

struct NidsExperiment {
  TrafficTrace train;
  TrafficTrace test;
  nids::TrafficModel model;
  std::vector<double> log_likelihoods;
  NidsDetection detection;
};

// Generate config.duration seconds, train on the first half, inject into and
// score the second half. Writes the artifacts to `out_dir` when given.
NidsExperiment run_nids_experiment(const RunConfig& config,
                                   const std::optional<std::filesystem::path>& out_dir = {});

struct HostIdExperiment {
  Matrix confusion;
  std::size_t segments = 0;
  std::string segment_table;  // filled by run_host_id
};

// Host 0 uses the reference generator, host 1 the same with every rate
// multiplied by config.rate_scale.
HostIdExperiment run_host_id(const RunConfig& config,
                             const std::optional<std::filesystem::path>& out_dir = {});

// Segment log-likelihoods of each trace under each model, scored in
// consecutive windows of config.segment seconds; skipped segments dropped.
HostIdExperiment host_identification(const RunConfig& config,
                                     const std::vector<nids::TrafficModel>& models,
                                     const std::vector<TrafficTrace>& tests,
                                     std::string* segment_table = nullptr);

struct HidsExperiment {
  hids::SyscallModel model;
  std::vector<double> log_likelihoods;
  std::vector<hids::ProcessTrace> test;
  std::vector<ProcessScore> scores;
  std::vector<double> stide_scores;
  eval::RocResult roc;
  eval::RocResult stide_roc;
};

hids::SyscallModel train_hids(const RunConfig& config, const std::vector<hids::ProcessTrace>& train,
                              std::vector<double>* log_likelihoods = nullptr);

HidsExperiment run_hids_experiment(const RunConfig& config,
                                   const std::optional<std::filesystem::path>& out_dir = {});

// Command line entry. `paths` holds the command's file arguments by name.
// Returns the process exit status.
enum ExitCode : int { kOk = 0, kFailure = 1, kInputFailure = 2, kNumericalFailure = 3 };

struct Command {
  std::string name;
  RunConfig config;
  std::map<std::string, std::string> paths;
  std::map<std::string, std::string> options;  // non-config command options
};

// Throws InputError / NumericalError; the tool maps them to exit codes.
void run_command(const Command& command);

}  // namespace ctbnids::app

#endif
