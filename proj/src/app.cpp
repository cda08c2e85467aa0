#include "ctbnids/app.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include "ctbnids/errors.hpp"
#include "ctbnids/model_io.hpp"
#include "ctbnids/random.hpp"
#include "ctbnids/text.hpp"

namespace ctbnids::app {
namespace {

namespace fs = std::filesystem;

struct Field {
  const char* section;
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view, const std::string&)> set;
};

template <typename T>
Field integer_field(const char* section, const char* name, T RunConfig::*member) {
  return {section, name, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, name](RunConfig& c, std::string_view v, const std::string& where) {
            const long long x = text::parse_integer(v, where + " (" + name + ")");
            if (x < 0 && std::is_unsigned_v<T>) throw InputError(where + ": " + name + " must be >= 0");
            c.*member = static_cast<T>(x);
          }};
}

Field number_field(const char* section, const char* name, double RunConfig::*member) {
  return {section, name, [member](const RunConfig& c) { return text::format_number(c.*member); },
          [member, name](RunConfig& c, std::string_view v, const std::string& where) {
            c.*member = text::parse_number(v, where + " (" + name + ")");
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back(integer_field("run", "seed", &RunConfig::seed));
    t.push_back(integer_field("nids", "particles", &RunConfig::particles));
    t.push_back(number_field("nids", "window", &RunConfig::window));
    t.push_back(number_field("nids", "resample", &RunConfig::resample));
    t.push_back(integer_field("nids", "global_states", &RunConfig::global_states));
    t.push_back(integer_field("nids", "hidden_states", &RunConfig::hidden_states));
    t.push_back(integer_field("nids", "ports", &RunConfig::ports));
    t.push_back({"nids", "other_bucket",
                 [](const RunConfig& c) { return std::string(c.other_bucket ? "true" : "false"); },
                 [](RunConfig& c, std::string_view v, const std::string& where) {
                   if (v == "true" || v == "1") c.other_bucket = true;
                   else if (v == "false" || v == "0") c.other_bucket = false;
                   else throw InputError(where + ": other_bucket must be true or false");
                 }});
    t.push_back(integer_field("nids", "nids_iterations", &RunConfig::nids_iterations));
    t.push_back(number_field("traffic", "duration", &RunConfig::duration));
    t.push_back({"traffic", "generator_ports",
                 [](const RunConfig& c) {
                   std::string s;
                   for (int p : c.generator_ports) s += (s.empty() ? "" : ",") + std::to_string(p);
                   return s;
                 },
                 [](RunConfig& c, std::string_view v, const std::string& where) {
                   c.generator_ports.clear();
                   for (auto part : text::split(v, ','))
                     c.generator_ports.push_back(
                         static_cast<int>(text::parse_integer(part, where + " (generator_ports)")));
                 }});
    t.push_back(number_field("inject", "alpha", &RunConfig::alpha));
    t.push_back(number_field("inject", "beta", &RunConfig::beta));
    t.push_back({"inject", "anomaly", [](const RunConfig& c) { return c.anomaly; },
                 [](RunConfig& c, std::string_view v, const std::string& where) {
                   if (v != "flood" && v != "scan" && v != "probe")
                     throw InputError(where + ": anomaly must be flood, scan or probe");
                   c.anomaly = std::string(v);
                 }});
    t.push_back(integer_field("inject", "template_events", &RunConfig::template_events));
    t.push_back(number_field("inject", "template_rate", &RunConfig::template_rate));
    t.push_back(number_field("hostid", "segment", &RunConfig::segment));
    t.push_back(number_field("hostid", "rate_scale", &RunConfig::rate_scale));
    t.push_back(number_field("hostid", "host_train_duration", &RunConfig::host_train_duration));
    t.push_back(number_field("hostid", "host_test_duration", &RunConfig::host_test_duration));
    t.push_back(integer_field("hostid", "host_iterations", &RunConfig::host_iterations));
    t.push_back(integer_field("hids", "syscall_states", &RunConfig::syscall_states));
    t.push_back(integer_field("hids", "hids_iterations", &RunConfig::hids_iterations));
    t.push_back(number_field("hids", "tolerance", &RunConfig::tolerance));
    t.push_back(number_field("hids", "resolution", &RunConfig::resolution));
    t.push_back(integer_field("hids", "stide_k", &RunConfig::stide_k));
    t.push_back(integer_field("hids", "stide_h", &RunConfig::stide_h));
    t.push_back(integer_field("hids", "processes", &RunConfig::processes));
    t.push_back(integer_field("hids", "test_processes", &RunConfig::test_processes));
    t.push_back(integer_field("hids", "attack_processes", &RunConfig::attack_processes));
    t.push_back(number_field("hids", "mean_horizon", &RunConfig::mean_horizon));
    return t;
  }();
  return table;
}

const Field& field(const std::string& key, const std::string& where) {
  for (const Field& f : fields())
    if (key == f.name) return f;
  throw InputError(where + ": unknown config key '" + key + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError("config: " + what);
}

}  // namespace

void RunConfig::validate() const {
  require(particles >= 1, "particles must be >= 1");
  require(window > 0.0 && resample > 0.0 && segment > 0.0, "window lengths must be positive");
  require(global_states >= 2, "global_states must be >= 2");
  require(hidden_states >= 2 && hidden_states % 2 == 0, "hidden_states must be even and >= 2");
  require(ports >= 1, "ports must be >= 1");
  require(nids_iterations >= 0 && host_iterations >= 0 && hids_iterations >= 0,
          "iteration counts must be >= 0");
  require(duration > 0.0 && host_train_duration > 0.0 && host_test_duration > 0.0,
          "durations must be positive");
  require(!generator_ports.empty(), "generator_ports must not be empty");
  require(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
  require(beta > 0.0 && beta <= 1.0, "beta must be in (0, 1]");
  require(template_events >= 1 && template_rate > 0.0, "anomaly template must be non-empty");
  require(rate_scale > 0.0, "rate_scale must be positive");
  require(syscall_states >= 1, "syscall_states must be >= 1");
  require(tolerance > 0.0, "tolerance must be positive");
  require(resolution > 0.0, "resolution must be positive");
  require(stide_k >= 1 && stide_h >= stide_k, "stide needs k >= 1 and h >= k");
  require(processes >= 1 && test_processes >= 0 && attack_processes >= 0,
          "process counts must be positive");
  require(mean_horizon > 0.0, "mean_horizon must be positive");
}

std::vector<std::pair<std::string, std::string>> config_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.section, f.name);
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, std::string_view value,
                      const std::string& where) {
  field(key, where).set(config, text::trim(value), where);
}

std::string get_config_value(const RunConfig& config, const std::string& key) {
  return field(key, "<query>").get(config);
}

void apply_config_text(RunConfig& config, std::string_view content, const std::string& source) {
  std::string section;
  const auto lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError(where + ": malformed section header");
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw InputError(where + ": expected key = value");
    std::string key(text::trim(line.substr(0, eq)));
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      if (!section.empty() && key.substr(0, dot) != section)
        throw InputError(where + ": key '" + key + "' outside its section");
      const std::string sec = key.substr(0, dot);
      key = key.substr(dot + 1);
      if (field(key, where).section != sec)
        throw InputError(where + ": key '" + key + "' belongs to section [" +
                         field(key, where).section + "]");
    } else if (!section.empty() && field(key, where).section != section) {
      throw InputError(where + ": key '" + key + "' belongs to section [" +
                       field(key, where).section + "], not [" + section + "]");
    }
    set_config_value(config, key, line.substr(eq + 1), where);
  }
}

std::string config_echo(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields())
    out += std::string(f.section) + "." + f.name + "=" + f.get(config) + "\n";
  return out;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(config_echo(config)); }

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < length; ++i)
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string produced_by(const std::string& command, const RunConfig& config) {
  return "# produced-by: " + command + " config-sha256: " + config_hash(config) + "\n";
}

std::uint64_t stream_seed(const RunConfig& config, std::string_view name, std::uint64_t index) {
  return derive_seed(derive_seed(config.seed, name), index);
}

synth::EventBurst anomaly_template(const RunConfig& config, int port) {
  if (config.anomaly == "scan") return synth::scan_template(port, config.template_events, config.template_rate);
  if (config.anomaly == "probe")
    return synth::probe_template(port, config.template_events, config.template_rate);
  return synth::flood_template(port, config.template_events, config.template_rate);
}

std::string write_truth(const synth::GroundTruth& truth) {
  std::string out = "interval_start,interval_end\n";
  for (const auto& iv : truth.intervals)
    out += text::format_number(iv.start) + "," + text::format_number(iv.end) + "\n";
  return out;
}

synth::GroundTruth read_truth(std::string_view content, const std::string& source) {
  synth::GroundTruth truth;
  bool header = false;
  const auto lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "interval_start,interval_end")
        throw InputError(where + ": expected header 'interval_start,interval_end'");
      header = true;
      continue;
    }
    const auto f = text::split(line, ',');
    if (f.size() != 2) throw InputError(where + ": expected 2 fields");
    synth::Interval iv{text::parse_number(f[0], where), text::parse_number(f[1], where)};
    if (!(iv.end >= iv.start)) throw InputError(where + ": interval end precedes its start");
    truth.intervals.push_back(iv);
  }
  if (!header) throw InputError(source + ": missing header");
  return truth;
}

std::string write_window_scores(const std::vector<nids::WindowScore>& scores) {
  std::string out = "window_start,window_end,event_count,log_likelihood\n";
  for (const auto& s : scores)
    out += text::format_number(s.start) + "," + text::format_number(s.start + s.length) + "," +
           std::to_string(s.event_count) + "," +
           (s.skipped ? std::string("skipped") : text::format_number(s.log_likelihood)) + "\n";
  return out;
}

std::string write_count_scores(const std::vector<nids::CountScore>& scores) {
  std::string out = "window_start,window_end,event_count,score\n";
  for (const auto& s : scores)
    out += text::format_number(s.start) + "," + text::format_number(s.start + s.length) + "," +
           std::to_string(s.event_count) + "," +
           (s.skipped ? std::string("skipped") : text::format_number(s.score)) + "\n";
  return out;
}

std::string write_process_scores(const std::vector<ProcessScore>& scores) {
  std::string out = "process_id,n_calls,log_likelihood,per_event_log_likelihood\n";
  for (const auto& s : scores)
    out += s.id + "," + std::to_string(s.calls) + "," + text::format_number(s.log_likelihood) +
           "," + text::format_number(s.per_event) + "\n";
  return out;
}

std::vector<ProcessScore> score_processes(const hids::SyscallModel& model,
                                          const std::vector<hids::ProcessTrace>& traces) {
  std::vector<ProcessScore> out;
  for (const auto& t : traces) {
    ProcessScore s;
    s.id = t.id;
    s.calls = t.call_count();
    s.log_likelihood = hids::process_loglik(model, t);
    s.per_event = s.log_likelihood / static_cast<double>(std::max<std::size_t>(1, s.calls));
    out.push_back(s);
  }
  return out;
}

nids::TrafficModel traffic_generator(const RunConfig& config) {
  return synth::reference_traffic_model(config.generator_ports,
                                        {config.global_states, config.hidden_states},
                                        stream_seed(config, "traffic-generator"));
}

nids::TrafficModel train_nids(const RunConfig& config, const TrafficTrace& train,
                              std::vector<double>* log_likelihoods) {
  config.validate();
  const std::vector<int> ports = nids::top_ports(train, config.ports);
  nids::BuildOptions options;
  options.other_bucket = config.other_bucket || ports.empty();
  const nids::TrafficModel init = nids::build_traffic_model(
      ports, {config.global_states, config.hidden_states}, stream_seed(config, "nids-init"),
      options);
  nids::RbpfEmConfig em;
  em.iterations = config.nids_iterations;
  em.filter.particles = config.particles;
  em.filter.resample_every = config.resample;
  em.filter.seed = stream_seed(config, "nids-em");
  nids::RbpfEmResult result = nids::rbpf_em(init, train, em);
  if (log_likelihoods) *log_likelihoods = result.log_likelihoods;
  return result.model;
}

static eval::RocResult roc_of_windows(const synth::GroundTruth& truth,
                                      const std::vector<eval::Window>& windows,
                                      const std::vector<double>& values, eval::Polarity polarity) {
  const auto labels = eval::label_windows(truth, windows);
  std::vector<double> scores;
  std::unique_ptr<bool[]> flags(new bool[labels.size()]);
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) {
      scores.push_back(values[i]);
      flags[n++] = *labels[i];
    }
  return eval::roc_auc(scores, std::span<const bool>(flags.get(), n), polarity);
}

NidsDetection detect_nids(const RunConfig& config, const nids::TrafficModel& model,
                          const TrafficTrace& test, int target_port) {
  config.validate();
  NidsDetection out;
  synth::InjectionSpec spec;
  spec.alpha = config.alpha;
  spec.beta = config.beta;
  spec.seed = stream_seed(config, "inject");
  spec.anomaly = anomaly_template(config, target_port);
  out.injected = synth::inject_anomaly(test, spec);
  out.scores = nids::score_windows(model, out.injected.trace, config.window, config.particles,
                                   stream_seed(config, "nids-score"));
  out.baseline = nids::connection_count_baseline(out.injected.trace, config.window);

  std::vector<eval::Window> windows;
  std::vector<double> values;
  for (const auto& s : out.scores) {
    windows.push_back({s.start, s.length, s.skipped});
    values.push_back(s.log_likelihood);
  }
  out.roc = roc_of_windows(out.injected.truth, windows, values, eval::Polarity::kLowIsAnomalous);
  windows.clear();
  values.clear();
  for (const auto& s : out.baseline) {
    windows.push_back({s.start, s.length, s.skipped});
    values.push_back(s.score);
  }
  out.baseline_roc =
      roc_of_windows(out.injected.truth, windows, values, eval::Polarity::kHighIsAnomalous);
  return out;
}

NidsExperiment run_nids_experiment(const RunConfig& config,
                                   const std::optional<fs::path>& out_dir) {
  config.validate();
  NidsExperiment ex;
  const nids::TrafficModel generator = traffic_generator(config);
  const TrafficTrace full =
      synth::gen_traffic(generator, config.duration, stream_seed(config, "traffic-sample"));
  const double mid = full.begin + full.horizon() / 2.0;
  ex.train = slice(full, full.begin, mid);
  ex.test = slice(full, mid, full.end);
  ex.model = train_nids(config, ex.train, &ex.log_likelihoods);
  const int target = ex.model.ports.front().port == nids::kOtherPort
                         ? config.generator_ports.front()
                         : ex.model.ports.front().port;
  ex.detection = detect_nids(config, ex.model, ex.test, target);
  if (out_dir) {
    fs::create_directories(*out_dir);
    const std::string head = produced_by("nids-experiment", config);
    write_file_atomic(*out_dir / "traffic_train.csv", head + write_trace(ex.train));
    write_file_atomic(*out_dir / "traffic_test_injected.csv",
                      head + write_trace(ex.detection.injected.trace));
    write_file_atomic(*out_dir / "truth.csv", head + write_truth(ex.detection.injected.truth));
    write_file_atomic(*out_dir / "nids.model", head + write_model(ex.model.to_ctbn()));
    write_file_atomic(*out_dir / "nids_scores.csv",
                      head + write_window_scores(ex.detection.scores));
    write_file_atomic(*out_dir / "baseline_scores.csv",
                      head + write_count_scores(ex.detection.baseline));
    write_file_atomic(*out_dir / "nids_roc.csv", head + eval::roc_table(ex.detection.roc));
  }
  return ex;
}

HostIdExperiment host_identification(const RunConfig& config,
                                     const std::vector<nids::TrafficModel>& models,
                                     const std::vector<TrafficTrace>& tests,
                                     std::string* segment_table) {
  config.validate();
  const int hosts = static_cast<int>(models.size());
  if (hosts < 1 || tests.size() != models.size())
    throw InputError("host identification needs one test trace per model");
  std::vector<std::vector<double>> rows;
  std::vector<int> owner;
  if (segment_table) {
    *segment_table = "host,segment_start,segment_end";
    for (int j = 0; j < hosts; ++j) *segment_table += ",model" + std::to_string(j);
    *segment_table += "\n";
  }
  for (int i = 0; i < hosts; ++i) {
    std::vector<std::vector<nids::WindowScore>> per_model;
    for (int j = 0; j < hosts; ++j)
      per_model.push_back(nids::score_windows(models[j], tests[i], config.segment, config.particles,
                                              stream_seed(config, "host-score",
                                                          static_cast<std::uint64_t>(i * hosts + j))));
    for (std::size_t s = 0; s < per_model.front().size(); ++s) {
      bool skip = false;
      std::vector<double> row;
      for (int j = 0; j < hosts; ++j) {
        skip = skip || per_model[j][s].skipped;
        row.push_back(per_model[j][s].log_likelihood);
      }
      if (skip) continue;
      if (segment_table) {
        const auto& w = per_model.front()[s];
        *segment_table += std::to_string(i) + "," + text::format_number(w.start) + "," +
                          text::format_number(w.start + w.length);
        for (double v : row) *segment_table += "," + text::format_number(v);
        *segment_table += "\n";
      }
      rows.push_back(std::move(row));
      owner.push_back(i);
    }
  }
  HostIdExperiment out;
  out.segments = rows.size();
  out.confusion = eval::confusion_matrix(rows, owner, hosts);
  return out;
}

static std::string write_confusion(const Matrix& c) {
  std::string out = "host";
  for (Eigen::Index j = 0; j < c.cols(); ++j) out += ",model" + std::to_string(j);
  out += "\n";
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    out += std::to_string(i);
    for (Eigen::Index j = 0; j < c.cols(); ++j) out += "," + text::format_number(c(i, j));
    out += "\n";
  }
  return out;
}

HostIdExperiment run_host_id(const RunConfig& config, const std::optional<fs::path>& out_dir) {
  config.validate();
  const nids::TrafficModel slow = traffic_generator(config);
  const nids::TrafficModel fast = synth::scale_rates(slow, config.rate_scale);
  const std::vector<const nids::TrafficModel*> generators{&slow, &fast};
  RunConfig train_config = config;
  train_config.nids_iterations = config.host_iterations;
  std::vector<nids::TrafficModel> models;
  std::vector<TrafficTrace> tests;
  for (std::size_t h = 0; h < generators.size(); ++h) {
    const TrafficTrace train = synth::gen_traffic(*generators[h], config.host_train_duration,
                                                  stream_seed(config, "host-train", h));
    tests.push_back(synth::gen_traffic(*generators[h], config.host_test_duration,
                                       stream_seed(config, "host-test", h)));
    models.push_back(train_nids(train_config, train));
  }
  std::string table;
  HostIdExperiment out = host_identification(config, models, tests, &table);
  out.segment_table = table;
  if (out_dir) {
    fs::create_directories(*out_dir);
    const std::string head = produced_by("host-id", config);
    write_file_atomic(*out_dir / "host_segments.csv", head + table);
    write_file_atomic(*out_dir / "confusion.csv", head + write_confusion(out.confusion));
  }
  return out;
}

hids::SyscallModel train_hids(const RunConfig& config, const std::vector<hids::ProcessTrace>& train,
                              std::vector<double>* log_likelihoods) {
  config.validate();
  const hids::SyscallModel init = hids::random_syscall_model(
      config.syscall_states, hids::default_vocabulary(), stream_seed(config, "hids-init"));
  hids::HidsEmConfig em;
  em.max_iterations = config.hids_iterations;
  em.tolerance = config.tolerance;
  hids::HidsEmResult result = hids::hids_em(init, train, em);
  if (log_likelihoods) *log_likelihoods = result.log_likelihoods;
  return result.model;
}

static std::vector<hids::ProcessTrace> nonempty(std::vector<hids::ProcessTrace> traces,
                                                hids::Label label) {
  std::vector<hids::ProcessTrace> out;
  for (auto& t : traces)
    if (!t.ticks.empty()) {
      t.label = label;
      out.push_back(std::move(t));
    }
  return out;
}

HidsExperiment run_hids_experiment(const RunConfig& config, const std::optional<fs::path>& out_dir) {
  config.validate();
  HidsExperiment ex;
  const hids::SyscallModel generator =
      synth::reference_syscall_model(config.syscall_states, stream_seed(config, "syscall-generator"));
  const hids::SyscallModel attacker =
      synth::permute_call_rates(generator, stream_seed(config, "syscall-permutation"));
  const auto train = nonempty(synth::gen_syscalls(generator, config.processes, config.mean_horizon,
                                                  config.resolution, stream_seed(config, "syscall-train"),
                                                  "train"),
                              hids::Label::kNormal);
  ex.test = nonempty(synth::gen_syscalls(generator, config.test_processes, config.mean_horizon,
                                         config.resolution, stream_seed(config, "syscall-test"),
                                         "normal"),
                     hids::Label::kNormal);
  for (auto& t : nonempty(synth::gen_syscalls(attacker, config.attack_processes, config.mean_horizon,
                                              config.resolution,
                                              stream_seed(config, "syscall-attack"), "attack"),
                          hids::Label::kAttack))
    ex.test.push_back(std::move(t));

  ex.model = train_hids(config, train, &ex.log_likelihoods);
  ex.scores = score_processes(ex.model, ex.test);
  const hids::StideDatabase db(train, config.stide_k);
  std::vector<double> per_event;
  std::unique_ptr<bool[]> labels(new bool[ex.test.size()]);
  for (std::size_t i = 0; i < ex.test.size(); ++i) {
    ex.stide_scores.push_back(db.score(ex.test[i], config.stide_h).score);
    per_event.push_back(ex.scores[i].per_event);
    labels[i] = ex.test[i].label == hids::Label::kAttack;
  }
  const std::span<const bool> flags(labels.get(), ex.test.size());
  ex.roc = eval::roc_auc(per_event, flags, eval::Polarity::kLowIsAnomalous);
  ex.stide_roc = eval::roc_auc(ex.stide_scores, flags, eval::Polarity::kHighIsAnomalous);
  if (out_dir) {
    fs::create_directories(*out_dir);
    const std::string head = produced_by("hids-experiment", config);
    write_file_atomic(*out_dir / "syscalls_train.txt", head + hids::write_syscall_traces(train));
    write_file_atomic(*out_dir / "syscalls_test.txt", head + hids::write_syscall_traces(ex.test));
    write_file_atomic(*out_dir / "labels.csv", head + hids::write_labels(ex.test));
    write_file_atomic(*out_dir / "hids.model", head + write_model(ex.model.to_ctbn()));
    write_file_atomic(*out_dir / "hids_scores.csv", head + write_process_scores(ex.scores));
    std::string stide = "process_id,n_calls,stide_score\n";
    for (std::size_t i = 0; i < ex.test.size(); ++i)
      stide += ex.test[i].id + "," + std::to_string(ex.test[i].call_count()) + "," +
               text::format_number(ex.stide_scores[i]) + "\n";
    write_file_atomic(*out_dir / "stide_scores.csv", head + stide);
    write_file_atomic(*out_dir / "hids_roc.csv", head + eval::roc_table(ex.roc));
    write_file_atomic(*out_dir / "stide_roc.csv", head + eval::roc_table(ex.stide_roc));
  }
  return ex;
}

namespace {

// Collects a command's outputs; nothing is written until every output is
// computed, then each file goes out atomically along with a manifest.
class Run {
 public:
  explicit Run(const Command& command) : command_(command) {}

  const std::string& path(const std::string& name) const {
    const auto it = command_.paths.find(name);
    if (it == command_.paths.end() || it->second.empty())
      throw InputError(command_.name + ": missing --" + name);
    return it->second;
  }
  std::optional<std::string> optional_path(const std::string& name) const {
    const auto it = command_.paths.find(name);
    if (it == command_.paths.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }
  std::string option(const std::string& name, const std::string& fallback) const {
    const auto it = command_.options.find(name);
    return it == command_.options.end() || it->second.empty() ? fallback : it->second;
  }

  std::string input(const std::string& file) {
    std::string content = read_file(file);
    inputs_.emplace_back(file, sha256_hex(content));
    return content;
  }
  void output(const std::string& file, std::string content) {
    outputs_.emplace_back(file, produced_by(command_.name, command_.config) + content);
  }

  void commit() {
    if (outputs_.empty()) return;
    std::set<fs::path> seen;
    for (const auto& [in, hash] : inputs_) seen.insert(fs::weakly_canonical(in));
    std::set<fs::path> written;
    for (const auto& [out, content] : outputs_) {
      const fs::path canon = fs::weakly_canonical(out);
      if (seen.count(canon)) throw InputError(command_.name + ": output " + out + " is also an input");
      if (!written.insert(canon).second)
        throw InputError(command_.name + ": output " + out + " given twice");
    }
    std::string manifest = "command " + command_.name + "\nconfig-sha256 " +
                           config_hash(command_.config) + "\n";
    const std::string echo = config_echo(command_.config);
    for (const auto& line : text::split(echo, '\n'))
      if (!line.empty()) manifest += "config " + std::string(line) + "\n";
    for (const auto& [k, v] : command_.options) manifest += "option " + k + "=" + v + "\n";
    for (const auto& [in, hash] : inputs_) manifest += "input " + hash + " " + in + "\n";
    for (const auto& [out, content] : outputs_) {
      write_file_atomic(out, content);
      manifest += "output " + sha256_hex(content) + " " + out + "\n";
    }
    write_file_atomic(outputs_.front().first + ".manifest", manifest);
  }

 private:
  const Command& command_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
};

ctbn::CtbnModel load_model(Run& run, const std::string& file) {
  return read_model(run.input(file), file);
}

std::string expect_kind(const ctbn::CtbnModel& model, const std::string& kind,
                        const std::string& file) {
  const auto it = model.meta().find("model");
  if (it == model.meta().end() || it->second != kind)
    throw InputError(file + ": not a " + kind + " model");
  return it->second;
}

nids::TrafficModel load_traffic_model(Run& run, const std::string& file) {
  const ctbn::CtbnModel m = load_model(run, file);
  expect_kind(m, "traffic", file);
  return nids::TrafficModel::from_ctbn(m);
}

hids::SyscallModel load_syscall_model(Run& run, const std::string& file) {
  const ctbn::CtbnModel m = load_model(run, file);
  expect_kind(m, "syscall", file);
  return hids::SyscallModel::from_ctbn(m);
}

TrafficTrace load_trace(Run& run, const std::string& file) {
  TrafficTrace trace = read_trace(run.input(file), file);
  validate_trace(trace);
  return trace;
}

std::vector<hids::ProcessTrace> load_syscalls(Run& run, const std::string& file,
                                              const std::optional<std::string>& labels) {
  auto traces = hids::read_syscall_traces(run.input(file), file);
  if (labels) hids::apply_labels(traces, run.input(*labels), *labels);
  return traces;
}

int parse_int_option(const Run& run, const std::string& name, int fallback) {
  return static_cast<int>(
      text::parse_integer(run.option(name, std::to_string(fallback)), "--" + name));
}

std::vector<std::string> split_list(const std::string& list) {
  std::vector<std::string> out;
  for (auto part : text::split(list, ','))
    if (!text::trim(part).empty()) out.emplace_back(text::trim(part));
  return out;
}

// Score files are recognised by their header.
struct ScoreColumn {
  std::vector<std::string> keys;  // window start or process id
  std::vector<double> ends;
  std::vector<double> values;
  std::vector<bool> skipped;
  eval::Polarity polarity = eval::Polarity::kLowIsAnomalous;
  bool windows = true;
};

ScoreColumn read_scores(std::string_view content, const std::string& source) {
  ScoreColumn col;
  std::size_t value_field = 0;
  bool header = false;
  const auto lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line == "window_start,window_end,event_count,log_likelihood") {
        value_field = 3;
      } else if (line == "window_start,window_end,event_count,score") {
        value_field = 3;
        col.polarity = eval::Polarity::kHighIsAnomalous;
      } else if (line == "process_id,n_calls,log_likelihood,per_event_log_likelihood") {
        value_field = 3;
        col.windows = false;
      } else if (line == "process_id,n_calls,stide_score") {
        value_field = 2;
        col.windows = false;
        col.polarity = eval::Polarity::kHighIsAnomalous;
      } else {
        throw InputError(where + ": unrecognised score header");
      }
      header = true;
      continue;
    }
    const auto f = text::split(line, ',');
    if (f.size() != value_field + 1) throw InputError(where + ": wrong number of fields");
    col.keys.emplace_back(f[0]);
    col.ends.push_back(col.windows ? text::parse_number(f[1], where) : 0.0);
    const bool skip = f[value_field] == "skipped";
    col.skipped.push_back(skip);
    col.values.push_back(skip ? 0.0 : text::parse_number(f[value_field], where));
  }
  if (!header) throw InputError(source + ": missing header");
  return col;
}

void cmd_gen_traffic(Run& run, const RunConfig& config) {
  nids::TrafficModel generator = run.optional_path("model")
                                     ? load_traffic_model(run, *run.optional_path("model"))
                                     : traffic_generator(config);
  const TrafficTrace trace =
      synth::gen_traffic(generator, config.duration, stream_seed(config, "traffic-sample"));
  run.output(run.path("out"), write_trace(trace));
  const double mid = trace.begin + trace.horizon() / 2.0;
  if (auto p = run.optional_path("train-out")) run.output(*p, write_trace(slice(trace, trace.begin, mid)));
  if (auto p = run.optional_path("test-out")) run.output(*p, write_trace(slice(trace, mid, trace.end)));
  if (auto p = run.optional_path("generator-out")) run.output(*p, write_model(generator.to_ctbn()));
}

void cmd_gen_syscalls(Run& run, const RunConfig& config) {
  hids::SyscallModel generator =
      run.optional_path("model")
          ? load_syscall_model(run, *run.optional_path("model"))
          : synth::reference_syscall_model(config.syscall_states,
                                           stream_seed(config, "syscall-generator"));
  const std::string kind = run.option("kind", "normal");
  hids::Label label = hids::Label::kNormal;
  if (kind == "attack") {
    generator = synth::permute_call_rates(generator, stream_seed(config, "syscall-permutation"));
    label = hids::Label::kAttack;
  } else if (kind != "normal") {
    throw InputError("--kind must be normal or attack");
  }
  const int count = parse_int_option(run, "count", config.processes);
  const auto batch = static_cast<std::uint64_t>(parse_int_option(run, "batch", 0));
  auto traces = synth::gen_syscalls(generator, count, config.mean_horizon, config.resolution,
                                    stream_seed(config, "syscall-" + kind, batch),
                                    run.option("prefix", kind + "-"));
  for (auto& t : traces) t.label = label;
  run.output(run.path("out"), hids::write_syscall_traces(traces));
  if (auto p = run.optional_path("labels")) run.output(*p, hids::write_labels(traces));
  if (auto p = run.optional_path("generator-out")) run.output(*p, write_model(generator.to_ctbn()));
}

void cmd_inject(Run& run, const RunConfig& config) {
  const TrafficTrace trace = load_trace(run, run.path("trace"));
  int port = 0;
  if (const std::string p = run.option("port", ""); !p.empty()) {
    port = static_cast<int>(text::parse_integer(p, "--port"));
  } else {
    const auto busiest = nids::top_ports(trace, 1);
    if (busiest.empty()) throw InputError("inject: trace has no events; pass --port");
    port = busiest.front();
  }
  synth::InjectionSpec spec;
  spec.alpha = config.alpha;
  spec.beta = config.beta;
  spec.seed = stream_seed(config, "inject");
  if (auto mix = run.optional_path("source")) {
    const auto result = synth::mix_hosts(trace, load_trace(run, *mix), spec);
    run.output(run.path("out"), write_trace(result.trace));
    run.output(run.path("truth"), write_truth(result.truth));
    return;
  }
  spec.anomaly = anomaly_template(config, port);
  const auto result = synth::inject_anomaly(trace, spec);
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  run.output(run.path("out"), write_trace(result.trace));
  run.output(run.path("truth"), write_truth(result.truth));
}

void cmd_train_nids(Run& run, const RunConfig& config) {
  const TrafficTrace trace = load_trace(run, run.path("trace"));
  if (const auto v = connection_balance_violation(trace))
    std::fprintf(stderr, "warning: port %d closes more connections than it opens\n", *v);
  run.output(run.path("model-out"), write_model(train_nids(config, trace).to_ctbn()));
}

void cmd_score_nids(Run& run, const RunConfig& config) {
  const nids::TrafficModel model = load_traffic_model(run, run.path("model"));
  const TrafficTrace trace = load_trace(run, run.path("trace"));
  run.output(run.path("out"),
             write_window_scores(nids::score_windows(model, trace, config.window, config.particles,
                                                     stream_seed(config, "nids-score"))));
}

void cmd_train_hids(Run& run, const RunConfig& config) {
  auto traces = load_syscalls(run, run.path("traces"), run.optional_path("labels"));
  std::vector<hids::ProcessTrace> train;
  for (auto& t : traces)
    if (t.label != hids::Label::kAttack && !t.ticks.empty()) train.push_back(std::move(t));
  if (train.empty()) throw InputError("train-hids: no normal processes with calls");
  run.output(run.path("model-out"), write_model(train_hids(config, train).to_ctbn()));
}

void cmd_score_hids(Run& run, const RunConfig& config) {
  (void)config;
  const hids::SyscallModel model = load_syscall_model(run, run.path("model"));
  const auto traces = load_syscalls(run, run.path("traces"), std::nullopt);
  run.output(run.path("out"), write_process_scores(score_processes(model, traces)));
}

void cmd_baseline(Run& run, const RunConfig& config) {
  const std::string kind = run.option("kind", "connections");
  if (kind == "connections") {
    const TrafficTrace trace = load_trace(run, run.path("trace"));
    run.output(run.path("out"),
               write_count_scores(nids::connection_count_baseline(trace, config.window)));
  } else if (kind == "stide") {
    auto train = load_syscalls(run, run.path("train"), run.optional_path("labels"));
    std::erase_if(train, [](const auto& t) { return t.label == hids::Label::kAttack; });
    const auto test = load_syscalls(run, run.path("traces"), std::nullopt);
    const hids::StideDatabase db(train, config.stide_k);
    std::string out = "process_id,n_calls,stide_score\n";
    for (const auto& t : test)
      out += t.id + "," + std::to_string(t.call_count()) + "," +
             text::format_number(db.score(t, config.stide_h).score) + "\n";
    run.output(run.path("out"), out);
  } else {
    throw InputError("--kind must be connections or stide");
  }
}

void cmd_eval_roc(Run& run, const RunConfig& config) {
  (void)config;
  const std::string scores_file = run.path("scores");
  const ScoreColumn col = read_scores(run.input(scores_file), scores_file);
  std::vector<double> values;
  std::vector<char> flags;
  if (col.windows) {
    const synth::GroundTruth truth = read_truth(run.input(run.path("truth")), run.path("truth"));
    std::vector<eval::Window> windows;
    for (std::size_t i = 0; i < col.keys.size(); ++i) {
      const double start = text::parse_number(col.keys[i], scores_file);
      windows.push_back({start, col.ends[i] - start, col.skipped[i]});
    }
    const auto labels = eval::label_windows(truth, windows);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i]) {
        values.push_back(col.values[i]);
        flags.push_back(*labels[i]);
      }
  } else {
    const std::string labels_file = run.path("labels");
    std::vector<hids::ProcessTrace> procs;
    for (const auto& id : col.keys) procs.push_back({id, {}, 0.01, hids::Label::kUnknown});
    hids::apply_labels(procs, run.input(labels_file), labels_file);
    for (std::size_t i = 0; i < procs.size(); ++i) {
      if (procs[i].label == hids::Label::kUnknown) continue;
      values.push_back(col.values[i]);
      flags.push_back(procs[i].label == hids::Label::kAttack);
    }
  }
  std::unique_ptr<bool[]> plain(new bool[flags.size()]);
  for (std::size_t i = 0; i < flags.size(); ++i) plain[i] = flags[i];
  const eval::RocResult roc =
      eval::roc_auc(values, std::span<const bool>(plain.get(), flags.size()), col.polarity);
  run.output(run.path("out"), eval::roc_table(roc));
  if (auto p = run.optional_path("svg"))
    run.output(*p, eval::roc_svg(roc, fs::path(scores_file).filename().string()));
  std::printf("auc=%s\n", text::format_number(roc.auc).c_str());
}

void cmd_host_id(Run& run, const RunConfig& config) {
  HostIdExperiment result;
  std::string table;
  if (auto models_arg = run.optional_path("models")) {
    std::vector<nids::TrafficModel> models;
    std::vector<TrafficTrace> tests;
    for (const auto& f : split_list(*models_arg)) models.push_back(load_traffic_model(run, f));
    for (const auto& f : split_list(run.path("traces"))) tests.push_back(load_trace(run, f));
    result = host_identification(config, models, tests, &table);
  } else {
    result = run_host_id(config);
    table = result.segment_table;
  }
  run.output(run.path("out"), write_confusion(result.confusion));
  if (auto p = run.optional_path("segments")) run.output(*p, table);
}

void cmd_model_roundtrip(Run& run, const RunConfig& config) {
  (void)config;
  const std::string file = run.path("model");
  const ctbn::CtbnModel model = load_model(run, file);
  const std::string text = write_model(model);
  if (!(read_model(text, file) == model)) throw NumericalError("model changed on round trip");
  run.output(run.path("out"), text);
}

void cmd_experiment(Run& run, const RunConfig& config, bool network) {
  const fs::path dir = run.path("out-dir");
  std::string summary;
  if (network) {
    const NidsExperiment ex = run_nids_experiment(config, dir);
    summary = "nids_auc=" + text::format_number(ex.detection.roc.auc) +
              "\nbaseline_auc=" + text::format_number(ex.detection.baseline_roc.auc) + "\n";
  } else {
    const HidsExperiment ex = run_hids_experiment(config, dir);
    summary = "hids_auc=" + text::format_number(ex.roc.auc) +
              "\nstide_auc=" + text::format_number(ex.stide_roc.auc) + "\n";
  }
  std::fputs(summary.c_str(), stdout);
  run.output((dir / "summary.txt").string(), summary);
}

}  // namespace

void run_command(const Command& command) {
  const RunConfig& config = command.config;
  config.validate();
  Run run(command);
  const std::string& name = command.name;
  if (name == "gen-traffic") cmd_gen_traffic(run, config);
  else if (name == "gen-syscalls") cmd_gen_syscalls(run, config);
  else if (name == "inject") cmd_inject(run, config);
  else if (name == "train-nids") cmd_train_nids(run, config);
  else if (name == "score-nids") cmd_score_nids(run, config);
  else if (name == "train-hids") cmd_train_hids(run, config);
  else if (name == "score-hids") cmd_score_hids(run, config);
  else if (name == "baseline") cmd_baseline(run, config);
  else if (name == "eval-roc") cmd_eval_roc(run, config);
  else if (name == "host-id") cmd_host_id(run, config);
  else if (name == "model-roundtrip") cmd_model_roundtrip(run, config);
  else if (name == "nids-experiment") cmd_experiment(run, config, true);
  else if (name == "hids-experiment") cmd_experiment(run, config, false);
  else throw InputError("unknown command '" + name + "'");
  run.commit();
}

}  // namespace ctbnids::app
