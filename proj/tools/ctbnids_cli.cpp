// Command line front end. Config values come from the defaults, then
// --config files, then per-key flags.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ctbnids/app.hpp"
#include "ctbnids/errors.hpp"

namespace {

using ctbnids::app::Command;

struct Spec {
  const char* name;
  const char* help;
  std::vector<const char*> paths;
  std::vector<const char*> options;
};

const std::vector<Spec>& specs() {
  static const std::vector<Spec> table{
      {"gen-traffic", "sample synthetic network traffic",
       {"out", "train-out", "test-out", "generator-out", "model"}, {}},
      {"gen-syscalls", "sample synthetic system call traces",
       {"out", "labels", "generator-out", "model"}, {"kind", "count", "batch", "prefix"}},
      {"inject", "inject an anomaly (or another host's traffic) into a trace",
       {"trace", "out", "truth", "source"}, {"port"}},
      {"train-nids", "fit a traffic model with particle-filter EM", {"trace", "model-out"}, {}},
      {"score-nids", "log-likelihood of each window of a trace", {"model", "trace", "out"}, {}},
      {"train-hids", "fit a system call model with exact EM", {"traces", "labels", "model-out"}, {}},
      {"score-hids", "log-likelihood of each process", {"model", "traces", "out"}, {}},
      {"baseline", "connection-count or stide scores",
       {"trace", "train", "labels", "traces", "out"}, {"kind"}},
      {"eval-roc", "ROC curve and AUC of a score file",
       {"scores", "truth", "labels", "out", "svg"}, {}},
      {"host-id", "host identification confusion matrix",
       {"models", "traces", "out", "segments"}, {}},
      {"model-roundtrip", "parse and rewrite a model file", {"model", "out"}, {}},
      {"nids-experiment", "generate, train, inject, score and evaluate traffic", {"out-dir"}, {}},
      {"hids-experiment", "generate, train, score and evaluate system calls", {"out-dir"}, {}},
  };
  return table;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Continuous-time Bayesian network intrusion detection"};
  cli.require_subcommand(1);
  cli.fallthrough();

  std::vector<std::string> config_files;
  bool print_config = false;
  cli.add_option("--config", config_files, "config file(s), applied in order");
  cli.add_flag("--print-config", print_config, "print the effective config and exit");

  const auto keys = ctbnids::app::config_keys();
  std::map<std::string, std::string> key_values;
  std::map<std::string, std::string> path_values;
  std::map<std::string, std::string> option_values;
  std::map<std::string, CLI::App*> subs;

  for (const Spec& spec : specs()) {
    CLI::App* sub = cli.add_subcommand(spec.name, spec.help);
    subs[spec.name] = sub;
    for (const auto& [section, key] : keys)
      sub->add_option("--" + flag_name(key), key_values[key], "[" + section + "] " + key);
    for (const char* p : spec.paths) sub->add_option(std::string("--") + p, path_values[p], "file");
    for (const char* o : spec.options) sub->add_option(std::string("--") + o, option_values[o]);
  }

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : ctbnids::app::kInputFailure;
  }

  Command command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command.name = name;
  try {
    for (const auto& file : config_files)
      ctbnids::app::apply_config_text(command.config, ctbnids::app::read_file(file), file);
    for (const auto& [section, key] : keys) {
      if (subs[command.name]->count("--" + flag_name(key)) > 0)
        ctbnids::app::set_config_value(command.config, key, key_values[key], "--" + flag_name(key));
    }
    if (print_config) {
      std::fputs(ctbnids::app::config_echo(command.config).c_str(), stdout);
      return ctbnids::app::kOk;
    }
    for (const auto& [name, value] : path_values)
      if (!value.empty()) command.paths[name] = value;
    for (const auto& [name, value] : option_values)
      if (!value.empty()) command.options[name] = value;
    ctbnids::app::run_command(command);
  } catch (const ctbnids::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ctbnids::app::kInputFailure;
  } catch (const ctbnids::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return ctbnids::app::kNumericalFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return ctbnids::app::kFailure;
  }
  return ctbnids::app::kOk;
}
