#include <doctest.h>

#include <filesystem>
#include <string>

#include "ctbnids/app.hpp"
#include "ctbnids/errors.hpp"

using namespace ctbnids;
using namespace ctbnids::app;

namespace fs = std::filesystem;

TEST_CASE("config keys, sections and precedence") {
  RunConfig c;
  apply_config_text(c,
                    "# comment\n"
                    "seed = 9\n"
                    "[nids]\n"
                    "particles = 12\n"
                    "nids.window = 25\n"
                    "other_bucket = false\n"
                    "[traffic]\n"
                    "generator_ports = 22, 8080\n",
                    "c.ini");
  CHECK(c.seed == 9);
  CHECK(c.particles == 12);
  CHECK(c.window == 25.0);
  CHECK(!c.other_bucket);
  CHECK(c.generator_ports == std::vector<int>{22, 8080});
  CHECK_NOTHROW(c.validate());

  // A later source overrides an earlier one.
  set_config_value(c, "particles", "30");
  CHECK(get_config_value(c, "particles") == "30");
}

TEST_CASE("config errors name the location") {
  RunConfig c;
  auto message = [&](const std::string& text) {
    try {
      apply_config_text(c, text, "c.ini");
    } catch (const InputError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("bogus = 1\n").find("c.ini:1") != std::string::npos);
  CHECK(message("[nids]\nalpha = 0.1\n").find("c.ini:2") != std::string::npos);
  CHECK(message("[hids]\nnids.window = 3\n").find("outside its section") != std::string::npos);
  CHECK(message("traffic.window = 3\n").find("belongs to section [nids]") != std::string::npos);
  CHECK(message("particles\n").find("key = value") != std::string::npos);
  CHECK(message("[nids\n").find("section header") != std::string::npos);
  CHECK(message("anomaly = worm\n").find("flood") != std::string::npos);
  CHECK(message("particles = many\n").find("c.ini:1") != std::string::npos);
}

TEST_CASE("config validation") {
  auto invalid = [](auto change) {
    RunConfig c;
    change(c);
    CHECK_THROWS_AS(c.validate(), InputError);
  };
  CHECK_NOTHROW(RunConfig{}.validate());
  invalid([](RunConfig& c) { c.global_states = 1; });
  invalid([](RunConfig& c) { c.hidden_states = 7; });
  invalid([](RunConfig& c) { c.beta = 0.0; });
  invalid([](RunConfig& c) { c.alpha = 2.0; });
  invalid([](RunConfig& c) { c.particles = 0; });
  invalid([](RunConfig& c) { c.stide_h = 2; });
  invalid([](RunConfig& c) { c.generator_ports.clear(); });
}

TEST_CASE("config echo and hash") {
  RunConfig a;
  const std::string echo = config_echo(a);
  CHECK(echo.find("run.seed=1\n") != std::string::npos);
  CHECK(echo.find("traffic.generator_ports=22,25,80,443\n") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : echo) lines += ch == '\n';
  CHECK(lines == config_keys().size());

  // The echo parses back to the same configuration.
  RunConfig b;
  b.seed = 5;
  b.beta = 0.5;
  RunConfig c;
  apply_config_text(c, config_echo(b));
  CHECK(config_echo(c) == config_echo(b));
  CHECK(config_hash(c) == config_hash(b));
  CHECK(config_hash(a) != config_hash(b));
  CHECK(produced_by("gen-traffic", a) == "# produced-by: gen-traffic config-sha256: " + config_hash(a) + "\n");
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("atomic writes replace the file and leave no temporary") {
  const fs::path dir = fs::temp_directory_path() / "ctbnids_test_app";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path f = dir / "out.txt";
  write_file_atomic(f, "first\n");
  write_file_atomic(f, "second\n");
  CHECK(read_file(f) == "second\n");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
  CHECK_THROWS_AS(read_file(dir / "missing"), InputError);
  fs::remove_all(dir);
}

TEST_CASE("seed streams") {
  RunConfig c;
  CHECK(stream_seed(c, "a") == stream_seed(c, "a"));
  CHECK(stream_seed(c, "a") != stream_seed(c, "b"));
  CHECK(stream_seed(c, "a", 1) != stream_seed(c, "a", 2));
  RunConfig d;
  d.seed = 2;
  CHECK(stream_seed(c, "a") != stream_seed(d, "a"));
}

TEST_CASE("anomaly template selection") {
  RunConfig c;
  c.template_events = 4;
  c.anomaly = "scan";
  CHECK(anomaly_template(c, 100).events.back().port == 103);
  c.anomaly = "probe";
  CHECK(anomaly_template(c, 100).events.size() == 8);
  c.anomaly = "flood";
  CHECK(anomaly_template(c, 100).events.size() == 4);
}

TEST_CASE("truth file round trip") {
  synth::GroundTruth t;
  t.intervals.push_back({1.25, 3.5});
  t.intervals.push_back({10.0, 10.0 + 1.0 / 3.0});
  const synth::GroundTruth back = read_truth(write_truth(t));
  REQUIRE(back.intervals.size() == 2);
  CHECK(back.intervals[1].end == t.intervals[1].end);
  CHECK_THROWS_AS(read_truth("start,end\n1,2\n"), InputError);
  CHECK_THROWS_AS(read_truth("interval_start,interval_end\n3,2\n"), InputError);
  CHECK_THROWS_AS(read_truth(""), InputError);
}

TEST_CASE("score tables") {
  nids::WindowScore w;
  w.start = 0.0;
  w.length = 50.0;
  w.event_count = 3;
  w.log_likelihood = -1.5;
  nids::WindowScore empty = w;
  empty.start = 50.0;
  empty.event_count = 0;
  empty.skipped = true;
  CHECK(write_window_scores({w, empty}) ==
        "window_start,window_end,event_count,log_likelihood\n0,50,3,-1.5\n50,100,0,skipped\n");

  hids::SyscallModel m = synth::reference_syscall_model(2, 1);
  hids::ProcessTrace p;
  p.id = "p0";
  p.resolution = 0.01;
  p.ticks.push_back({0.0, {"open", "read"}});
  p.ticks.push_back({0.5, {"close"}});
  const auto scores = score_processes(m, {p});
  CHECK(scores[0].calls == 3);
  CHECK(scores[0].per_event == doctest::Approx(scores[0].log_likelihood / 3.0));
  CHECK(write_process_scores(scores).rfind("process_id,n_calls,log_likelihood,per_event_log_likelihood\np0,3,", 0) ==
        0);
}
