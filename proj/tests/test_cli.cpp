#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "sigbandit/cli.hpp"
#include "sigbandit/io_util.hpp"

using namespace sigbandit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

const char* kTinyConfig =
    "# tiny smoke configuration\n"
    "n = 3\n"
    "channel = language\n"
    "capacity = 2\n"
    "vocab = 8\n"
    "batch_size = 2\n"
    "updates = 4\n"
    "eval_every = 2\n"
    "eval_contexts = 6\n"
    "eval_max_states = 4\n";

std::string write_tiny_config(const TempDir& dir) {
  std::string path = (dir.path / "tiny.cfg").string();
  write_text_file(path, kTinyConfig);
  return path;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("comments, blanks and whitespace") {
    auto cfg = cli::parse_config_text("# header\n\n n = 4 \nchannel= language # eol comment\n");
    REQUIRE(cfg.entries.size() == 2);
    CHECK(*cfg.get("n") == "4");
    CHECK(*cfg.get("channel") == "language");
  }
  SUBCASE("later entries and overrides win") {
    auto cfg = cli::parse_config_text("n = 4\nn = 5\n");
    CHECK(*cfg.get("n") == "5");
    cli::apply_overrides(cfg, {"n=6"});
    CHECK(*cfg.get("n") == "6");
  }
  SUBCASE("malformed lines are rejected") {
    CHECK_THROWS_AS(cli::parse_config_text("this is not a key value line\n"), std::runtime_error);
    CHECK_THROWS_AS(cli::parse_config_text("= 3\n"), std::runtime_error);
  }
  SUBCASE("bad overrides are rejected") {
    cli::ConfigMap cfg;
    CHECK_THROWS_AS(cli::apply_overrides(cfg, {"no_equals"}), std::runtime_error);
  }
}

TEST_CASE("train config view") {
  SUBCASE("full mapping") {
    auto cfg = cli::parse_config_text(
        "n = 5\nchannel = demo_pedagogical\ncapacity = 3\nvocab = 40\ntau = 0.5\n"
        "batch_size = 16\nupdates = 100\nlearning_rate = 0.002\ntrain_fraction = 0.4\n"
        "seed = 9\neval_every = 10\neval_contexts = 50\neval_max_states = 32\n");
    train::TrainConfig t = cli::train_config_from(cfg);
    CHECK(t.n == 5);
    CHECK(t.channel == agents::Channel::demo_pedagogical);
    CHECK(t.capacity == 3);
    CHECK(t.vocab == 40);
    CHECK(t.tau == 0.5);
    CHECK(t.batch_size == 16);
    CHECK(t.updates == 100);
    CHECK(t.learning_rate == 0.002);
    CHECK(t.train_fraction == 0.4);
    CHECK(t.seed == 9);
    CHECK(t.eval_every == 10);
    CHECK(t.eval_contexts == 50);
    CHECK(t.eval_max_states == 32);
  }
  SUBCASE("unknown keys are rejected by name") {
    auto cfg = cli::parse_config_text("n = 4\nmystery_knob = 7\n");
    CHECK_THROWS_WITH_AS(cli::train_config_from(cfg), doctest::Contains("mystery_knob"),
                         std::runtime_error);
  }
  SUBCASE("bad values name the field") {
    auto cfg = cli::parse_config_text("learning_rate = fast\n");
    CHECK_THROWS_WITH_AS(cli::train_config_from(cfg), doctest::Contains("learning_rate"),
                         std::runtime_error);
  }
}

TEST_CASE("sweep spec view") {
  auto cfg = cli::parse_config_text(
      "updates = 10\nseeds = 3, 4\nn_values = 2,3\nlanguage_capacity = 4\ndemo_capacity = 2\n");
  exp::SweepSpec spec = cli::sweep_spec_from(cfg, 2);
  CHECK(spec.experiment == 2);
  CHECK(spec.base.updates == 10);
  CHECK(spec.seeds == std::vector<uint64_t>{3, 4});
  CHECK(spec.n_values == std::vector<int>{2, 3});
  CHECK(spec.language_capacity == 4);
  CHECK(spec.demo_capacity == 2);
}

TEST_CASE("cmd train writes the full run layout and respects --force") {
  TempDir dir("sigbandit_cli_train");
  std::string cfg_path = write_tiny_config(dir);
  std::string out = (dir.path / "runs").string();

  int rc = cli::dispatch({"train", "--config", cfg_path, "--out", out, "--seed", "7"});
  CHECK(rc == 0);
  // exactly one run directory with the full artifact set
  fs::path run_dir;
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory()) {
      run_dir = e.path();
      ++dirs;
    }
  }
  REQUIRE(dirs == 1);
  CHECK(run_dir.filename().string().ends_with("_s7"));
  for (const char* f : {"metrics.csv", "utterances.jsonl", "checkpoint.json", "manifest.json"}) {
    CHECK(file_exists((run_dir / f).string()));
  }

  SUBCASE("a rerun without --force fails, with --force succeeds") {
    CHECK(cli::dispatch({"train", "--config", cfg_path, "--out", out, "--seed", "7"}) != 0);
    CHECK(cli::dispatch({"train", "--config", cfg_path, "--out", out, "--seed", "7", "--force"}) == 0);
  }
  SUBCASE("identical seeds give byte-identical metrics") {
    std::string first = read_text_file((run_dir / "metrics.csv").string());
    REQUIRE(cli::dispatch({"train", "--config", cfg_path, "--out", out, "--seed", "7", "--force"}) == 0);
    CHECK(read_text_file((run_dir / "metrics.csv").string()) == first);
  }
  SUBCASE("a different seed lands in a sibling directory") {
    CHECK(cli::dispatch({"train", "--config", cfg_path, "--out", out, "--seed", "8"}) == 0);
    int count = 0;
    for (const auto& e : fs::directory_iterator(out)) {
      (void)e;
      ++count;
    }
    CHECK(count == 2);
  }
}

TEST_CASE("cmd train with a missing config file fails without side effects") {
  TempDir dir("sigbandit_cli_noconfig");
  std::string out = (dir.path / "runs").string();
  int rc = cli::dispatch({"train", "--config", (dir.path / "absent.cfg").string(), "--out", out});
  CHECK(rc != 0);
  CHECK(!fs::exists(out));
}

TEST_CASE("cmd train rejects configs with unknown keys") {
  TempDir dir("sigbandit_cli_badkey");
  std::string path = (dir.path / "bad.cfg").string();
  write_text_file(path, "n = 3\nturbo = yes\n");
  CHECK(cli::dispatch({"train", "--config", path, "--out", (dir.path / "runs").string()}) != 0);
}

TEST_CASE("cmd analyze") {
  TempDir dir("sigbandit_cli_analyze");
  std::string cfg_path = write_tiny_config(dir);
  std::string out = (dir.path / "runs").string();
  REQUIRE(cli::dispatch({"train", "--config", cfg_path, "--out", out, "--seed", "3"}) == 0);
  fs::path run_dir;
  for (const auto& e : fs::directory_iterator(out)) run_dir = e.path();

  SUBCASE("unique counts write a csv that recounts to the same values") {
    REQUIRE(cli::dispatch({"analyze", "--run", run_dir.string(), "--kind", "unique"}) == 0);
    std::string csv = read_text_file((run_dir / "analysis_unique.csv").string());
    auto lines = split_string(csv, '\n');
    REQUIRE(lines.size() >= 2);
    auto vals = split_csv_line(lines[1]);
    auto log = agents::read_utterances_jsonl((run_dir / "utterances.jsonl").string());
    auto counts = exp::analyze_unique_utterances(log);
    CHECK(parse_int(vals[0]) == counts.train_unique);
    CHECK(parse_int(vals[1]) == counts.val_unique);
    CHECK(parse_int(vals[2]) == counts.val_novel);
  }
  SUBCASE("semantics analysis works on language runs") {
    REQUIRE(cli::dispatch({"analyze", "--run", run_dir.string(), "--kind", "semantics"}) == 0);
    CHECK(file_exists((run_dir / "analysis_semantics.csv").string()));
  }
  SUBCASE("semantics analysis rejects demo runs") {
    std::string demo_out = (dir.path / "demo_runs").string();
    REQUIRE(cli::dispatch({"train", "--config", cfg_path, "--set", "channel=demo_random",
                           "--set", "capacity=2", "--out", demo_out, "--seed", "3"}) == 0);
    fs::path demo_dir;
    for (const auto& e : fs::directory_iterator(demo_out)) demo_dir = e.path();
    CHECK(cli::dispatch({"analyze", "--run", demo_dir.string(), "--kind", "semantics"}) != 0);
    CHECK(!file_exists((demo_dir / "analysis_semantics.csv").string()));
  }
  SUBCASE("a missing log fails") {
    CHECK(cli::dispatch({"analyze", "--run", (dir.path / "nowhere").string(), "--kind", "unique"}) != 0);
  }
}

TEST_CASE("cmd sweep and cmd plot") {
  TempDir dir("sigbandit_cli_sweep");
  std::string cfg_path = (dir.path / "sweep.cfg").string();
  write_text_file(cfg_path,
                  "vocab = 8\nbatch_size = 2\nupdates = 4\neval_every = 2\n"
                  "eval_contexts = 4\neval_max_states = 3\n"
                  "seeds = 0,1\nn_values = 2\nlanguage_capacity = 2\ndemo_capacity = 1\n");
  std::string out = (dir.path / "sweep_out").string();
  REQUIRE(cli::dispatch({"sweep", "--experiment", "2", "--config", cfg_path, "--out", out}) == 0);
  std::string agg = out + "/sweep_exp2_aggregate.csv";
  REQUIRE(file_exists(agg));

  SUBCASE("parallel rerun is byte-identical") {
    std::string before = read_text_file(agg);
    std::string out2 = (dir.path / "sweep_out2").string();
    REQUIRE(cli::dispatch({"sweep", "--experiment", "2", "--config", cfg_path, "--out", out2,
                           "--parallel", "2"}) == 0);
    CHECK(read_text_file(out2 + "/sweep_exp2_aggregate.csv") == before);
  }
  SUBCASE("plot renders deterministic svg") {
    std::string svg_path = (dir.path / "fig.svg").string();
    REQUIRE(cli::dispatch({"plot", "--input", agg, "--out", svg_path}) == 0);
    std::string first = read_text_file(svg_path);
    CHECK(first.find("<svg") == 0);
    CHECK(first.find("language (val)") != std::string::npos);
    REQUIRE(cli::dispatch({"plot", "--input", agg, "--out", svg_path}) == 0);
    CHECK(read_text_file(svg_path) == first);
  }
  SUBCASE("plot refuses empty tables and writes nothing") {
    std::string empty_csv = (dir.path / "empty.csv").string();
    write_text_file(empty_csv, "experiment,condition,axis,split,mean,sem,n_seeds,n_missing,seed_0\n");
    std::string svg_path = (dir.path / "empty.svg").string();
    CHECK(cli::dispatch({"plot", "--input", empty_csv, "--out", svg_path}) != 0);
    CHECK(!file_exists(svg_path));
  }
  SUBCASE("plot rejects schema mismatches") {
    std::string bad_csv = (dir.path / "bad.csv").string();
    write_text_file(bad_csv, "foo,bar\n1,2\n");
    CHECK(cli::dispatch({"plot", "--input", bad_csv}) != 0);
  }
}

TEST_CASE("unknown subcommands fail") {
  CHECK(cli::dispatch({"frobnicate"}) != 0);
  CHECK(cli::dispatch({}) != 0);
}
