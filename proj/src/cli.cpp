#include "sigbandit/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "sigbandit/io_util.hpp"
#include "sigbandit/plot.hpp"

namespace sigbandit::cli {

namespace fs = std::filesystem;

// --- config files -----------------------------------------------------------------

const std::string* ConfigMap::get(const std::string& key) const {
  const std::string* found = nullptr;
  for (const auto& [k, v] : entries) {
    if (k == key) found = &v;  // last one wins
  }
  return found;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  entries.emplace_back(key, value);
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap cfg;
  cfg.raw_text = text;
  size_t line_no = 0;
  for (const std::string& raw_line : split_string(text, '\n')) {
    ++line_no;
    std::string line = raw_line;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected 'key = value', got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    }
    cfg.entries.emplace_back(key, value);
  }
  return cfg;
}

ConfigMap load_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::runtime_error("--set expects key=value, got '" + s + "'");
    }
    cfg.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

namespace {

const std::set<std::string> kTrainKeys = {
    "n",          "channel",       "capacity",      "vocab",
    "tau",        "batch_size",    "updates",       "learning_rate",
    "train_fraction", "seed",      "eval_every",    "eval_contexts",
    "eval_max_states"};

const std::set<std::string> kSweepKeys = {
    "experiment",        "seeds",         "language_capacities", "demo_capacities",
    "language_capacity", "demo_capacity", "n_values",            "fractions"};

std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> out;
  for (const std::string& part : split_string(value, ',')) {
    std::string p = trim(part);
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

void assign_train_field(train::TrainConfig& cfg, const std::string& key, const std::string& value) {
  try {
    if (key == "n") cfg.n = static_cast<int>(parse_int(value));
    else if (key == "channel") cfg.channel = agents::parse_channel(value);
    else if (key == "capacity") cfg.capacity = static_cast<int>(parse_int(value));
    else if (key == "vocab") cfg.vocab = static_cast<int>(parse_int(value));
    else if (key == "tau") cfg.tau = parse_double(value);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(value));
    else if (key == "updates") cfg.updates = static_cast<int>(parse_int(value));
    else if (key == "learning_rate") cfg.learning_rate = parse_double(value);
    else if (key == "train_fraction") cfg.train_fraction = parse_double(value);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(value));
    else if (key == "eval_every") cfg.eval_every = static_cast<int>(parse_int(value));
    else if (key == "eval_contexts") cfg.eval_contexts = static_cast<int>(parse_int(value));
    else if (key == "eval_max_states") cfg.eval_max_states = static_cast<int>(parse_int(value));
  } catch (const std::exception& e) {
    throw std::runtime_error("config field '" + key + "': " + e.what());
  }
}

}  // namespace

train::TrainConfig train_config_from(const ConfigMap& cfg) {
  train::TrainConfig out;
  for (const auto& [key, value] : cfg.entries) {
    if (!kTrainKeys.count(key)) {
      throw std::runtime_error("unknown config key '" + key + "'");
    }
    assign_train_field(out, key, value);
  }
  out.validate();
  return out;
}

exp::SweepSpec sweep_spec_from(const ConfigMap& cfg, int experiment) {
  exp::SweepSpec spec;
  spec.experiment = experiment;
  for (const auto& [key, value] : cfg.entries) {
    if (kTrainKeys.count(key)) {
      assign_train_field(spec.base, key, value);
      continue;
    }
    if (!kSweepKeys.count(key)) {
      throw std::runtime_error("unknown config key '" + key + "'");
    }
    try {
      if (key == "experiment") {
        if (experiment == 0) spec.experiment = static_cast<int>(parse_int(value));
      } else if (key == "seeds") {
        spec.seeds.clear();
        for (const auto& s : parse_list(value)) spec.seeds.push_back(static_cast<uint64_t>(parse_int(s)));
      } else if (key == "language_capacities") {
        spec.language_capacities.clear();
        for (const auto& s : parse_list(value)) spec.language_capacities.push_back(static_cast<int>(parse_int(s)));
      } else if (key == "demo_capacities") {
        spec.demo_capacities.clear();
        for (const auto& s : parse_list(value)) spec.demo_capacities.push_back(static_cast<int>(parse_int(s)));
      } else if (key == "language_capacity") {
        spec.language_capacity = static_cast<int>(parse_int(value));
      } else if (key == "demo_capacity") {
        spec.demo_capacity = static_cast<int>(parse_int(value));
      } else if (key == "n_values") {
        spec.n_values.clear();
        for (const auto& s : parse_list(value)) spec.n_values.push_back(static_cast<int>(parse_int(s)));
      } else if (key == "fractions") {
        spec.fractions.clear();
        for (const auto& s : parse_list(value)) spec.fractions.push_back(parse_double(s));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("config field '" + key + "': " + e.what());
    }
  }
  if (spec.experiment == 0) {
    throw std::runtime_error("sweep: no experiment id (use --experiment or the 'experiment' key)");
  }
  spec.validate();
  return spec;
}

std::string default_out_root() {
  const char* env = std::getenv("SIGBANDIT_OUT");
  if (env != nullptr && *env != '\0') return env;
  return "runs";
}

// --- commands ------------------------------------------------------------------------

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_root;
};

ConfigMap resolve_config(const CommonArgs& args) {
  ConfigMap cfg;
  if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
  apply_overrides(cfg, args.sets);
  return cfg;
}

int cmd_train(const CommonArgs& common, bool force, std::int64_t seed_flag, bool seed_given) {
  ConfigMap cfg_map = resolve_config(common);
  if (seed_given) cfg_map.set("seed", std::to_string(seed_flag));
  train::TrainConfig cfg = train_config_from(cfg_map);

  std::string root = common.out_root.empty() ? default_out_root() : common.out_root;
  std::string dir = root + "/" + cfg.hash() + "_s" + std::to_string(cfg.seed);
  if (fs::exists(dir)) {
    if (!force) {
      std::cerr << "error: output directory already exists: " << dir
                << " (pass --force to overwrite)\n";
      return 1;
    }
    fs::remove_all(dir);
  }

  train::Run run(cfg);
  std::cerr << "[train] " << agents::channel_name(cfg.channel) << " n=" << cfg.n
            << " capacity=" << cfg.capacity << " seed=" << cfg.seed << " -> " << dir << std::endl;
  int last_tick = 0;
  train::RunMetrics metrics = train::train_run(run, [&](int update, double loss) {
    if (update - last_tick >= 200 || update == cfg.updates) {
      std::cerr << "[train] update " << update << "/" << cfg.updates << " loss=" << format_fixed(loss, 4)
                << std::endl;
      last_tick = update;
    }
  });
  exp::persist_run(exp::run_artifacts(dir), cfg, run.store, metrics, cfg_map.raw_text);
  std::cout << "final_train_normalized_reward=" << format_double(metrics.final_train_mean) << "\n";
  std::cout << "final_val_normalized_reward=" << format_double(metrics.final_val_mean) << "\n";
  std::cout << "run_dir=" << dir << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& common, int experiment, int parallel, bool force) {
  ConfigMap cfg_map = resolve_config(common);
  exp::SweepSpec spec = sweep_spec_from(cfg_map, experiment);
  exp::SweepOptions opt;
  opt.out_root = common.out_root.empty() ? default_out_root() : common.out_root;
  opt.parallel = parallel;
  opt.force = force;
  opt.log = &std::cerr;
  exp::SweepResult result = exp::run_sweep(spec, opt);
  std::cout << "cells_total=" << result.cells_total << "\n";
  std::cout << "cells_failed=" << result.cells_failed << "\n";
  std::cout << "cells_reused=" << result.cells_skipped << "\n";
  std::cout << "aggregate_csv=" << result.table_path << "\n";
  std::cout << "manifest=" << result.manifest_path << "\n";
  return result.cells_failed == 0 ? 0 : 1;
}

int cmd_analyze(const std::string& run_dir, const std::string& kind) {
  std::string log_path = run_dir + "/utterances.jsonl";
  if (!file_exists(log_path)) {
    std::cerr << "error: no utterance log at " << log_path << "\n";
    return 1;
  }
  std::string manifest_path = run_dir + "/manifest.json";
  if (!file_exists(manifest_path)) {
    std::cerr << "error: no manifest at " << manifest_path << "\n";
    return 1;
  }
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));
  auto log = agents::read_utterances_jsonl(log_path);

  if (kind == "unique") {
    exp::UtteranceCounts counts = exp::analyze_unique_utterances(log);
    std::string out_path = run_dir + "/analysis_unique.csv";
    exp::write_unique_counts_csv(out_path, counts);
    std::cout << "train_unique=" << counts.train_unique << "\n";
    std::cout << "val_unique=" << counts.val_unique << "\n";
    std::cout << "val_novel=" << counts.val_novel << "\n";
    std::cout << "analysis_csv=" << out_path << "\n";
    return 0;
  }
  if (kind == "semantics") {
    std::string channel = manifest.at("channel").get<std::string>();
    if (channel != "language") {
      std::cerr << "error: semantics analysis needs a language-condition run, this run used channel '"
                << channel << "'\n";
      return 1;
    }
    env::GameSpace space = env::build_game_space(manifest.at("n").get<int>());
    auto rows = exp::analyze_message_semantics(log, space);
    std::string out_path = run_dir + "/analysis_semantics.csv";
    exp::write_semantics_csv(out_path, rows);
    std::cout << "messages=" << (rows.size() / static_cast<size_t>(2 * space.space.n) - 1) << "\n";
    std::cout << "analysis_csv=" << out_path << "\n";
    return 0;
  }
  std::cerr << "error: unknown analysis kind '" << kind << "' (expected unique or semantics)\n";
  return 1;
}

int cmd_plot(const std::string& input, std::string out_path) {
  exp::AggregateTable table = exp::read_aggregate_csv(input);
  if (table.rows.empty()) {
    std::cerr << "error: aggregate table " << input << " has no rows\n";
    return 1;
  }
  plot::ChartSpec spec = plot::chart_from_table(table);
  std::string svg = plot::render_chart(spec);
  if (out_path.empty()) {
    out_path = input;
    size_t dot = out_path.rfind('.');
    if (dot != std::string::npos) out_path.resize(dot);
    out_path += ".svg";
  }
  write_text_file(out_path, svg);
  std::cout << "plot=" << out_path << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"signaling-bandits teaching game: training, sweeps, analysis and plots"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args;
  bool train_force = false, sweep_force = false;
  std::int64_t train_seed = 0;
  int sweep_experiment = 0, sweep_parallel = 1;

  CLI::App* train_cmd = app.add_subcommand("train", "run one training configuration");
  train_cmd->add_option("--config", train_args.config_path, "config file (key = value lines)");
  train_cmd->add_option("--set", train_args.sets, "override, key=value (repeatable)");
  train_cmd->add_option("--out", train_args.out_root, "output root (default $SIGBANDIT_OUT or ./runs)");
  CLI::Option* seed_opt = train_cmd->add_option("--seed", train_seed, "run seed (same as --set seed=...)");
  train_cmd->add_flag("--force", train_force, "overwrite an existing run directory");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run an experiment grid over seeds");
  sweep_cmd->add_option("--experiment", sweep_experiment, "experiment id: 1, 2 or 3");
  sweep_cmd->add_option("--config", sweep_args.config_path, "config file");
  sweep_cmd->add_option("--set", sweep_args.sets, "override, key=value (repeatable)");
  sweep_cmd->add_option("--out", sweep_args.out_root, "output root");
  sweep_cmd->add_option("--parallel", sweep_parallel, "concurrent cells")->check(CLI::PositiveNumber);
  sweep_cmd->add_flag("--force", sweep_force, "rerun cells that already completed");

  std::string analyze_dir, analyze_kind;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "analyze a run's utterance log");
  analyze_cmd->add_option("--run", analyze_dir, "run directory")->required();
  analyze_cmd->add_option("--kind", analyze_kind, "unique | semantics")->required();

  std::string plot_input, plot_out;
  CLI::App* plot_cmd = app.add_subcommand("plot", "render an aggregate table as an SVG chart");
  plot_cmd->add_option("--input", plot_input, "aggregate CSV from a sweep")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG path (default: next to the CSV)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return cmd_train(train_args, train_force, train_seed, seed_opt->count() > 0);
    if (*sweep_cmd) return cmd_sweep(sweep_args, sweep_experiment, sweep_parallel, sweep_force);
    if (*analyze_cmd) return cmd_analyze(analyze_dir, analyze_kind);
    if (*plot_cmd) return cmd_plot(plot_input, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace sigbandit::cli
