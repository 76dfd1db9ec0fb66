#include "sigbandit/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "sigbandit/io_util.hpp"

namespace sigbandit::exp {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int condition_rank(const std::string& c) {
  if (c == "language") return 0;
  if (c == "demo_pedagogical") return 1;
  if (c == "demo_random") return 2;
  return 3;
}

std::string axis_label(int experiment) {
  switch (experiment) {
    case 1: return "capacity";
    case 2: return "n";
    case 3: return "train_fraction";
  }
  return "axis";
}

}  // namespace

std::string SweepCell::run_name() const {
  return config.hash() + "_s" + std::to_string(seed);
}

void SweepSpec::validate() const {
  if (experiment < 1 || experiment > 3) {
    throw std::invalid_argument("sweep: experiment must be 1, 2 or 3");
  }
  if (seeds.empty()) throw std::invalid_argument("sweep: seeds must be nonempty");
  std::set<uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw std::invalid_argument("sweep: seeds must be pairwise distinct");
  if (experiment == 1 && (language_capacities.empty() || demo_capacities.empty())) {
    throw std::invalid_argument("sweep: capacity grids must be nonempty");
  }
  if (experiment == 2 && n_values.empty()) throw std::invalid_argument("sweep: n_values must be nonempty");
  if (experiment == 3 && fractions.empty()) throw std::invalid_argument("sweep: fractions must be nonempty");
}

std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  spec.validate();
  std::vector<SweepCell> cells;
  auto push = [&](const std::string& condition, double axis, uint64_t seed,
                  const train::TrainConfig& cfg) {
    SweepCell c;
    c.condition = condition;
    c.axis = axis;
    c.seed = seed;
    c.config = cfg;
    c.config.seed = seed;
    cells.push_back(std::move(c));
  };

  if (spec.experiment == 1) {
    train::TrainConfig cfg = spec.base;
    cfg.n = 4;
    cfg.train_fraction = 0.8;
    for (uint64_t seed : spec.seeds) {
      for (int k : spec.language_capacities) {
        cfg.channel = agents::Channel::language;
        cfg.capacity = k;
        push("language", k, seed, cfg);
      }
      for (int k : spec.demo_capacities) {
        cfg.channel = agents::Channel::demo_pedagogical;
        cfg.capacity = k;
        push("demo_pedagogical", k, seed, cfg);
        cfg.channel = agents::Channel::demo_random;
        push("demo_random", k, seed, cfg);
      }
    }
  } else if (spec.experiment == 2) {
    train::TrainConfig cfg = spec.base;
    cfg.train_fraction = 0.8;
    for (uint64_t seed : spec.seeds) {
      for (int n : spec.n_values) {
        cfg.n = n;
        cfg.channel = agents::Channel::language;
        cfg.capacity = spec.language_capacity;
        push("language", n, seed, cfg);
        cfg.channel = agents::Channel::demo_pedagogical;
        cfg.capacity = spec.demo_capacity;
        push("demo_pedagogical", n, seed, cfg);
      }
    }
  } else {
    train::TrainConfig cfg = spec.base;
    cfg.n = 4;
    for (uint64_t seed : spec.seeds) {
      for (double f : spec.fractions) {
        cfg.train_fraction = f;
        cfg.channel = agents::Channel::language;
        cfg.capacity = spec.language_capacity;
        push("language", f, seed, cfg);
        cfg.channel = agents::Channel::demo_pedagogical;
        cfg.capacity = spec.demo_capacity;
        push("demo_pedagogical", f, seed, cfg);
      }
    }
  }
  return cells;
}

// --- aggregate table -------------------------------------------------------------

const AggregateRow* AggregateTable::find(const std::string& condition, double axis,
                                         const std::string& split) const {
  for (const auto& r : rows) {
    if (r.condition == condition && r.axis == axis && r.split == split) return &r;
  }
  return nullptr;
}

void write_aggregate_csv(const std::string& path, const AggregateTable& table) {
  std::ostringstream os;
  os << "experiment,condition,axis,split,mean,sem,n_seeds,n_missing";
  for (uint64_t s : table.seeds) os << ",seed_" << s;
  os << "\n";
  for (const auto& r : table.rows) {
    os << table.experiment << ',' << r.condition << ',' << format_double(r.axis) << ',' << r.split
       << ',' << format_double(r.mean) << ',' << format_double(r.sem) << ',' << table.seeds.size()
       << ',' << r.n_missing;
    for (double v : r.per_seed) {
      os << ',';
      if (std::isnan(v)) {
        os << "NA";
      } else {
        os << format_double(v);
      }
    }
    os << "\n";
  }
  write_text_file(path, os.str());
}

AggregateTable read_aggregate_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty aggregate file: " + path);
  auto header = split_csv_line(trim(line));
  const std::vector<std::string> fixed = {"experiment", "condition", "axis",    "split",
                                          "mean",       "sem",       "n_seeds", "n_missing"};
  if (header.size() < fixed.size()) throw std::runtime_error("aggregate header too short: " + line);
  for (size_t i = 0; i < fixed.size(); ++i) {
    if (header[i] != fixed[i]) {
      throw std::runtime_error("aggregate header mismatch at column " + std::to_string(i) +
                               ": expected '" + fixed[i] + "', got '" + header[i] + "'");
    }
  }
  AggregateTable table;
  for (size_t i = fixed.size(); i < header.size(); ++i) {
    const std::string& h = header[i];
    if (h.rfind("seed_", 0) != 0) throw std::runtime_error("aggregate header: bad seed column " + h);
    table.seeds.push_back(static_cast<uint64_t>(parse_int(h.substr(5))));
  }
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    auto parts = split_csv_line(line);
    if (parts.size() != header.size()) throw std::runtime_error("aggregate row width mismatch: " + line);
    AggregateRow r;
    table.experiment = static_cast<int>(parse_int(parts[0]));
    r.condition = parts[1];
    r.axis = parse_double(parts[2]);
    r.split = parts[3];
    r.mean = parse_double(parts[4]);
    r.sem = parse_double(parts[5]);
    r.n_missing = static_cast<int>(parse_int(parts[7]));
    for (size_t i = fixed.size(); i < parts.size(); ++i) {
      r.per_seed.push_back(parts[i] == "NA" ? kNaN : parse_double(parts[i]));
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

// --- per-run persistence ------------------------------------------------------------

RunArtifacts run_artifacts(const std::string& dir) {
  RunArtifacts p;
  p.dir = dir;
  p.metrics = dir + "/metrics.csv";
  p.utterances = dir + "/utterances.jsonl";
  p.checkpoint = dir + "/checkpoint.json";
  p.manifest = dir + "/manifest.json";
  return p;
}

bool run_complete(const std::string& dir) {
  return file_exists(dir + "/manifest.json") && file_exists(dir + "/metrics.csv");
}

void persist_run(const RunArtifacts& paths, const train::TrainConfig& cfg,
                 const ad::ParamStore& store, const train::RunMetrics& metrics,
                 const std::string& config_text) {
  fs::create_directories(paths.dir);
  train::write_metrics_csv(paths.metrics, metrics);
  agents::write_utterances_jsonl(paths.utterances,
                                 std::span<const agents::UtteranceLogEntry>(metrics.final_utterances));
  store.save_checkpoint(paths.checkpoint);
  nlohmann::json m;
  m["config_hash"] = cfg.hash();
  m["seed"] = cfg.seed;
  m["config"] = cfg.canonical_string();
  m["config_text"] = config_text;
  m["n"] = cfg.n;
  m["channel"] = agents::channel_name(cfg.channel);
  m["games_processed"] = metrics.games_processed;
  m["final_train_mean"] = metrics.final_train_mean;
  m["final_val_mean"] = metrics.final_val_mean;
  m["files"] = {{"metrics", "metrics.csv"},
                {"utterances", "utterances.jsonl"},
                {"checkpoint", "checkpoint.json"}};
  // the manifest is written last and marks the run complete
  write_text_file(paths.manifest, m.dump(2));
}

namespace {

struct CellOutcome {
  std::string status = "ok";  // ok | failed
  std::string error;
  bool reused = false;
};

CellOutcome execute_cell(const SweepCell& cell, const std::string& dir, bool force) {
  CellOutcome out;
  if (!force && run_complete(dir)) {
    out.reused = true;
    return out;
  }
  try {
    std::error_code ec;
    fs::remove_all(dir, ec);  // clear partial leftovers
    train::Run run(cell.config);
    train::RunMetrics metrics = train::train_run(run);
    persist_run(run_artifacts(dir), cell.config, run.store, metrics,
                cell.config.canonical_string());
  } catch (const std::exception& e) {
    out.status = "failed";
    out.error = e.what();
  }
  return out;
}

double final_split_value(const std::string& metrics_path, const std::string& split) {
  auto records = train::read_metrics_csv(metrics_path);
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (it->split == split) return it->mean;
  }
  throw std::runtime_error("no '" + split + "' record in " + metrics_path);
}

}  // namespace

// --- sweep orchestration ---------------------------------------------------------------

SweepResult run_sweep(const SweepSpec& spec, const SweepOptions& options) {
  spec.validate();
  std::vector<SweepCell> cells = sweep_cells(spec);
  fs::create_directories(options.out_root);

  std::vector<CellOutcome> outcomes(cells.size());
  std::atomic<size_t> next{0};
  std::mutex log_mutex;
  int workers = std::max(1, options.parallel);
  auto work = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const SweepCell& cell = cells[i];
      std::string dir = options.out_root + "/" + cell.run_name();
      if (options.log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *options.log << "[sweep] cell " << (i + 1) << "/" << cells.size() << " "
                     << cell.condition << " axis=" << format_double(cell.axis)
                     << " seed=" << cell.seed << std::endl;
      }
      outcomes[i] = execute_cell(cell, dir, options.force);
      if (options.log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *options.log << "[sweep]   -> " << (outcomes[i].reused ? "reused" : outcomes[i].status)
                     << (outcomes[i].error.empty() ? "" : (": " + outcomes[i].error)) << std::endl;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  // manifest, then aggregate strictly from the persisted files
  nlohmann::json manifest;
  manifest["experiment"] = spec.experiment;
  manifest["axis"] = axis_label(spec.experiment);
  manifest["seeds"] = spec.seeds;
  manifest["base_config"] = spec.base.canonical_string(false);
  nlohmann::json jcells = nlohmann::json::array();
  SweepResult result;
  result.cells_total = static_cast<int>(cells.size());
  for (size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& cell = cells[i];
    nlohmann::json c;
    c["condition"] = cell.condition;
    c["axis"] = cell.axis;
    c["seed"] = cell.seed;
    c["config_hash"] = cell.config.hash();
    c["dir"] = cell.run_name();
    c["status"] = outcomes[i].status;
    if (!outcomes[i].error.empty()) c["error"] = outcomes[i].error;
    jcells.push_back(std::move(c));
    if (outcomes[i].status != "ok") ++result.cells_failed;
    if (outcomes[i].reused) ++result.cells_skipped;
  }
  manifest["cells"] = std::move(jcells);
  result.manifest_path = options.out_root + "/sweep_exp" + std::to_string(spec.experiment) +
                         "_manifest.json";
  write_text_file(result.manifest_path, manifest.dump(2));

  result.table = aggregate_sweep(result.manifest_path);
  result.table_path = options.out_root + "/sweep_exp" + std::to_string(spec.experiment) +
                      "_aggregate.csv";
  write_aggregate_csv(result.table_path, result.table);
  return result;
}

AggregateTable aggregate_sweep(const std::string& manifest_path) {
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(manifest_path));
  std::string root = fs::path(manifest_path).parent_path().string();
  if (root.empty()) root = ".";

  AggregateTable table;
  table.experiment = manifest.at("experiment").get<int>();
  table.seeds = manifest.at("seeds").get<std::vector<uint64_t>>();
  std::unordered_map<uint64_t, size_t> seed_slot;
  for (size_t i = 0; i < table.seeds.size(); ++i) seed_slot[table.seeds[i]] = i;

  std::vector<std::string> splits = {"val"};
  if (table.experiment == 2) splits = {"train", "val"};

  // (condition, axis) -> per-split per-seed values
  struct Key {
    std::string condition;
    double axis;
    bool operator<(const Key& o) const {
      int r = condition_rank(condition), ro = condition_rank(o.condition);
      if (r != ro) return r < ro;
      if (condition != o.condition) return condition < o.condition;
      return axis < o.axis;
    }
  };
  std::map<Key, std::map<std::string, std::vector<double>>> groups;

  for (const auto& c : manifest.at("cells")) {
    Key key{c.at("condition").get<std::string>(), c.at("axis").get<double>()};
    uint64_t seed = c.at("seed").get<uint64_t>();
    auto slot_it = seed_slot.find(seed);
    if (slot_it == seed_slot.end()) {
      throw std::runtime_error("aggregate: cell seed " + std::to_string(seed) + " not in sweep seeds");
    }
    auto& by_split = groups[key];
    for (const std::string& split : splits) {
      auto& vals = by_split[split];
      if (vals.empty()) vals.assign(table.seeds.size(), kNaN);
      std::string dir = root + "/" + c.at("dir").get<std::string>();
      std::string status = c.at("status").get<std::string>();
      if (status == "ok" && file_exists(dir + "/metrics.csv")) {
        vals[slot_it->second] = final_split_value(dir + "/metrics.csv", split);
      }
    }
  }

  for (const auto& [key, by_split] : groups) {
    for (const std::string& split : splits) {
      auto it = by_split.find(split);
      if (it == by_split.end()) continue;
      AggregateRow row;
      row.condition = key.condition;
      row.axis = key.axis;
      row.split = split;
      row.per_seed = it->second;
      double sum = 0.0;
      int k = 0;
      for (double v : row.per_seed) {
        if (std::isnan(v)) {
          ++row.n_missing;
        } else {
          sum += v;
          ++k;
        }
      }
      if (k > 0) {
        row.mean = sum / k;
        if (k > 1) {
          double ss = 0.0;
          for (double v : row.per_seed) {
            if (!std::isnan(v)) ss += (v - row.mean) * (v - row.mean);
          }
          row.sem = std::sqrt(ss / (k - 1)) / std::sqrt(static_cast<double>(k));
        }
      } else {
        row.mean = kNaN;
        row.sem = kNaN;
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

// --- analyses -------------------------------------------------------------------------

UtteranceCounts analyze_unique_utterances(std::span<const agents::UtteranceLogEntry> log) {
  if (log.empty()) throw std::invalid_argument("analyze_unique_utterances: empty log");
  std::unordered_set<std::string> train_set, val_set;
  for (const auto& e : log) {
    std::string key = agents::utterance_key(e.utterance);
    if (e.split == "train") {
      train_set.insert(std::move(key));
    } else if (e.split == "val") {
      val_set.insert(std::move(key));
    } else {
      throw std::invalid_argument("analyze_unique_utterances: unknown split '" + e.split + "'");
    }
  }
  UtteranceCounts counts;
  counts.train_unique = static_cast<int64_t>(train_set.size());
  counts.val_unique = static_cast<int64_t>(val_set.size());
  for (const auto& key : val_set) {
    if (!train_set.count(key)) ++counts.val_novel;
  }
  return counts;
}

std::vector<SemanticsRow> analyze_message_semantics(std::span<const agents::UtteranceLogEntry> log,
                                                    const env::GameSpace& space) {
  int n = space.space.n;
  struct Acc {
    std::vector<double> sums;
    int count = 0;
  };
  std::map<std::string, Acc> by_message;
  Acc all;
  all.sums.assign(static_cast<size_t>(2 * n), 0.0);
  int n_val = 0;
  for (const auto& e : log) {
    if (e.split != "val") continue;
    if (e.utterance.kind != agents::Channel::language) {
      throw std::invalid_argument("analyze_message_semantics: log contains non-language utterances");
    }
    if (e.world_state_id < 0 || static_cast<size_t>(e.world_state_id) >= space.states.size()) {
      throw std::invalid_argument("analyze_message_semantics: world state id out of range");
    }
    const env::WorldState& w = space.states[static_cast<size_t>(e.world_state_id)];
    std::string key = agents::utterance_key(e.utterance);
    Acc& acc = by_message[key];
    if (acc.sums.empty()) acc.sums.assign(static_cast<size_t>(2 * n), 0.0);
    for (int i = 0; i < 2 * n; ++i) {
      acc.sums[static_cast<size_t>(i)] += w.reward[static_cast<size_t>(i)];
      all.sums[static_cast<size_t>(i)] += w.reward[static_cast<size_t>(i)];
    }
    ++acc.count;
    ++n_val;
  }
  if (n_val == 0) {
    throw std::invalid_argument("analyze_message_semantics: no validation entries in log");
  }
  all.count = n_val;

  std::vector<SemanticsRow> rows;
  auto emit = [&](const std::string& message, const Acc& acc) {
    std::vector<double> means(acc.sums.size());
    for (size_t i = 0; i < acc.sums.size(); ++i) means[i] = acc.sums[i] / acc.count;
    for (int feature = 0; feature < 2; ++feature) {
      // the two highest-mean values within this feature
      int base = feature * n;
      int top1 = -1, top2 = -1;
      for (int v = 0; v < n; ++v) {
        double m = means[static_cast<size_t>(base + v)];
        if (top1 < 0 || m > means[static_cast<size_t>(base + top1)]) {
          top2 = top1;
          top1 = v;
        } else if (top2 < 0 || m > means[static_cast<size_t>(base + top2)]) {
          top2 = v;
        }
      }
      for (int v = 0; v < n; ++v) {
        SemanticsRow r;
        r.message = message;
        r.n_states = acc.count;
        r.feature = feature == 0 ? "color" : "shape";
        r.value_index = v;
        r.mean_reward = means[static_cast<size_t>(base + v)];
        r.top2 = v == top1 || v == top2;
        rows.push_back(std::move(r));
      }
    }
  };
  // most frequent messages first, ties by key
  std::vector<std::pair<std::string, const Acc*>> ordered;
  for (const auto& [key, acc] : by_message) ordered.push_back({key, &acc});
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second->count != b.second->count) return a.second->count > b.second->count;
    return a.first < b.first;
  });
  for (const auto& [key, acc] : ordered) emit(key, *acc);
  emit("ALL", all);
  return rows;
}

void write_unique_counts_csv(const std::string& path, const UtteranceCounts& counts) {
  std::ostringstream os;
  os << "train_unique,val_unique,val_novel\n";
  os << counts.train_unique << ',' << counts.val_unique << ',' << counts.val_novel << "\n";
  write_text_file(path, os.str());
}

void write_semantics_csv(const std::string& path, std::span<const SemanticsRow> rows) {
  std::ostringstream os;
  os << "message,n_states,feature,value_index,mean_reward,top2\n";
  for (const auto& r : rows) {
    os << r.message << ',' << r.n_states << ',' << r.feature << ',' << r.value_index << ','
       << format_double(r.mean_reward) << ',' << (r.top2 ? 1 : 0) << "\n";
  }
  write_text_file(path, os.str());
}

}  // namespace sigbandit::exp
