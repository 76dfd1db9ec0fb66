#ifndef SIGBANDIT_EXPERIMENTS_HPP
#define SIGBANDIT_EXPERIMENTS_HPP

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sigbandit/agents.hpp"
#include "sigbandit/env.hpp"
#include "sigbandit/training.hpp"

namespace sigbandit::exp {

// One training run inside a sweep grid.
struct SweepCell {
  std::string condition;
  double axis = 0.0;
  uint64_t seed = 0;
  train::TrainConfig config;

  std::string run_name() const;  // "<config-hash>_s<seed>"
};

struct SweepSpec {
  int experiment = 1;  // 1 capacity, 2 difficulty, 3 teacher competence
  train::TrainConfig base;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
  // experiment 1 grids
  std::vector<int> language_capacities = {1, 2, 5, 10, 15};
  std::vector<int> demo_capacities = {1, 2, 3, 4, 5};
  // experiment 2 / 3 fixed capacities
  int language_capacity = 10;
  int demo_capacity = 2;
  // experiment 2 axis
  std::vector<int> n_values = {3, 4, 5, 6};
  // experiment 3 axis
  std::vector<double> fractions = {0.05, 0.1, 0.2, 0.4, 0.7};

  void validate() const;
};

std::vector<SweepCell> sweep_cells(const SweepSpec& spec);

struct AggregateRow {
  std::string condition;
  double axis = 0.0;
  std::string split;            // "val", plus "train" rows for experiment 2
  double mean = 0.0;            // over seeds with results
  double sem = 0.0;             // sample sd / sqrt(#present)
  std::vector<double> per_seed; // NaN marks a missing run
  int n_missing = 0;
};

struct AggregateTable {
  int experiment = 0;
  std::vector<uint64_t> seeds;
  std::vector<AggregateRow> rows;

  const AggregateRow* find(const std::string& condition, double axis,
                           const std::string& split) const;
};

void write_aggregate_csv(const std::string& path, const AggregateTable& table);
AggregateTable read_aggregate_csv(const std::string& path);

// per-run artifact layout inside one output directory
struct RunArtifacts {
  std::string dir, metrics, utterances, checkpoint, manifest;
};
RunArtifacts run_artifacts(const std::string& dir);
// the manifest is written last, so its presence marks completion
bool run_complete(const std::string& dir);
void persist_run(const RunArtifacts& paths, const train::TrainConfig& cfg,
                 const ad::ParamStore& store, const train::RunMetrics& metrics,
                 const std::string& config_text);

struct SweepOptions {
  std::string out_root;
  int parallel = 1;
  bool force = false;        // rerun cells that already look complete
  std::ostream* log = nullptr;
};

struct SweepResult {
  AggregateTable table;
  int cells_total = 0;
  int cells_failed = 0;
  int cells_skipped = 0;  // already complete, reused
  std::string manifest_path;
  std::string table_path;
};

// Runs (or resumes) every cell, then aggregates final rewards from the
// persisted per-run metrics. A cell failure is recorded, not fatal.
SweepResult run_sweep(const SweepSpec& spec, const SweepOptions& options);

// Pure re-aggregation from a sweep manifest and the per-run metrics.csv files.
AggregateTable aggregate_sweep(const std::string& manifest_path);

// --- analyses -------------------------------------------------------------------

struct UtteranceCounts {
  int64_t train_unique = 0;
  int64_t val_unique = 0;
  int64_t val_novel = 0;  // in the validation log but never produced in training
};
UtteranceCounts analyze_unique_utterances(std::span<const agents::UtteranceLogEntry> log);

// Mean reward of every feature value over the world states that elicited each
// message in the validation log, plus an "ALL" aggregate; top2 marks the two
// highest-reward values within each feature per message.
struct SemanticsRow {
  std::string message;  // utterance key or "ALL"
  int n_states = 0;
  std::string feature;  // "color" | "shape"
  int value_index = 0;
  double mean_reward = 0.0;
  bool top2 = false;
};
std::vector<SemanticsRow> analyze_message_semantics(std::span<const agents::UtteranceLogEntry> log,
                                                    const env::GameSpace& space);

void write_unique_counts_csv(const std::string& path, const UtteranceCounts& counts);
void write_semantics_csv(const std::string& path, std::span<const SemanticsRow> rows);

}  // namespace sigbandit::exp

#endif
