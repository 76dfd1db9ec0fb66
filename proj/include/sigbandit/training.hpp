#ifndef SIGBANDIT_TRAINING_HPP
#define SIGBANDIT_TRAINING_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sigbandit/agents.hpp"
#include "sigbandit/autodiff.hpp"
#include "sigbandit/env.hpp"

namespace sigbandit::train {

struct TrainConfig {
  int n = 4;
  agents::Channel channel = agents::Channel::language;
  int capacity = 10;          // message length (language) or demo count (demo channels)
  int vocab = 80;
  double tau = 1.0;
  int batch_size = 32;
  int updates = 4000;
  double learning_rate = 3e-4;
  double train_fraction = 0.8;
  uint64_t seed = 0;
  int eval_every = 200;
  int eval_contexts = 0;      // 0: min(1000, #contexts)
  int eval_max_states = 128;  // 0: every state in the split

  void validate() const;  // throws naming the offending field
  int resolved_eval_contexts(size_t num_contexts) const;
  // sorted key=value list; the config hash excludes the seed
  std::string canonical_string(bool include_seed = true) const;
  std::string hash() const;
};

struct EvalRecord {
  int update = 0;
  std::string split;
  double mean = 0.0;
  double sem = 0.0;
  int n_games = 0;
};

struct RunMetrics {
  std::vector<EvalRecord> records;  // ordered by update
  int64_t games_processed = 0;
  double final_train_mean = 0.0;
  double final_val_mean = 0.0;
  std::vector<agents::UtteranceLogEntry> final_utterances;
};

void write_metrics_csv(const std::string& path, const RunMetrics& metrics);
std::vector<EvalRecord> read_metrics_csv(const std::string& path);

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8)
class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  // applies p -= lr * m_hat / (sqrt(v_hat) + eps) and zeroes grads
  void step(ad::ParamStore& store);
  int64_t steps_taken() const { return t_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  double lr_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double expected_reward_value(const std::array<double, 3>& probs,
                             const std::array<double, 3>& rewards);
ad::Tensor expected_reward(ad::Tape& tape, ad::Tensor probs, const std::array<double, 3>& rewards);

// One live training run; owns parameters, optimizer state and RNG streams.
struct Run {
  explicit Run(const TrainConfig& config);
  Run(const Run&) = delete;
  Run& operator=(const Run&) = delete;

  TrainConfig config;
  env::GameSpace space;
  std::vector<int> train_states, val_states;
  ad::ParamStore store;
  agents::Teacher teacher;
  agents::Student student;
  Adam adam;
  Rng train_rng;
  ad::Tape tape;
  int64_t games_processed = 0;
};

// One joint update on a batch of games; returns the (negated-reward) loss.
// Throws if the loss is not finite.
double training_step(Run& run, std::span<const env::Game> batch);

// Shared measurement core: walks states in order, draws eval_contexts contexts
// per state (all contexts when eval_contexts >= #contexts, else distinct
// samples), asks `choose` for an action, and averages normalized rewards.
struct EvalStats {
  double mean = 0.0;
  double sem = 0.0;
  int n_games = 0;
};
EvalStats evaluate_actions(const env::GameSpace& space, std::span<const int> state_ids,
                           int eval_contexts, Rng& rng,
                           const std::function<int(int state_id, int context_id)>& choose);

// Greedy-decoded evaluation of the live agents (demo pools rebuilt from the
// current teacher weights; the random channel draws its demos from `rng`).
struct EvalResult {
  EvalStats stats;
  std::vector<agents::Utterance> utterances;  // one per state, in state_ids order
};
EvalResult evaluate(Run& run, std::span<const int> state_ids, int eval_contexts, Rng& rng,
                    bool collect_utterances);

// Full training loop with periodic evaluation on both splits.
RunMetrics train_run(Run& run, const std::function<void(int, double)>& progress = {});

}  // namespace sigbandit::train

#endif
