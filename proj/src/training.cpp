#include "sigbandit/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sigbandit/io_util.hpp"

namespace sigbandit::train {

using ad::Tensor;
using agents::Channel;

namespace {

// sub-seed purposes for deriving independent streams from the run seed
enum SeedPurpose : uint64_t {
  kSeedInit = 0,
  kSeedTrain = 1,
  kSeedEvalSubsetTrain = 2,
  kSeedEvalSubsetVal = 3,
  kSeedEval = 4,
};

void fail_field(const std::string& field, const std::string& why) {
  throw std::invalid_argument("config field '" + field + "': " + why);
}

int argmax3(const double* s, const env::Context& ctx) {
  int best = 0;
  for (int a = 1; a < env::kContextSize; ++a) {
    if (s[ctx.objects[static_cast<size_t>(a)]] > s[ctx.objects[static_cast<size_t>(best)]]) best = a;
  }
  return best;
}

}  // namespace

void TrainConfig::validate() const {
  if (n < env::kMinValues || n > env::kMaxValues) fail_field("n", "must be in [2, 6]");
  if (capacity < 1) fail_field("capacity", "must be >= 1");
  if (vocab < 2) fail_field("vocab", "must be >= 2");
  if (!(tau > 0.0)) fail_field("tau", "must be positive");
  if (batch_size < 1) fail_field("batch_size", "must be >= 1");
  if (updates < 1) fail_field("updates", "must be >= 1");
  if (!(learning_rate >= 0.0)) fail_field("learning_rate", "must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    fail_field("train_fraction", "must be in (0, 1)");
  }
  if (eval_every < 1) fail_field("eval_every", "must be >= 1");
  if (eval_contexts < 0) fail_field("eval_contexts", "must be >= 0");
  if (eval_max_states < 0) fail_field("eval_max_states", "must be >= 0");
  if (agents::is_demo(channel)) {
    // demo capacity cannot exceed the pool size
    int m = n * n;
    long pool = static_cast<long>(m) * (m - 1) * (m - 2) / 6;
    if (capacity > pool) fail_field("capacity", "exceeds the demo pool size");
  }
}

int TrainConfig::resolved_eval_contexts(size_t num_contexts) const {
  if (eval_contexts > 0) return eval_contexts;
  return static_cast<int>(std::min<size_t>(1000, num_contexts));
}

std::string TrainConfig::canonical_string(bool include_seed) const {
  std::ostringstream os;
  os << "batch_size=" << batch_size;
  os << ";capacity=" << capacity;
  os << ";channel=" << agents::channel_name(channel);
  os << ";eval_contexts=" << eval_contexts;
  os << ";eval_every=" << eval_every;
  os << ";eval_max_states=" << eval_max_states;
  os << ";learning_rate=" << format_double(learning_rate);
  os << ";n=" << n;
  if (include_seed) os << ";seed=" << seed;
  os << ";tau=" << format_double(tau);
  os << ";train_fraction=" << format_double(train_fraction);
  os << ";updates=" << updates;
  os << ";vocab=" << vocab;
  return os.str();
}

std::string TrainConfig::hash() const { return fnv1a_hex(canonical_string(false)); }

void write_metrics_csv(const std::string& path, const RunMetrics& metrics) {
  std::ostringstream os;
  os << "update,split,mean_normalized_reward,sem,n_games\n";
  for (const auto& r : metrics.records) {
    os << r.update << ',' << r.split << ',' << format_double(r.mean) << ','
       << format_double(r.sem) << ',' << r.n_games << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<EvalRecord> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty metrics file: " + path);
  if (trim(line) != "update,split,mean_normalized_reward,sem,n_games") {
    throw std::runtime_error("unexpected metrics header in " + path + ": " + line);
  }
  std::vector<EvalRecord> out;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    auto parts = split_csv_line(line);
    if (parts.size() != 5) throw std::runtime_error("bad metrics row: " + line);
    EvalRecord r;
    r.update = static_cast<int>(parse_int(parts[0]));
    r.split = parts[1];
    r.mean = parse_double(parts[2]);
    r.sem = parse_double(parts[3]);
    r.n_games = static_cast<int>(parse_int(parts[4]));
    out.push_back(std::move(r));
  }
  return out;
}

// --- Adam -----------------------------------------------------------------------

void Adam::step(ad::ParamStore& store) {
  if (m_.size() != store.size()) {
    m_.resize(store.size());
    v_.resize(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
      m_[i].assign(store.at(i).value.size(), 0.0);
      v_[i].assign(store.at(i).value.size(), 0.0);
    }
  }
  t_ += 1;
  double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t i = 0; i < store.size(); ++i) {
    ad::Parameter& p = store.at(i);
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < p.value.size(); ++j) {
      double g = p.grad[j];
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
      double m_hat = m[j] / bc1;
      double v_hat = v[j] / bc2;
      p.value[j] -= lr_ * m_hat / (std::sqrt(v_hat) + kEps);
    }
    p.zero_grad();
  }
}

// --- objective helpers --------------------------------------------------------------

double expected_reward_value(const std::array<double, 3>& probs,
                             const std::array<double, 3>& rewards) {
  return probs[0] * rewards[0] + probs[1] * rewards[1] + probs[2] * rewards[2];
}

Tensor expected_reward(ad::Tape& tape, Tensor probs, const std::array<double, 3>& rewards) {
  Tensor r = tape.constant({3}, {rewards[0], rewards[1], rewards[2]});
  return tape.sum(tape.mul(probs, r));
}

// --- Run -------------------------------------------------------------------------------

namespace {
const TrainConfig& checked(const TrainConfig& cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

Run::Run(const TrainConfig& cfg)
    : config(checked(cfg)),
      space(env::build_game_space(cfg.n)),
      adam(cfg.learning_rate),
      train_rng(sub_seed(cfg.seed, kSeedTrain)) {
  auto split = env::split_world_states(space.states.size(), cfg.train_fraction, cfg.seed);
  train_states = std::move(split.first);
  val_states = std::move(split.second);
  Rng init_rng(sub_seed(cfg.seed, kSeedInit));
  teacher = agents::make_teacher(store, cfg.channel, space.space, cfg.vocab, init_rng);
  student = agents::make_student(store, cfg.channel, space.space, cfg.vocab, init_rng);
}

// --- training step -----------------------------------------------------------------------

double training_step(Run& run, std::span<const env::Game> batch) {
  if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
  ad::Tape& tape = run.tape;
  tape.reset();
  const env::FeatureSpace& fs = run.space.space;
  const auto& contexts = run.space.contexts;
  Channel ch = run.config.channel;

  Tensor teacher_codes = agents::object_code_table(tape, run.teacher.g_object, fs);
  Tensor student_codes = agents::object_code_table(tape, run.student.g_object, fs);

  // world codes first: demo pools need their values before the rollouts
  std::vector<Tensor> world_codes;
  world_codes.reserve(batch.size());
  for (const env::Game& g : batch) {
    world_codes.push_back(agents::world_code(tape, run.teacher.f_world,  fs,
                                             run.space.states[static_cast<size_t>(g.world_index)]));
  }

  // demo channels: pools from the current game-policy scores, then one shared
  // code table per side covering every (context, action) pair the batch uses
  std::vector<agents::DemoPool> pools;
  std::vector<agents::Utterance> random_utts;  // random channel, pre-drawn per game
  agents::DemoRowIndex rows;
  Tensor teacher_demo_codes, student_demo_codes;
  if (agents::is_demo(ch)) {
    pools.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      auto scores = agents::object_scores(tape.val(teacher_codes), tape.val(world_codes[i]),
                                          fs.num_objects());
      pools.push_back(agents::demo_pool_from_scores(scores, contexts, fs.n));
    }
    if (ch == Channel::demo_pedagogical) {
      std::vector<const agents::DemoPool*> pool_ptrs;
      for (const auto& p : pools) pool_ptrs.push_back(&p);
      rows = agents::build_demo_row_index(pool_ptrs, contexts.size());
      teacher_demo_codes = agents::demo_code_table(tape, run.teacher.h_demo, teacher_codes, rows, contexts);
      student_demo_codes = agents::demo_code_table(tape, run.student.h_demo, student_codes, rows, contexts);
    } else {
      // the student only ever encodes the received demos, so the table can
      // cover just those rows
      rows.num_contexts = static_cast<int>(contexts.size());
      rows.row_of.assign(contexts.size() * 3, -1);
      for (size_t i = 0; i < batch.size(); ++i) {
        random_utts.push_back(agents::random_demos(pools[i], run.config.capacity, run.train_rng));
        for (const auto& d : random_utts.back().demos) {
          size_t key = static_cast<size_t>(d.context_id) * 3 + static_cast<size_t>(d.action);
          if (rows.row_of[key] < 0) {
            rows.row_of[key] = static_cast<int32_t>(rows.row_demo.size());
            rows.row_demo.push_back(d);
          }
        }
      }
      student_demo_codes = agents::demo_code_table(tape, run.student.h_demo, student_codes, rows, contexts);
    }
  }

  Tensor total;  // sum of J_T + J_{S,T} over the batch
  for (size_t i = 0; i < batch.size(); ++i) {
    const env::Game& g = batch[i];
    const env::WorldState& world = run.space.states[static_cast<size_t>(g.world_index)];
    const env::Context& ctx = contexts[static_cast<size_t>(g.context_index)];
    std::array<double, 3> rewards = env::action_rewards(fs, world, ctx);

    // teacher plays the game directly
    Tensor t_probs = agents::game_policy_probs(tape, world_codes[i], teacher_codes, ctx);
    Tensor j = expected_reward(tape, t_probs, rewards);

    // student plays from the sampled utterance
    Tensor f_u;
    if (ch == Channel::language) {
      auto rollout = agents::generate_language(tape, run.teacher, world_codes[i],
                                               run.config.capacity, agents::DecodeMode::sample,
                                               run.config.tau, &run.train_rng);
      auto inputs = agents::language_inputs(tape, run.student, std::span<const Tensor>(rollout.onehots));
      f_u = agents::student_sequence_code(tape, run.student, inputs);
    } else if (ch == Channel::demo_pedagogical) {
      auto rollout = agents::generate_demos(tape, run.teacher, world_codes[i], teacher_demo_codes,
                                            rows, pools[i], run.config.capacity,
                                            agents::DecodeMode::sample, run.config.tau,
                                            &run.train_rng);
      auto inputs = agents::demo_inputs(tape, student_demo_codes, rollout);
      f_u = agents::student_sequence_code(tape, run.student, inputs);
    } else {
      auto inputs = agents::demo_inputs(tape, student_demo_codes, rows,
                                        std::span<const agents::Demonstration>(random_utts[i].demos));
      f_u = agents::student_sequence_code(tape, run.student, inputs);
    }
    Tensor s_probs = agents::student_policy_probs(tape, run.student, f_u, student_codes, ctx);
    j = tape.add(j, expected_reward(tape, s_probs, rewards));
    total = total.defined() ? tape.add(total, j) : j;
  }

  Tensor loss = tape.scale(total, -1.0 / static_cast<double>(batch.size()));
  double loss_value = tape.val(loss)[0];
  if (!std::isfinite(loss_value)) {
    throw std::runtime_error("training_step: non-finite loss " + format_double(loss_value) +
                             " after " + std::to_string(run.adam.steps_taken()) + " updates (" +
                             run.config.canonical_string() + ")");
  }
  run.store.zero_grads();
  tape.backward(loss);
  run.adam.step(run.store);
  run.games_processed += static_cast<int64_t>(batch.size());
  tape.reset();
  return loss_value;
}

// --- evaluation ------------------------------------------------------------------------------

EvalStats evaluate_actions(const env::GameSpace& space, std::span<const int> state_ids,
                           int eval_contexts, Rng& rng,
                           const std::function<int(int, int)>& choose) {
  if (state_ids.empty()) throw std::invalid_argument("evaluate_actions: no world states");
  size_t num_contexts = space.contexts.size();
  bool exhaustive = static_cast<size_t>(eval_contexts) >= num_contexts;
  double sum = 0.0, sumsq = 0.0;
  int64_t count = 0;
  std::vector<int> ctx_ids;
  for (int sid : state_ids) {
    if (exhaustive) {
      ctx_ids.resize(num_contexts);
      for (size_t i = 0; i < num_contexts; ++i) ctx_ids[i] = static_cast<int>(i);
    } else {
      ctx_ids = rng.sample_without_replacement(static_cast<int>(num_contexts), eval_contexts);
    }
    const env::WorldState& world = space.states[static_cast<size_t>(sid)];
    for (int cid : ctx_ids) {
      const env::Context& ctx = space.contexts[static_cast<size_t>(cid)];
      int action = choose(sid, cid);
      std::array<double, 3> rewards = env::action_rewards(space.space, world, ctx);
      double norm = env::normalized_reward(rewards[static_cast<size_t>(action)], rewards);
      sum += norm;
      sumsq += norm * norm;
      ++count;
    }
  }
  EvalStats st;
  st.n_games = static_cast<int>(count);
  st.mean = sum / static_cast<double>(count);
  if (count > 1) {
    double var = (sumsq - sum * sum / static_cast<double>(count)) / static_cast<double>(count - 1);
    st.sem = std::sqrt(std::max(0.0, var) / static_cast<double>(count));
  }
  return st;
}

EvalResult evaluate(Run& run, std::span<const int> state_ids, int eval_contexts, Rng& rng,
                    bool collect_utterances) {
  const env::FeatureSpace& fs = run.space.space;
  const auto& contexts = run.space.contexts;
  Channel ch = run.config.channel;

  // object code tables are constant during one evaluation
  std::vector<double> teacher_code_values, student_code_values;
  {
    ad::Tape t0(/*grad_enabled=*/false);
    teacher_code_values = t0.val(agents::object_code_table(t0, run.teacher.g_object, fs));
    student_code_values = t0.val(agents::object_code_table(t0, run.student.g_object, fs));
  }

  EvalResult result;
  if (collect_utterances) result.utterances.reserve(state_ids.size());

  // per-state caches filled lazily as evaluate_actions walks the states
  int cached_state = -1;
  std::vector<double> student_scores;  // <f_S(u), g_S(o)> for every object

  auto prepare_state = [&](int sid) {
    const env::WorldState& world = run.space.states[static_cast<size_t>(sid)];
    ad::Tape tape(/*grad_enabled=*/false);
    Tensor f_w = agents::world_code(tape, run.teacher.f_world, fs, world);
    agents::Utterance utt;
    Tensor f_u;
    if (ch == Channel::language) {
      auto rollout = agents::generate_language(tape, run.teacher, f_w, run.config.capacity,
                                               agents::DecodeMode::greedy, run.config.tau, nullptr);
      utt.kind = Channel::language;
      utt.tokens = rollout.tokens;
      auto inputs = agents::language_inputs(tape, run.student, std::span<const int>(utt.tokens));
      f_u = agents::student_sequence_code(tape, run.student, inputs);
    } else {
      // pool from the current teacher weights
      auto scores = agents::object_scores(teacher_code_values, tape.val(f_w), fs.num_objects());
      agents::DemoPool pool = agents::demo_pool_from_scores(scores, contexts, fs.n);
      const agents::DemoPool* pp = &pool;
      agents::DemoRowIndex rows = agents::build_demo_row_index({&pp, 1}, contexts.size());
      if (ch == Channel::demo_pedagogical) {
        Tensor teacher_codes = tape.constant({fs.num_objects(), agents::kCodeDim}, teacher_code_values);
        Tensor h_t = agents::demo_code_table(tape, run.teacher.h_demo, teacher_codes, rows, contexts);
        auto rollout = agents::generate_demos(tape, run.teacher, f_w, h_t, rows, pool,
                                              run.config.capacity, agents::DecodeMode::greedy,
                                              run.config.tau, nullptr);
        utt.kind = Channel::demo_pedagogical;
        utt.demos = rollout.demos;
      } else {
        utt = agents::random_demos(pool, run.config.capacity, rng);
      }
      // student encodes only the received demos
      agents::DemoRowIndex received;
      received.num_contexts = static_cast<int>(contexts.size());
      received.row_of.assign(contexts.size() * 3, -1);
      for (const auto& d : utt.demos) {
        size_t key = static_cast<size_t>(d.context_id) * 3 + static_cast<size_t>(d.action);
        if (received.row_of[key] < 0) {
          received.row_of[key] = static_cast<int32_t>(received.row_demo.size());
          received.row_demo.push_back(d);
        }
      }
      Tensor student_codes = tape.constant({fs.num_objects(), agents::kCodeDim}, student_code_values);
      Tensor h_s = agents::demo_code_table(tape, run.student.h_demo, student_codes, received, contexts);
      auto inputs = agents::demo_inputs(tape, h_s, received,
                                        std::span<const agents::Demonstration>(utt.demos));
      f_u = agents::student_sequence_code(tape, run.student, inputs);
    }
    student_scores = agents::object_scores(student_code_values, tape.val(f_u), fs.num_objects());
    if (collect_utterances) result.utterances.push_back(std::move(utt));
    cached_state = sid;
  };

  auto choose = [&](int sid, int cid) -> int {
    if (sid != cached_state) prepare_state(sid);
    return argmax3(student_scores.data(), contexts[static_cast<size_t>(cid)]);
  };

  result.stats = evaluate_actions(run.space, state_ids, eval_contexts, rng, choose);
  return result;
}

// --- full run -------------------------------------------------------------------------------

namespace {
std::vector<int> eval_subset(const std::vector<int>& split, int cap, uint64_t seed) {
  if (cap <= 0 || static_cast<size_t>(cap) >= split.size()) return split;
  Rng rng(seed);
  std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(split.size()), cap);
  std::vector<int> out;
  out.reserve(picks.size());
  for (int i : picks) out.push_back(split[static_cast<size_t>(i)]);
  return out;
}
}  // namespace

RunMetrics train_run(Run& run, const std::function<void(int, double)>& progress) {
  const TrainConfig& cfg = run.config;
  RunMetrics metrics;

  std::vector<int> eval_train = eval_subset(run.train_states, cfg.eval_max_states,
                                            sub_seed(cfg.seed, kSeedEvalSubsetTrain));
  std::vector<int> eval_val = eval_subset(run.val_states, cfg.eval_max_states,
                                          sub_seed(cfg.seed, kSeedEvalSubsetVal));
  int n_eval_contexts = cfg.resolved_eval_contexts(run.space.contexts.size());

  std::vector<env::Game> batch(static_cast<size_t>(cfg.batch_size));
  for (int update = 1; update <= cfg.updates; ++update) {
    for (auto& g : batch) {
      g = env::sample_game(run.train_states, run.space.contexts.size(), run.train_rng);
    }
    double loss = training_step(run, batch);
    bool final_update = update == cfg.updates;
    if (update % cfg.eval_every == 0 || final_update) {
      Rng eval_rng(sub_seed(cfg.seed, kSeedEval, static_cast<uint64_t>(update)));
      EvalResult tr = evaluate(run, eval_train, n_eval_contexts, eval_rng, final_update);
      EvalResult va = evaluate(run, eval_val, n_eval_contexts, eval_rng, final_update);
      metrics.records.push_back({update, "train", tr.stats.mean, tr.stats.sem, tr.stats.n_games});
      metrics.records.push_back({update, "val", va.stats.mean, va.stats.sem, va.stats.n_games});
      if (final_update) {
        metrics.final_train_mean = tr.stats.mean;
        metrics.final_val_mean = va.stats.mean;
        for (size_t i = 0; i < eval_train.size(); ++i) {
          metrics.final_utterances.push_back({eval_train[i], "train", tr.utterances[i]});
        }
        for (size_t i = 0; i < eval_val.size(); ++i) {
          metrics.final_utterances.push_back({eval_val[i], "val", va.utterances[i]});
        }
      }
    }
    if (progress) progress(update, loss);
  }
  metrics.games_processed = run.games_processed;
  return metrics;
}

}  // namespace sigbandit::train
