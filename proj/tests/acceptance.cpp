// Acceptance suite: one line of PASS/FAIL per criterion, nonzero exit on any
// failure. The experiment sweeps train into SIGBANDIT_ACCEPT_DIR (default
// ./acceptance_runs); completed cells are reused on re-invocation, so the
// first run is by far the slowest.
//
// Usage: acceptance [criterion ...]     e.g. `acceptance 1 2 3 4 9`

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "oracle_utils.hpp"
#include "sigbandit/agents.hpp"
#include "sigbandit/cli.hpp"
#include "sigbandit/env.hpp"
#include "sigbandit/experiments.hpp"
#include "sigbandit/io_util.hpp"
#include "sigbandit/training.hpp"

using namespace sigbandit;
namespace fs = std::filesystem;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {

std::string g_root;
int g_parallel = 1;

std::string fmt(double v) { return format_fixed(v, 4); }

int64_t factorial(int n) { return n <= 1 ? 1 : n * factorial(n - 1); }

// ---------------------------------------------------------------- criterion 1
bool criterion_enumeration(std::ostream& log) {
  bool ok = true;
  for (int n = 2; n <= 6; ++n) {
    env::GameSpace gs = env::build_game_space(n);
    int64_t want_states = factorial(n) * factorial(n);
    int64_t m = n * n;
    int64_t want_contexts = m * (m - 1) * (m - 2) / 6;
    log << "  n=" << n << ": states " << gs.states.size() << "/" << want_states << ", contexts "
        << gs.contexts.size() << "/" << want_contexts << "\n";
    ok = ok && static_cast<int64_t>(gs.states.size()) == want_states &&
         static_cast<int64_t>(gs.contexts.size()) == want_contexts;
  }
  env::GameSpace g4 = env::build_game_space(4);
  ok = ok && g4.states.size() == 576 && g4.contexts.size() == 560;
  return ok;
}

// ---------------------------------------------------------------- criterion 2
bool criterion_reward_oracle(std::ostream& log) {
  env::GameSpace gs = env::build_game_space(3);
  int64_t checked = 0, mismatched = 0;
  for (const auto& w : gs.states) {
    for (const auto& c : gs.contexts) {
      for (int a = 0; a < 3; ++a) {
        ++checked;
        if (env::reward(gs.space, w, c, a) != oracle::lookup_sum_reward(gs.space, w, c, a)) {
          ++mismatched;
        }
      }
    }
  }
  log << "  " << checked << " (context, world, action) triples, " << mismatched << " mismatches\n";
  return checked == 36 * 84 * 3 && mismatched == 0;
}

// ---------------------------------------------------------------- criterion 3
double op_gradient_suite(int& instances) {
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(seed * 1231 + 7);
    int m = 2 + static_cast<int>(rng.uniform_int(3));
    int k = 2 + static_cast<int>(rng.uniform_int(3));
    int p = 2 + static_cast<int>(rng.uniform_int(3));
    auto project = [](Tape& t, Tensor y, Tensor c) { return t.sum(t.mul(y, c)); };
    auto run = [&](const std::vector<Shape>& shapes, std::vector<std::vector<double>> values,
                   const oracle::GraphFn& fn) {
      worst = std::max(worst, oracle::check_gradients(shapes, std::move(values), fn).max_rel_err);
      ++instances;
    };
    auto rv = [&](const Shape& s) { return oracle::random_values(ad::numel(s), rng); };
    auto rv_off = [&](const Shape& s) {
      auto v = oracle::random_values(ad::numel(s), rng);
      for (double& x : v) x += (x >= 0 ? 0.2 : -0.2);
      return v;
    };
    run({{m, k}, {k, p}, {m, p}}, {rv({m, k}), rv({k, p}), rv({m, p})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.matmul(l[0], l[1]), l[2]); });
    run({{m, k}, {k}, {m}}, {rv({m, k}), rv({k}), rv({m})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.matmul(l[0], l[1]), l[2]); });
    run({{k}, {k, p}, {p}}, {rv({k}), rv({k, p}), rv({p})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.matmul(l[0], l[1]), l[2]); });
    run({{m, k}, {m, k}, {m, k}}, {rv({m, k}), rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.add(l[0], l[1]), l[2]); });
    run({{m, k}, {k}, {m, k}}, {rv({m, k}), rv({k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.add(l[0], l[1]), l[2]); });
    run({{m, k}, {m, k}, {m, k}}, {rv({m, k}), rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.sub(l[0], l[1]), l[2]); });
    run({{m, k}, {m, k}, {m, k}}, {rv({m, k}), rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.mul(l[0], l[1]), l[2]); });
    run({{m}, {k}, {m + k}}, {rv({m}), rv({k}), rv({m + k})},
        [&](Tape& t, std::span<const Tensor> l) {
          std::vector<Tensor> parts = {l[0], l[1]};
          return project(t, t.concat(parts), l[2]);
        });
    run({{m, k}, {m, k}}, {rv_off({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.relu(l[0]), l[1]); });
    run({{m, k}, {m, k}}, {rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.tanh(l[0]), l[1]); });
    run({{m, k}, {m, k}}, {rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.sigmoid(l[0]), l[1]); });
    run({{m, k}, {m, k}}, {rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.softmax(l[0]), l[1]); });
    run({{k}, {k}}, {rv({k}), rv({k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.log_softmax(l[0]), l[1]); });
    run({{m, k}}, {rv({m, k})}, [&](Tape& t, std::span<const Tensor> l) { return t.sum(l[0]); });
    run({{m, k}}, {rv({m, k})}, [&](Tape& t, std::span<const Tensor> l) { return t.mean(l[0]); });
    run({{m, k}, {m, k}, {m}}, {rv({m, k}), rv({m, k}), rv({m})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.dot_rows(l[0], l[1]), l[2]); });
    run({{m, k}, {m, k}}, {rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.scale(l[0], -1.3), l[1]); });
    run({{m, k}, {m, k}}, {rv({m, k}), rv({m, k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.affine(l[0], 0.7, 1.1), l[1]); });
    run({{3 * k}, {k}}, {rv({3 * k}), rv({k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.slice(l[0], k, 2 * k), l[1]); });
    run({{m, k}, {m * k}}, {rv({m, k}), rv({m * k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.reshape(l[0], {m * k}), l[1]); });
    std::vector<int> idx = {0, m - 1, 0};
    run({{m, k}, {3, k}}, {rv({m, k}), rv({3, k})},
        [&](Tape& t, std::span<const Tensor> l) {
          return project(t, t.embedding_lookup(l[0], idx), l[1]);
        });
    run({{m, k}, {k}, {3}}, {rv({m, k}), rv({k}), rv({3})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.rows_dot(l[0], idx, l[1]), l[2]); });
    run({{m, k}, {3}, {k}}, {rv({m, k}), rv({3}), rv({k})},
        [&](Tape& t, std::span<const Tensor> l) { return project(t, t.rows_mix(l[0], idx, l[1]), l[2]); });
    std::vector<std::vector<int>> bag = {{0, m - 1, 1}, {1, 0, 0}};
    run({{m, k}, {p, k}, {k}, {3, k}}, {rv({m, k}), rv({p, k}), rv({k}), rv({3, k})},
        [&](Tape& t, std::span<const Tensor> l) {
          std::vector<Tensor> tables = {l[0], l[1]};
          return project(t, t.rows_sum(tables, bag, l[2]), l[3]);
        });
    int hs = 2 + static_cast<int>(rng.uniform_int(3));
    int is = 2 + static_cast<int>(rng.uniform_int(3));
    run({{is}, {hs}, {is, 3 * hs}, {hs, 3 * hs}, {3 * hs}, {3 * hs}, {hs}},
        {rv({is}), rv({hs}), rv({is, 3 * hs}), rv({hs, 3 * hs}), rv({3 * hs}), rv({3 * hs}), rv({hs})},
        [&](Tape& t, std::span<const Tensor> l) {
          ad::GruWeights w{l[2], l[3], l[4], l[5], is, hs};
          return project(t, ad::gru_cell(t, w, l[0], l[1]), l[6]);
        });
  }
  return worst;
}

double gumbel_soft_path_suite(int& instances) {
  // straight-through backward vs the analytic soft-sample Jacobian
  double worst = 0.0;
  for (uint64_t seed = 1; seed <= 25; ++seed) {
    Rng op_rng(seed), mirror(seed);
    Rng vals(seed * 101);
    std::vector<double> lv = oracle::random_values(7, vals, -2, 2);
    std::vector<double> cv = oracle::random_values(7, vals, -1, 1);
    Tape tape;
    Tensor logits = tape.leaf({7}, lv, true);
    Tensor y = tape.gumbel_softmax_st(logits, 1.0, op_rng);
    tape.backward(tape.sum(tape.mul(y, tape.constant({7}, cv))));
    const auto& grad = tape.grad(logits);
    std::vector<double> z(7), soft(7);
    for (int i = 0; i < 7; ++i) z[static_cast<size_t>(i)] = lv[static_cast<size_t>(i)] + mirror.gumbel();
    double mx = *std::max_element(z.begin(), z.end()), total = 0;
    for (int i = 0; i < 7; ++i) total += soft[static_cast<size_t>(i)] = std::exp(z[static_cast<size_t>(i)] - mx);
    for (double& s : soft) s /= total;
    double dot = 0;
    for (int i = 0; i < 7; ++i) dot += soft[static_cast<size_t>(i)] * cv[static_cast<size_t>(i)];
    for (int i = 0; i < 7; ++i) {
      worst = std::max(worst, oracle::rel_err(grad[static_cast<size_t>(i)],
                                              soft[static_cast<size_t>(i)] * (cv[static_cast<size_t>(i)] - dot)));
    }
    ++instances;
  }
  return worst;
}

double toy_objective_suite(int& instances) {
  // end-to-end objective on a toy game, soft utterance path with frozen noise
  env::GameSpace gs = env::build_game_space(2);
  ad::ParamStore store;
  Rng rng(23);
  agents::Teacher teacher = agents::make_teacher(store, agents::Channel::language, gs.space, 5, rng);
  agents::Student student = agents::make_student(store, agents::Channel::language, gs.space, 5, rng);
  const env::WorldState& world = gs.states[2];
  const env::Context& ctx = gs.contexts[1];
  std::array<double, 3> rewards = env::action_rewards(gs.space, world, ctx);
  Rng noise_rng(7);
  std::vector<std::vector<double>> noise(2);
  for (auto& g : noise) {
    g.resize(5);
    for (double& x : g) x = noise_rng.gumbel();
  }
  auto build = [&](Tape& tape) {
    Tensor g_t = agents::object_code_table(tape, teacher.g_object, gs.space);
    Tensor g_s = agents::object_code_table(tape, student.g_object, gs.space);
    Tensor f_w = agents::world_code(tape, teacher.f_world, gs.space, world);
    Tensor j = train::expected_reward(tape, agents::game_policy_probs(tape, f_w, g_t, ctx), rewards);
    ad::GruWeights dec = agents::leaf_gru(tape, teacher.decoder);
    Tensor h = tape.add(tape.matmul(f_w, tape.param(*teacher.init_w)), tape.param(*teacher.init_b));
    Tensor x = tape.param(*teacher.start);
    std::vector<Tensor> soft_tokens;
    for (size_t i = 0; i < noise.size(); ++i) {
      h = ad::gru_cell(tape, dec, x, h);
      Tensor logits = tape.add(tape.matmul(h, tape.param(*teacher.head_w)), tape.param(*teacher.head_b));
      Tensor soft = tape.softmax(tape.add(logits, tape.constant({5}, noise[i])));
      soft_tokens.push_back(soft);
      x = tape.matmul(soft, tape.param(*teacher.embed));
    }
    auto inputs = agents::language_inputs(tape, student, std::span<const Tensor>(soft_tokens));
    Tensor f_u = agents::student_sequence_code(tape, student, inputs);
    j = tape.add(j, train::expected_reward(
                        tape, agents::student_policy_probs(tape, student, f_u, g_s, ctx), rewards));
    return tape.scale(j, -1.0);
  };
  Tape tape;
  Tensor loss = build(tape);
  store.zero_grads();
  tape.backward(loss);
  auto loss_value = [&] {
    Tape t;
    return t.val(build(t))[0];
  };
  double worst = 0.0, step = 1e-5;
  Rng pick(3);
  for (size_t pi = 0; pi < store.size(); ++pi) {
    ad::Parameter& p = store.at(pi);
    size_t j = pick.uniform_int(p.value.size());
    double saved = p.value[j];
    p.value[j] = saved + step;
    double up = loss_value();
    p.value[j] = saved - step;
    double down = loss_value();
    p.value[j] = saved;
    worst = std::max(worst, oracle::rel_err(p.grad[j], (up - down) / (2 * step)));
    ++instances;
  }
  return worst;
}

bool criterion_gradient_suite(std::ostream& log) {
  auto start = std::chrono::steady_clock::now();
  int instances = 0;
  double worst_ops = op_gradient_suite(instances);
  double worst_st = gumbel_soft_path_suite(instances);
  double worst_toy = toy_objective_suite(instances);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log << "  " << instances << " instances; worst rel err: ops " << worst_ops << ", gumbel soft path "
      << worst_st << ", toy objective " << worst_toy << "; runtime " << fmt(secs) << "s\n";
  return instances >= 100 && worst_ops < 1e-4 && worst_st < 1e-4 && worst_toy < 1e-4 && secs < 60.0;
}

// ---------------------------------------------------------------- criterion 4
bool criterion_normalization(std::ostream& log) {
  env::GameSpace gs = env::build_game_space(4);
  std::vector<int> state_ids;
  for (int i = 0; i < 30; ++i) state_ids.push_back((i * 37) % 576);
  auto oracle_choose = [&](int sid, int cid) {
    auto r = env::action_rewards(gs.space, gs.states[static_cast<size_t>(sid)],
                                 gs.contexts[static_cast<size_t>(cid)]);
    return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  };
  Rng rng1(5);
  auto oracle_stats = train::evaluate_actions(gs, state_ids, 560, rng1, oracle_choose);
  Rng choice(91);
  auto random_choose = [&](int, int) { return static_cast<int>(choice.uniform_int(3)); };
  Rng rng2(6);
  auto random_stats = train::evaluate_actions(gs, state_ids, 560, rng2, random_choose);
  log << "  oracle student: " << oracle_stats.mean << " over " << oracle_stats.n_games << " games\n";
  log << "  uniform-random student: " << fmt(random_stats.mean) << " over " << random_stats.n_games
      << " games\n";
  return oracle_stats.mean == 1.0 && random_stats.n_games >= 10000 &&
         std::abs(random_stats.mean) < 0.02;
}

// ------------------------------------------------------------- sweeps (5..8)
exp::AggregateTable ensure_sweep(int experiment, std::ostream& log) {
  exp::SweepSpec spec;
  spec.experiment = experiment;
  exp::SweepOptions opt;
  opt.out_root = g_root;
  opt.parallel = g_parallel;
  opt.log = &std::cerr;
  auto result = exp::run_sweep(spec, opt);
  log << "  sweep " << experiment << ": " << result.cells_total << " cells, "
      << result.cells_skipped << " reused, " << result.cells_failed << " failed\n";
  return result.table;
}

double row_mean(const exp::AggregateTable& t, const std::string& cond, double axis,
                const std::string& split = "val") {
  const exp::AggregateRow* r = t.find(cond, axis, split);
  if (r == nullptr || std::isnan(r->mean)) {
    throw std::runtime_error("missing aggregate row " + cond + " axis " + format_double(axis));
  }
  return r->mean;
}

double row_sem(const exp::AggregateTable& t, const std::string& cond, double axis,
               const std::string& split = "val") {
  const exp::AggregateRow* r = t.find(cond, axis, split);
  return r == nullptr ? 0.0 : r->sem;
}

bool criterion_experiment1(std::ostream& log) {
  exp::AggregateTable t = ensure_sweep(1, log);
  bool ok = true;
  std::vector<int> lang_caps = {1, 2, 5, 10, 15};
  std::vector<int> demo_caps = {1, 2, 3, 4, 5};
  for (int k : demo_caps) {
    double ped = row_mean(t, "demo_pedagogical", k), rnd = row_mean(t, "demo_random", k);
    bool pass = ped >= rnd;
    log << "  k=" << k << ": pedagogical " << fmt(ped) << " vs random " << fmt(rnd)
        << (pass ? "" : "   <-- VIOLATION") << "\n";
    ok = ok && pass;
  }
  double lang_gain = row_mean(t, "language", lang_caps.back()) - row_mean(t, "language", 1);
  double ped_gain = row_mean(t, "demo_pedagogical", demo_caps.back()) - row_mean(t, "demo_pedagogical", 1);
  log << "  language capacity gain 1->" << lang_caps.back() << ": " << fmt(lang_gain)
      << " (need >= 0.1)\n";
  log << "  pedagogical capacity gain 1->" << demo_caps.back() << ": " << fmt(ped_gain)
      << " (need >= 0.1)\n";
  ok = ok && lang_gain >= 0.1 && ped_gain >= 0.1;
  int inversions = 0;
  bool inversion_small = true;
  for (size_t i = 1; i < demo_caps.size(); ++i) {
    double prev = row_mean(t, "demo_random", demo_caps[i - 1]);
    double cur = row_mean(t, "demo_random", demo_caps[i]);
    if (cur < prev) {
      ++inversions;
      double allowance = std::max(row_sem(t, "demo_random", demo_caps[i - 1]),
                                  row_sem(t, "demo_random", demo_caps[i]));
      if (prev - cur > allowance) inversion_small = false;
      log << "  random inversion at k=" << demo_caps[i] << ": " << fmt(prev) << " -> " << fmt(cur)
          << " (sem allowance " << fmt(allowance) << ")\n";
    }
  }
  log << "  random-demo inversions: " << inversions << " (allow at most 1, each within 1 sem)\n";
  ok = ok && inversions <= 1 && inversion_small;
  return ok;
}

bool criterion_experiment2(std::ostream& log) {
  exp::AggregateTable t = ensure_sweep(2, log);
  bool ok = true;
  double lang3 = row_mean(t, "language", 3), demo3 = row_mean(t, "demo_pedagogical", 3);
  log << "  n=3 validation: demo " << fmt(demo3) << " vs language " << fmt(lang3)
      << " (need demo > language)\n";
  ok = ok && demo3 > lang3;
  log << "  n=3 language validation mean " << fmt(lang3) << " (need > 0.5)\n";
  ok = ok && lang3 > 0.5;
  double prev = demo3;
  for (int n : {4, 5, 6}) {
    double cur = row_mean(t, "demo_pedagogical", n);
    log << "  demo validation at n=" << n << ": " << fmt(cur)
        << (cur < prev ? "" : "   <-- NOT DECREASING") << "\n";
    ok = ok && cur < prev;
    prev = cur;
  }
  double lang6 = row_mean(t, "language", 6), demo6 = row_mean(t, "demo_pedagogical", 6);
  log << "  n=6 validation: language " << fmt(lang6) << " vs demo " << fmt(demo6)
      << " (need language > demo)\n";
  ok = ok && lang6 > demo6;
  return ok;
}

bool criterion_experiment3(std::ostream& log) {
  exp::AggregateTable t = ensure_sweep(3, log);
  bool ok = true;
  double demo05 = row_mean(t, "demo_pedagogical", 0.05);
  double lang05 = row_mean(t, "language", 0.05);
  log << "  fraction 0.05: demo " << fmt(demo05) << " (need within [-0.1, 0.1]), language "
      << fmt(lang05) << " (need > 0.2)\n";
  ok = ok && demo05 >= -0.1 && demo05 <= 0.1 && lang05 > 0.2;
  for (double f : {0.05, 0.1, 0.2}) {
    double lang = row_mean(t, "language", f), demo = row_mean(t, "demo_pedagogical", f);
    bool pass = lang > demo;
    log << "  fraction " << format_double(f) << ": language " << fmt(lang) << " vs demo "
        << fmt(demo) << (pass ? "" : "   <-- VIOLATION") << "\n";
    ok = ok && pass;
  }
  return ok;
}

// ---------------------------------------------------------------- criterion 8
exp::UtteranceCounts brute_force_counts(const std::vector<agents::UtteranceLogEntry>& log) {
  auto same = [](const agents::Utterance& a, const agents::Utterance& b) {
    return a.tokens == b.tokens && a.demos == b.demos;
  };
  std::vector<const agents::Utterance*> train_d, val_d;
  auto dedup = [&](std::vector<const agents::Utterance*>& list, const agents::Utterance& u) {
    for (const auto* x : list) {
      if (same(*x, u)) return;
    }
    list.push_back(&u);
  };
  for (const auto& e : log) {
    if (e.split == "train") dedup(train_d, e.utterance);
    if (e.split == "val") dedup(val_d, e.utterance);
  }
  exp::UtteranceCounts c;
  c.train_unique = static_cast<int64_t>(train_d.size());
  c.val_unique = static_cast<int64_t>(val_d.size());
  for (const auto* v : val_d) {
    bool found = false;
    for (const auto* tr : train_d) {
      if (same(*tr, *v)) found = true;
    }
    if (!found) ++c.val_novel;
  }
  return c;
}

bool criterion_analysis(std::ostream& log) {
  // every persisted run: the fast unique/novel counts equal a brute recount
  int runs = 0, mismatches = 0;
  for (const auto& entry : fs::directory_iterator(g_root)) {
    if (!entry.is_directory()) continue;
    std::string utt_path = (entry.path() / "utterances.jsonl").string();
    if (!file_exists(utt_path)) continue;
    auto uttlog = agents::read_utterances_jsonl(utt_path);
    if (uttlog.empty()) continue;
    ++runs;
    auto fast = exp::analyze_unique_utterances(uttlog);
    auto brute = brute_force_counts(uttlog);
    if (fast.train_unique != brute.train_unique || fast.val_unique != brute.val_unique ||
        fast.val_novel != brute.val_novel) {
      ++mismatches;
      log << "  recount mismatch in " << entry.path().filename().string() << "\n";
    }
  }
  log << "  " << runs << " runs recounted, " << mismatches << " mismatches\n";
  bool ok = runs > 0 && mismatches == 0;

  // low-competence language runs produce few unique training messages
  exp::SweepSpec spec3;
  spec3.experiment = 3;
  int satisfying = 0, examined = 0;
  for (const auto& cell : exp::sweep_cells(spec3)) {
    if (cell.condition != "language" || cell.axis != 0.05) continue;
    std::string utt_path = g_root + "/" + cell.run_name() + "/utterances.jsonl";
    if (!file_exists(utt_path)) continue;
    auto uttlog = agents::read_utterances_jsonl(utt_path);
    std::set<std::string> train_msgs;
    int train_states = 0;
    for (const auto& e : uttlog) {
      if (e.split != "train") continue;
      ++train_states;
      train_msgs.insert(agents::utterance_key(e.utterance));
    }
    ++examined;
    int64_t unique = static_cast<int64_t>(train_msgs.size());
    bool small = static_cast<double>(unique) <= 0.1 * train_states;
    if (small) ++satisfying;
    log << "  5% language run seed " << cell.seed << ": " << unique << " unique messages over "
        << train_states << " training world states" << (small ? " (<= 10%)" : "") << "\n";
  }
  ok = ok && examined > 0 && satisfying > 0;
  return ok;
}

// ---------------------------------------------------------------- criterion 9
bool criterion_determinism(std::ostream& log) {
  fs::path root = fs::path(g_root) / "determinism_check";
  fs::remove_all(root);
  std::vector<std::string> base_args = {
      "train", "--set", "n=3",           "--set", "channel=language", "--set", "capacity=3",
      "--set", "vocab=16",      "--set", "batch_size=8",     "--set", "updates=60",
      "--set", "eval_every=30", "--set", "eval_max_states=8", "--set", "seed=11"};
  auto run_into = [&](const std::string& out) {
    std::vector<std::string> args = base_args;
    args.push_back("--out");
    args.push_back(out);
    return cli::dispatch(args);
  };
  bool ok = true;
  if (run_into((root / "a").string()) != 0 || run_into((root / "b").string()) != 0) {
    log << "  training invocations failed\n";
    return false;
  }
  auto only_metrics = [](const fs::path& dir) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory()) return read_text_file((e.path() / "metrics.csv").string());
    }
    throw std::runtime_error("no run directory under " + dir.string());
  };
  bool same = only_metrics(root / "a") == only_metrics(root / "b");
  log << "  two executions of one config: metrics.csv " << (same ? "byte-identical" : "DIFFER")
      << "\n";
  ok = ok && same;

  // a small grid, serial vs parallel
  exp::SweepSpec spec;
  spec.experiment = 2;
  spec.base.vocab = 16;
  spec.base.batch_size = 8;
  spec.base.updates = 40;
  spec.base.eval_every = 20;
  spec.base.eval_max_states = 6;
  spec.base.eval_contexts = 30;
  spec.seeds = {0, 1};
  spec.n_values = {3};
  spec.language_capacity = 3;
  spec.demo_capacity = 2;
  exp::SweepOptions o1;
  o1.out_root = (root / "serial").string();
  o1.parallel = 1;
  auto r1 = exp::run_sweep(spec, o1);
  exp::SweepOptions o2;
  o2.out_root = (root / "parallel").string();
  o2.parallel = 4;
  auto r2 = exp::run_sweep(spec, o2);
  bool agg_same = read_text_file(r1.table_path) == read_text_file(r2.table_path);
  log << "  --parallel 1 vs --parallel 4 aggregates " << (agg_same ? "byte-identical" : "DIFFER")
      << "\n";
  ok = ok && agg_same && r1.cells_failed == 0 && r2.cells_failed == 0;
  return ok;
}

struct Criterion {
  int id;
  std::string name;
  std::function<bool(std::ostream&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const char* env_root = std::getenv("SIGBANDIT_ACCEPT_DIR");
  g_root = (env_root != nullptr && *env_root) ? env_root : "acceptance_runs";
  fs::create_directories(g_root);
  const char* env_par = std::getenv("SIGBANDIT_ACCEPT_PARALLEL");
  g_parallel = env_par != nullptr ? std::max(1, atoi(env_par))
                                  : std::max(1u, std::thread::hardware_concurrency());

  std::vector<Criterion> criteria = {
      {1, "enumeration exactness", criterion_enumeration},
      {2, "reward oracle equivalence", criterion_reward_oracle},
      {3, "gradient suite", criterion_gradient_suite},
      {4, "normalization calibration", criterion_normalization},
      {5, "experiment 1 capacity trends", criterion_experiment1},
      {6, "experiment 2 difficulty trends", criterion_experiment2},
      {7, "experiment 3 competence trends", criterion_experiment3},
      {8, "analysis reproducibility", criterion_analysis},
      {9, "determinism", criterion_determinism},
  };

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    std::ostringstream detail;
    bool ok = false;
    std::string error;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name;
    if (!error.empty()) std::cout << " (error: " << error << ")";
    std::cout << "\n" << detail.str();
    std::cout.flush();
    if (!ok) ++failures;
  }
  if (failures > 0) {
    std::cout << failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
