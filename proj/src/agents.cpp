#include "sigbandit/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "sigbandit/io_util.hpp"

namespace sigbandit::agents {

namespace {

using ad::Tensor;

constexpr double kMaskedLogit = -1e30;

int argmax(const std::vector<double>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<double> one_hot(int size, int index) {
  std::vector<double> v(static_cast<size_t>(size), 0.0);
  v[static_cast<size_t>(index)] = 1.0;
  return v;
}

}  // namespace

std::string channel_name(Channel c) {
  switch (c) {
    case Channel::language: return "language";
    case Channel::demo_pedagogical: return "demo_pedagogical";
    case Channel::demo_random: return "demo_random";
  }
  return "?";
}

Channel parse_channel(const std::string& s) {
  if (s == "language") return Channel::language;
  if (s == "demo_pedagogical") return Channel::demo_pedagogical;
  if (s == "demo_random") return Channel::demo_random;
  throw std::invalid_argument(
      "unknown channel '" + s + "' (expected language, demo_pedagogical or demo_random)");
}

// --- parameter bundles -------------------------------------------------------

Mlp2 make_mlp2(ad::ParamStore& store, const std::string& prefix, int in, int hidden, int out,
               Rng& rng) {
  Mlp2 m;
  m.in = in;
  m.hidden = hidden;
  m.out = out;
  m.w1 = &store.add_uniform(prefix + ".w1", {in, hidden}, in, rng);
  m.b1 = &store.add_uniform(prefix + ".b1", {hidden}, in, rng);
  m.w2 = &store.add_uniform(prefix + ".w2", {hidden, out}, hidden, rng);
  m.b2 = &store.add_uniform(prefix + ".b2", {out}, hidden, rng);
  return m;
}

Tensor mlp2(ad::Tape& tape, const Mlp2& m, Tensor x) {
  Tensor h = tape.relu(tape.add(tape.matmul(x, tape.param(*m.w1)), tape.param(*m.b1)));
  return tape.add(tape.matmul(h, tape.param(*m.w2)), tape.param(*m.b2));
}

GruLayer make_gru(ad::ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng) {
  GruLayer g;
  g.in = in;
  g.hidden = hidden;
  g.wx = &store.add_uniform(prefix + ".wx", {in, 3 * hidden}, in, rng);
  g.wh = &store.add_uniform(prefix + ".wh", {hidden, 3 * hidden}, hidden, rng);
  g.bx = &store.add_uniform(prefix + ".bx", {3 * hidden}, in, rng);
  g.bh = &store.add_uniform(prefix + ".bh", {3 * hidden}, hidden, rng);
  return g;
}

ad::GruWeights leaf_gru(ad::Tape& tape, const GruLayer& g) {
  ad::GruWeights w;
  w.wx = tape.param(*g.wx);
  w.wh = tape.param(*g.wh);
  w.bx = tape.param(*g.bx);
  w.bh = tape.param(*g.bh);
  w.input_size = g.in;
  w.hidden_size = g.hidden;
  return w;
}

DemoEncoder make_demo_encoder(ad::ParamStore& store, const std::string& prefix, Rng& rng) {
  DemoEncoder e;
  e.hidden = kMlpHidden;
  e.out = kCodeDim;
  int fan_in = 3 * kCodeDim + 3;  // concatenated object codes plus the action one-hot
  for (int i = 0; i < 3; ++i) {
    e.w_obj[i] = &store.add_uniform(prefix + ".w_obj" + std::to_string(i), {kCodeDim, e.hidden},
                                    fan_in, rng);
  }
  e.w_act = &store.add_uniform(prefix + ".w_act", {3, e.hidden}, fan_in, rng);
  e.b1 = &store.add_uniform(prefix + ".b1", {e.hidden}, fan_in, rng);
  e.w2 = &store.add_uniform(prefix + ".w2", {e.hidden, e.out}, e.hidden, rng);
  e.b2 = &store.add_uniform(prefix + ".b2", {e.out}, e.hidden, rng);
  return e;
}

Teacher make_teacher(ad::ParamStore& store, Channel channel, const env::FeatureSpace& space,
                     int vocab, Rng& rng) {
  Teacher t;
  t.channel = channel;
  t.n = space.n;
  t.vocab = vocab;
  int phi = space.phi_dim();
  t.f_world = make_mlp2(store, "teacher.f", phi, kMlpHidden, kCodeDim, rng);
  t.g_object = make_mlp2(store, "teacher.g", phi, kMlpHidden, kCodeDim, rng);
  if (channel == Channel::language) {
    t.decoder = make_gru(store, "teacher.decoder", kEmbedDim, kLangHidden, rng);
    t.init_w = &store.add_uniform("teacher.init.w", {kCodeDim, kLangHidden}, kCodeDim, rng);
    t.init_b = &store.add_uniform("teacher.init.b", {kLangHidden}, kCodeDim, rng);
    t.start = &store.add_uniform("teacher.start", {kEmbedDim}, kEmbedDim, rng);
    t.embed = &store.add_uniform("teacher.embed", {vocab, kEmbedDim}, vocab, rng);
    t.head_w = &store.add_uniform("teacher.head.w", {kLangHidden, vocab}, kLangHidden, rng);
    t.head_b = &store.add_uniform("teacher.head.b", {vocab}, kLangHidden, rng);
  } else if (channel == Channel::demo_pedagogical) {
    t.decoder = make_gru(store, "teacher.decoder", kCodeDim, kDemoHidden, rng);
    t.init_w = &store.add_uniform("teacher.init.w", {kCodeDim, kDemoHidden}, kCodeDim, rng);
    t.init_b = &store.add_uniform("teacher.init.b", {kDemoHidden}, kCodeDim, rng);
    t.start = &store.add_uniform("teacher.start", {kCodeDim}, kCodeDim, rng);
    t.h_demo = make_demo_encoder(store, "teacher.h", rng);
  }
  // the random-demo teacher keeps only its game-playing half
  return t;
}

Student make_student(ad::ParamStore& store, Channel channel, const env::FeatureSpace& space,
                     int vocab, Rng& rng) {
  Student s;
  s.channel = channel;
  s.n = space.n;
  s.vocab = vocab;
  s.g_object = make_mlp2(store, "student.g", space.phi_dim(), kMlpHidden, kCodeDim, rng);
  int hidden = channel == Channel::language ? kLangHidden : kDemoHidden;
  s.encoder = make_gru(store, "student.encoder", channel == Channel::language ? kEmbedDim : kCodeDim,
                       hidden, rng);
  s.proj_w = &store.add_uniform("student.proj.w", {hidden, kCodeDim}, hidden, rng);
  s.proj_b = &store.add_uniform("student.proj.b", {kCodeDim}, hidden, rng);
  if (channel == Channel::language) {
    s.embed = &store.add_uniform("student.embed", {vocab, kEmbedDim}, vocab, rng);
  } else {
    s.h_demo = make_demo_encoder(store, "student.h", rng);
  }
  return s;
}

// --- utterances -----------------------------------------------------------------

std::string utterance_key(const Utterance& u) {
  // comma-free so keys can sit in CSV columns
  std::ostringstream os;
  if (u.kind == Channel::language) {
    os << "L:";
    for (size_t i = 0; i < u.tokens.size(); ++i) {
      if (i) os << '-';
      os << u.tokens[i];
    }
  } else {
    os << "D:";
    for (size_t i = 0; i < u.demos.size(); ++i) {
      if (i) os << '-';
      os << u.demos[i].context_id << '/' << u.demos[i].action;
    }
  }
  return os.str();
}

void write_utterances_jsonl(const std::string& path, std::span<const UtteranceLogEntry> entries) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["world_state_id"] = e.world_state_id;
    j["split"] = e.split;
    if (e.utterance.kind == Channel::language) {
      j["kind"] = "language";
      j["tokens"] = e.utterance.tokens;
    } else {
      j["kind"] = "demo";
      nlohmann::json demos = nlohmann::json::array();
      for (const auto& d : e.utterance.demos) {
        demos.push_back({{"context", d.context_id}, {"action", d.action}});
      }
      j["demos"] = std::move(demos);
    }
    f << j.dump() << "\n";
  }
}

std::vector<UtteranceLogEntry> read_utterances_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<UtteranceLogEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    UtteranceLogEntry e;
    e.world_state_id = j.at("world_state_id").get<int>();
    e.split = j.at("split").get<std::string>();
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "language") {
      e.utterance.kind = Channel::language;
      e.utterance.tokens = j.at("tokens").get<std::vector<int>>();
    } else if (kind == "demo") {
      e.utterance.kind = Channel::demo_pedagogical;
      for (const auto& d : j.at("demos")) {
        e.utterance.demos.push_back(
            Demonstration{d.at("context").get<int>(), d.at("action").get<int>()});
      }
    } else {
      throw std::runtime_error("utterance log: unknown kind '" + kind + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

// --- demo pools ------------------------------------------------------------------

DemoRowIndex build_demo_row_index(std::span<const DemoPool* const> pools, size_t num_contexts) {
  DemoRowIndex idx;
  idx.num_contexts = static_cast<int>(num_contexts);
  idx.row_of.assign(num_contexts * 3, -1);
  for (const DemoPool* pool : pools) {
    for (size_t c = 0; c < pool->actions.size(); ++c) {
      size_t key = c * 3 + pool->actions[c];
      if (idx.row_of[key] < 0) {
        idx.row_of[key] = static_cast<int32_t>(idx.row_demo.size());
        idx.row_demo.push_back(Demonstration{static_cast<int>(c), pool->actions[c]});
      }
    }
  }
  return idx;
}

// --- tape builders ----------------------------------------------------------------

Tensor object_code_table(ad::Tape& tape, const Mlp2& g, const env::FeatureSpace& space) {
  int m = space.num_objects();
  int phi = space.phi_dim();
  std::vector<double> rows(static_cast<size_t>(m) * phi, 0.0);
  for (int o = 0; o < m; ++o) {
    env::object_phi(space, env::object_from_id(o, space.n), rows.data() + static_cast<ptrdiff_t>(o) * phi);
  }
  Tensor phis = tape.constant({m, phi}, std::move(rows));
  return mlp2(tape, g, phis);
}

Tensor world_code(ad::Tape& tape, const Mlp2& f, const env::FeatureSpace& space,
                  const env::WorldState& world) {
  Tensor w = tape.constant({space.phi_dim()}, world.reward_vector(space));
  return mlp2(tape, f, w);
}

Tensor game_policy_probs(ad::Tape& tape, Tensor world_code, Tensor object_codes,
                         const env::Context& context) {
  int objs[3] = {context.objects[0], context.objects[1], context.objects[2]};
  Tensor scores = tape.rows_dot(object_codes, std::span<const int>(objs, 3), world_code);
  return tape.softmax(scores);
}

std::vector<double> object_scores(const std::vector<double>& object_code_values,
                                  const std::vector<double>& world_code_values, int num_objects) {
  size_t code = world_code_values.size();
  std::vector<double> scores(static_cast<size_t>(num_objects), 0.0);
  for (int o = 0; o < num_objects; ++o) {
    const double* row = object_code_values.data() + static_cast<size_t>(o) * code;
    double acc = 0.0;
    for (size_t c = 0; c < code; ++c) acc += row[c] * world_code_values[c];
    scores[static_cast<size_t>(o)] = acc;
  }
  return scores;
}

DemoPool demo_pool_from_scores(const std::vector<double>& scores,
                               const std::vector<env::Context>& contexts, int /*n*/) {
  DemoPool pool;
  pool.actions.resize(contexts.size());
  for (size_t c = 0; c < contexts.size(); ++c) {
    const auto& objs = contexts[c].objects;
    int best = 0;
    for (int a = 1; a < env::kContextSize; ++a) {
      if (scores[objs[static_cast<size_t>(a)]] > scores[objs[static_cast<size_t>(best)]]) best = a;
    }
    pool.actions[c] = static_cast<uint8_t>(best);
  }
  return pool;
}

DemoPool build_demo_pool(const Teacher& teacher, const env::FeatureSpace& space,
                         const env::WorldState& world, const std::vector<env::Context>& contexts) {
  ad::Tape tape(/*grad_enabled=*/false);
  Tensor G = object_code_table(tape, teacher.g_object, space);
  Tensor f = world_code(tape, teacher.f_world, space, world);
  std::vector<double> scores = object_scores(tape.val(G), tape.val(f), space.num_objects());
  return demo_pool_from_scores(scores, contexts, space.n);
}

Tensor demo_code_table(ad::Tape& tape, const DemoEncoder& enc, Tensor object_codes,
                       const DemoRowIndex& rows, const std::vector<env::Context>& contexts) {
  if (!enc.valid()) throw std::invalid_argument("demo_code_table: encoder not configured");
  int u = rows.num_rows();
  if (u == 0) throw std::invalid_argument("demo_code_table: empty row index");
  std::vector<std::vector<int>> idx(4, std::vector<int>(static_cast<size_t>(u)));
  for (int r = 0; r < u; ++r) {
    const Demonstration& d = rows.row_demo[static_cast<size_t>(r)];
    const env::Context& ctx = contexts[static_cast<size_t>(d.context_id)];
    for (int slot = 0; slot < 3; ++slot) {
      idx[static_cast<size_t>(slot)][static_cast<size_t>(r)] = ctx.objects[static_cast<size_t>(slot)];
    }
    idx[3][static_cast<size_t>(r)] = d.action;
  }
  // multiply each first-layer block by the small object table, then gather
  Tensor blocks[4];
  for (int slot = 0; slot < 3; ++slot) {
    blocks[slot] = tape.matmul(object_codes, tape.param(*enc.w_obj[slot]));
  }
  blocks[3] = tape.param(*enc.w_act);  // action rows index this block directly
  Tensor pre = tape.rows_sum(std::span<const Tensor>(blocks, 4), idx, tape.param(*enc.b1));
  return tape.add(tape.matmul(tape.relu(pre), tape.param(*enc.w2)), tape.param(*enc.b2));
}

Tensor encode_demo(ad::Tape& tape, const Mlp2& g_object, const DemoEncoder& enc,
                   const env::FeatureSpace& space, const env::Context& context, int action) {
  if (action < 0 || action >= env::kContextSize) {
    throw std::invalid_argument("encode_demo: action out of range");
  }
  Tensor G = object_code_table(tape, g_object, space);
  DemoRowIndex rows;  // single-row index over just this demo
  rows.num_contexts = 1;
  rows.row_of.assign(3, -1);
  rows.row_of[static_cast<size_t>(action)] = 0;
  rows.row_demo = {Demonstration{0, action}};
  std::vector<env::Context> one = {context};
  Tensor table = demo_code_table(tape, enc, G, rows, one);
  return tape.reshape(table, {enc.out});
}

// --- teacher rollouts ---------------------------------------------------------------

LanguageRollout generate_language(ad::Tape& tape, const Teacher& teacher, Tensor world_code,
                                  int msg_len, DecodeMode mode, double tau, Rng* rng) {
  if (teacher.channel != Channel::language) {
    throw std::invalid_argument("generate_language: teacher is not a language teacher");
  }
  if (msg_len < 1) throw std::invalid_argument("generate_language: msg_len must be >= 1");
  if (mode == DecodeMode::sample && rng == nullptr) {
    throw std::invalid_argument("generate_language: sampling needs an rng");
  }
  ad::GruWeights dec = leaf_gru(tape, teacher.decoder);
  Tensor emb = tape.param(*teacher.embed);
  Tensor head_w = tape.param(*teacher.head_w);
  Tensor head_b = tape.param(*teacher.head_b);
  Tensor h = tape.tanh(
      tape.add(tape.matmul(world_code, tape.param(*teacher.init_w)), tape.param(*teacher.init_b)));
  Tensor x = tape.param(*teacher.start);
  LanguageRollout out;
  for (int step = 0; step < msg_len; ++step) {
    h = ad::gru_cell(tape, dec, x, h);
    Tensor logits = tape.add(tape.matmul(h, head_w), head_b);
    Tensor onehot;
    if (mode == DecodeMode::sample) {
      onehot = tape.gumbel_softmax_st(logits, tau, *rng);
    } else {
      onehot = tape.constant({teacher.vocab}, one_hot(teacher.vocab, argmax(tape.val(logits))));
    }
    out.tokens.push_back(argmax(tape.val(onehot)));
    out.onehots.push_back(onehot);
    x = tape.matmul(onehot, emb);  // straight-through into the embeddings
  }
  return out;
}

DemoRollout generate_demos(ad::Tape& tape, const Teacher& teacher, Tensor world_code,
                           Tensor demo_codes, const DemoRowIndex& rows, const DemoPool& pool,
                           int k, DecodeMode mode, double tau, Rng* rng) {
  if (teacher.channel != Channel::demo_pedagogical) {
    throw std::invalid_argument("generate_demos: teacher has no demonstration decoder");
  }
  int c = static_cast<int>(pool.size());
  if (k < 1 || k > c) {
    throw std::invalid_argument("generate_demos: k = " + std::to_string(k) +
                                " outside [1, " + std::to_string(c) + "]");
  }
  if (mode == DecodeMode::sample && rng == nullptr) {
    throw std::invalid_argument("generate_demos: sampling needs an rng");
  }
  DemoRollout out;
  out.pool_rows.resize(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    out.pool_rows[static_cast<size_t>(i)] = rows.row(i, pool.actions[static_cast<size_t>(i)]);
    if (out.pool_rows[static_cast<size_t>(i)] < 0) {
      throw std::invalid_argument("generate_demos: pool entry missing from row index");
    }
  }
  ad::GruWeights dec = leaf_gru(tape, teacher.decoder);
  Tensor h = tape.tanh(
      tape.add(tape.matmul(world_code, tape.param(*teacher.init_w)), tape.param(*teacher.init_b)));
  Tensor x = tape.param(*teacher.start);
  std::vector<double> mask(static_cast<size_t>(c), 0.0);
  for (int step = 0; step < k; ++step) {
    h = ad::gru_cell(tape, dec, x, h);
    Tensor logits = tape.rows_dot(demo_codes, out.pool_rows, h);
    if (step > 0) logits = tape.add(logits, tape.constant({c}, mask));  // already-sent demos
    Tensor onehot;
    if (mode == DecodeMode::sample) {
      onehot = tape.gumbel_softmax_st(logits, tau, *rng);
    } else {
      onehot = tape.constant({c}, one_hot(c, argmax(tape.val(logits))));
    }
    int sel = argmax(tape.val(onehot));
    mask[static_cast<size_t>(sel)] = kMaskedLogit;
    out.demos.push_back(Demonstration{sel, pool.actions[static_cast<size_t>(sel)]});
    out.onehots.push_back(onehot);
    x = tape.rows_mix(demo_codes, out.pool_rows, onehot);
  }
  return out;
}

Utterance random_demos(const DemoPool& pool, int k, Rng& rng) {
  int c = static_cast<int>(pool.size());
  if (k < 1 || k > c) {
    throw std::invalid_argument("random_demos: k = " + std::to_string(k) + " outside [1, " +
                                std::to_string(c) + "]");
  }
  Utterance u;
  u.kind = Channel::demo_random;
  for (int idx : rng.sample_without_replacement(c, k)) {
    u.demos.push_back(Demonstration{idx, pool.actions[static_cast<size_t>(idx)]});
  }
  return u;
}

// --- student ---------------------------------------------------------------------------

Tensor student_sequence_code(ad::Tape& tape, const Student& student,
                             std::span<const Tensor> inputs) {
  if (inputs.empty()) throw std::invalid_argument("student_sequence_code: empty utterance");
  ad::GruWeights enc = leaf_gru(tape, student.encoder);
  Tensor h = tape.constant({student.encoder.hidden},
                           std::vector<double>(static_cast<size_t>(student.encoder.hidden), 0.0));
  for (Tensor x : inputs) h = ad::gru_cell(tape, enc, x, h);
  return tape.add(tape.matmul(h, tape.param(*student.proj_w)), tape.param(*student.proj_b));
}

std::vector<Tensor> language_inputs(ad::Tape& tape, const Student& student,
                                    std::span<const Tensor> onehots) {
  if (student.channel != Channel::language) {
    throw std::invalid_argument("language_inputs: student is not a language student");
  }
  Tensor emb = tape.param(*student.embed);
  std::vector<Tensor> out;
  out.reserve(onehots.size());
  for (Tensor oh : onehots) out.push_back(tape.matmul(oh, emb));
  return out;
}

std::vector<Tensor> language_inputs(ad::Tape& tape, const Student& student,
                                    std::span<const int> tokens) {
  if (student.channel != Channel::language) {
    throw std::invalid_argument("language_inputs: student is not a language student");
  }
  Tensor emb = tape.param(*student.embed);
  std::vector<Tensor> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= student.vocab) throw std::invalid_argument("language_inputs: token out of range");
    Tensor row = tape.embedding_lookup(emb, std::span<const int>(&t, 1));
    out.push_back(tape.reshape(row, {kEmbedDim}));
  }
  return out;
}

std::vector<Tensor> demo_inputs(ad::Tape& tape, Tensor student_demo_codes,
                                const DemoRollout& rollout) {
  std::vector<Tensor> out;
  out.reserve(rollout.onehots.size());
  for (Tensor oh : rollout.onehots) {
    out.push_back(tape.rows_mix(student_demo_codes, rollout.pool_rows, oh));
  }
  return out;
}

std::vector<Tensor> demo_inputs(ad::Tape& tape, Tensor student_demo_codes,
                                const DemoRowIndex& rows, std::span<const Demonstration> demos) {
  std::vector<Tensor> out;
  out.reserve(demos.size());
  for (const Demonstration& d : demos) {
    int r = rows.row(d.context_id, d.action);
    if (r < 0) throw std::invalid_argument("demo_inputs: demo missing from row index");
    Tensor row = tape.embedding_lookup(student_demo_codes, std::span<const int>(&r, 1));
    out.push_back(tape.reshape(row, {kCodeDim}));
  }
  return out;
}

Tensor student_policy_probs(ad::Tape& tape, const Student& /*student*/, Tensor utterance_code,
                            Tensor object_codes, const env::Context& context) {
  int objs[3] = {context.objects[0], context.objects[1], context.objects[2]};
  Tensor scores = tape.rows_dot(object_codes, std::span<const int>(objs, 3), utterance_code);
  return tape.softmax(scores);
}

// --- plain-probability surfaces -----------------------------------------------------------

std::array<double, 3> teacher_game_policy(const Teacher& teacher, const env::FeatureSpace& space,
                                          const env::WorldState& world, const env::Context& context) {
  ad::Tape tape(/*grad_enabled=*/false);
  Tensor G = object_code_table(tape, teacher.g_object, space);
  Tensor f = world_code(tape, teacher.f_world, space, world);
  Tensor probs = game_policy_probs(tape, f, G, context);
  const auto& v = tape.val(probs);
  return {v[0], v[1], v[2]};
}

std::array<double, 3> student_policy(const Student& student, const env::FeatureSpace& space,
                                     const Utterance& utterance, const env::Context& context) {
  bool utterance_is_language = utterance.kind == Channel::language;
  bool student_is_language = student.channel == Channel::language;
  if (utterance_is_language != student_is_language) {
    throw std::invalid_argument("student_policy: utterance kind '" + channel_name(utterance.kind) +
                                "' does not match student channel '" +
                                channel_name(student.channel) + "'");
  }
  ad::Tape tape(/*grad_enabled=*/false);
  Tensor G = object_code_table(tape, student.g_object, space);
  Tensor code;
  if (student_is_language) {
    auto inputs = language_inputs(tape, student, std::span<const int>(utterance.tokens));
    code = student_sequence_code(tape, student, inputs);
  } else {
    if (utterance.demos.empty()) throw std::invalid_argument("student_policy: empty demo utterance");
    // encode only the received demos
    DemoRowIndex rows;
    for (const Demonstration& d : utterance.demos) {
      rows.num_contexts = std::max(rows.num_contexts, d.context_id + 1);
    }
    rows.row_of.assign(static_cast<size_t>(rows.num_contexts) * 3, -1);
    std::vector<env::Context> ctxs = env::enumerate_contexts(space);
    for (const Demonstration& d : utterance.demos) {
      size_t key = static_cast<size_t>(d.context_id) * 3 + static_cast<size_t>(d.action);
      if (rows.row_of[key] < 0) {
        rows.row_of[key] = static_cast<int32_t>(rows.row_demo.size());
        rows.row_demo.push_back(d);
      }
    }
    Tensor table = demo_code_table(tape, student.h_demo, G, rows, ctxs);
    auto inputs = demo_inputs(tape, table, rows, utterance.demos);
    code = student_sequence_code(tape, student, inputs);
  }
  Tensor probs = student_policy_probs(tape, student, code, G, context);
  const auto& v = tape.val(probs);
  return {v[0], v[1], v[2]};
}

}  // namespace sigbandit::agents
