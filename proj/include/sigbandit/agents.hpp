#ifndef SIGBANDIT_AGENTS_HPP
#define SIGBANDIT_AGENTS_HPP

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sigbandit/autodiff.hpp"
#include "sigbandit/env.hpp"
#include "sigbandit/rng.hpp"

namespace sigbandit::agents {

inline constexpr int kCodeDim = 64;      // MLP output width shared by all encoders
inline constexpr int kMlpHidden = 64;
inline constexpr int kEmbedDim = 64;     // token embedding width
inline constexpr int kLangHidden = 100;  // language GRU hidden size
inline constexpr int kDemoHidden = 64;   // demonstration GRU hidden size

enum class Channel { language, demo_pedagogical, demo_random };

std::string channel_name(Channel c);
Channel parse_channel(const std::string& s);
inline bool is_demo(Channel c) { return c != Channel::language; }

enum class DecodeMode { sample, greedy };

// --- parameter bundles ------------------------------------------------------

// two-layer MLP, relu on the hidden layer, linear output; x*W convention
struct Mlp2 {
  ad::Parameter *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
  int in = 0, hidden = 0, out = 0;
};
Mlp2 make_mlp2(ad::ParamStore& store, const std::string& prefix, int in, int hidden, int out,
               Rng& rng);
ad::Tensor mlp2(ad::Tape& tape, const Mlp2& m, ad::Tensor x);  // [in] or [rows x in]

struct GruLayer {
  ad::Parameter *wx = nullptr, *wh = nullptr, *bx = nullptr, *bh = nullptr;
  int in = 0, hidden = 0;
};
GruLayer make_gru(ad::ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng);
ad::GruWeights leaf_gru(ad::Tape& tape, const GruLayer& g);

// Demonstration encoder: (3 object codes, action one-hot) -> kCodeDim.
// The first layer is stored in four blocks (one per object slot plus the
// action block) so entire tables of demos encode as a handful of matmuls.
struct DemoEncoder {
  ad::Parameter* w_obj[3] = {nullptr, nullptr, nullptr};
  ad::Parameter *w_act = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
  int hidden = 0, out = 0;
  bool valid() const { return w2 != nullptr; }
};
DemoEncoder make_demo_encoder(ad::ParamStore& store, const std::string& prefix, Rng& rng);

struct Teacher {
  Channel channel = Channel::language;
  int n = 0, vocab = 0;
  Mlp2 f_world;   // world-state encoder, shared by the game policy and decoder
  Mlp2 g_object;  // object encoder
  // decoder (language and pedagogical demos)
  GruLayer decoder;
  ad::Parameter *init_w = nullptr, *init_b = nullptr;  // world code -> initial hidden
  ad::Parameter* start = nullptr;                      // learned first decoder input
  // language head + embeddings
  ad::Parameter *embed = nullptr, *head_w = nullptr, *head_b = nullptr;
  // demonstration encoder
  DemoEncoder h_demo;
};

struct Student {
  Channel channel = Channel::language;
  int n = 0, vocab = 0;
  Mlp2 g_object;  // context encoder, reused by the demo encoder
  GruLayer encoder;
  ad::Parameter *proj_w = nullptr, *proj_b = nullptr;  // final hidden -> utterance code
  ad::Parameter* embed = nullptr;  // language token embeddings
  DemoEncoder h_demo;
};

Teacher make_teacher(ad::ParamStore& store, Channel channel, const env::FeatureSpace& space,
                     int vocab, Rng& rng);
Student make_student(ad::ParamStore& store, Channel channel, const env::FeatureSpace& space,
                     int vocab, Rng& rng);

// --- utterances ---------------------------------------------------------------

struct Demonstration {
  int context_id = -1;
  int action = -1;
  bool operator==(const Demonstration&) const = default;
};

struct Utterance {
  Channel kind = Channel::language;
  std::vector<int> tokens;             // language: exactly msg_len ints in [0, V)
  std::vector<Demonstration> demos;    // demos: exactly k distinct demonstrations
};

// canonical identity string (token sequence / ordered demo sequence)
std::string utterance_key(const Utterance& u);

struct UtteranceLogEntry {
  int world_state_id = -1;
  std::string split;  // "train" | "val"
  Utterance utterance;
};

void write_utterances_jsonl(const std::string& path, std::span<const UtteranceLogEntry> entries);
std::vector<UtteranceLogEntry> read_utterances_jsonl(const std::string& path);

// --- demo pools ----------------------------------------------------------------

// the teacher's argmax action for every enumerated context under one world state
struct DemoPool {
  std::vector<uint8_t> actions;
  size_t size() const { return actions.size(); }
};

// Row catalogue of the (context, action) demo variants one step touches; the
// teacher- and student-side demo code tables are both indexed by it.
struct DemoRowIndex {
  int num_contexts = 0;
  std::vector<int32_t> row_of;          // size 3*C, -1 when absent
  std::vector<Demonstration> row_demo;  // row id -> demo

  int num_rows() const { return static_cast<int>(row_demo.size()); }
  int row(int context_id, int action) const {
    return row_of[static_cast<size_t>(context_id) * 3 + static_cast<size_t>(action)];
  }
};
DemoRowIndex build_demo_row_index(std::span<const DemoPool* const> pools, size_t num_contexts);

// --- tape builders ---------------------------------------------------------------

// g codes for every object: [n^2 x kCodeDim]
ad::Tensor object_code_table(ad::Tape& tape, const Mlp2& g, const env::FeatureSpace& space);
// f(w): [kCodeDim]
ad::Tensor world_code(ad::Tape& tape, const Mlp2& f, const env::FeatureSpace& space,
                      const env::WorldState& world);

// probabilities over the 3 context objects from dot-product scores
ad::Tensor game_policy_probs(ad::Tape& tape, ad::Tensor world_code, ad::Tensor object_codes,
                             const env::Context& context);

// per-object scores <f(w), g(o)> from raw values ([m x code] row-major table)
std::vector<double> object_scores(const std::vector<double>& object_code_values,
                                  const std::vector<double>& world_code_values, int num_objects);

// argmax action per context, ties to the lowest action index
DemoPool demo_pool_from_scores(const std::vector<double>& scores,
                               const std::vector<env::Context>& contexts, int n);
// spec surface: computes codes for the given teacher on a scratch tape
DemoPool build_demo_pool(const Teacher& teacher, const env::FeatureSpace& space,
                         const env::WorldState& world, const std::vector<env::Context>& contexts);

// demo code table aligned with a DemoRowIndex: [num_rows x kCodeDim]
ad::Tensor demo_code_table(ad::Tape& tape, const DemoEncoder& enc, ad::Tensor object_codes,
                           const DemoRowIndex& rows, const std::vector<env::Context>& contexts);

// single-demo encoding through the same blocks (used by eval paths and tests)
ad::Tensor encode_demo(ad::Tape& tape, const Mlp2& g_object, const DemoEncoder& enc,
                       const env::FeatureSpace& space, const env::Context& context, int action);

// --- teacher rollouts --------------------------------------------------------------

struct LanguageRollout {
  std::vector<int> tokens;
  std::vector<ad::Tensor> onehots;  // transmitted one-hot per step, [V]
};
LanguageRollout generate_language(ad::Tape& tape, const Teacher& teacher, ad::Tensor world_code,
                                  int msg_len, DecodeMode mode, double tau, Rng* rng);

struct DemoRollout {
  std::vector<Demonstration> demos;
  std::vector<ad::Tensor> onehots;   // over pool positions, [C]
  std::vector<int> pool_rows;        // H-table row of each pool position
};
DemoRollout generate_demos(ad::Tape& tape, const Teacher& teacher, ad::Tensor world_code,
                           ad::Tensor demo_codes, const DemoRowIndex& rows, const DemoPool& pool,
                           int k, DecodeMode mode, double tau, Rng* rng);

// k distinct pool entries drawn uniformly without replacement
Utterance random_demos(const DemoPool& pool, int k, Rng& rng);

// --- student -----------------------------------------------------------------------

// GRU over per-step input vectors, zero initial hidden, projected to kCodeDim
ad::Tensor student_sequence_code(ad::Tape& tape, const Student& student,
                                 std::span<const ad::Tensor> inputs);

// per-step inputs for the encoder
std::vector<ad::Tensor> language_inputs(ad::Tape& tape, const Student& student,
                                        std::span<const ad::Tensor> onehots);
std::vector<ad::Tensor> language_inputs(ad::Tape& tape, const Student& student,
                                        std::span<const int> tokens);
// straight-through mixtures over the student-side demo table
std::vector<ad::Tensor> demo_inputs(ad::Tape& tape, ad::Tensor student_demo_codes,
                                    const DemoRollout& rollout);
// direct rows for known demos (random channel and evaluation)
std::vector<ad::Tensor> demo_inputs(ad::Tape& tape, ad::Tensor student_demo_codes,
                                    const DemoRowIndex& rows,
                                    std::span<const Demonstration> demos);

ad::Tensor student_policy_probs(ad::Tape& tape, const Student& student, ad::Tensor utterance_code,
                                ad::Tensor object_codes, const env::Context& context);

// spec surfaces computing plain probabilities on a scratch tape
std::array<double, 3> teacher_game_policy(const Teacher& teacher, const env::FeatureSpace& space,
                                          const env::WorldState& world, const env::Context& context);
std::array<double, 3> student_policy(const Student& student, const env::FeatureSpace& space,
                                     const Utterance& utterance, const env::Context& context);

}  // namespace sigbandit::agents

#endif
