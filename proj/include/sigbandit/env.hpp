#ifndef SIGBANDIT_ENV_HPP
#define SIGBANDIT_ENV_HPP

#include <array>
#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

#include "sigbandit/rng.hpp"

namespace sigbandit::env {

inline constexpr int kContextSize = 3;   // objects per referring context
inline constexpr int kMaxValues = 6;     // supported n range is [2, 6]
inline constexpr int kMinValues = 2;

// n values per feature; rewards are evenly spaced between the fixed extremes
// (colors -6..+6, shapes -3..+3).
struct FeatureSpace {
  int n = 0;
  std::array<double, kMaxValues> color_rewards{};
  std::array<double, kMaxValues> shape_rewards{};

  static FeatureSpace create(int n);

  int num_objects() const { return n * n; }
  int phi_dim() const { return 2 * n; }
};

// an object is a (color, shape) pair; id = color * n + shape
struct ObjectSpec {
  uint8_t color = 0;
  uint8_t shape = 0;

  int id(int n) const { return color * n + shape; }
  bool operator==(const ObjectSpec&) const = default;
};

ObjectSpec object_from_id(int id, int n);

// boolean feature encoding: one-hot color block then one-hot shape block
void object_phi(const FeatureSpace& space, ObjectSpec obj, double* out);
std::vector<double> object_phi(const FeatureSpace& space, ObjectSpec obj);

// Reward assignment: *_assignment[i] is the index into the reward set held by
// feature value i; both assignments are permutations. reward_vector() is the
// length-2n vector w, colors then shapes.
struct WorldState {
  std::array<uint8_t, kMaxValues> color_assignment{};
  std::array<uint8_t, kMaxValues> shape_assignment{};
  std::array<double, 2 * kMaxValues> reward{};

  double color_reward(int color) const { return reward[static_cast<size_t>(color)]; }
  double shape_reward(const FeatureSpace& s, int shape) const {
    return reward[static_cast<size_t>(s.n + shape)];
  }
  std::vector<double> reward_vector(const FeatureSpace& s) const {
    return std::vector<double>(reward.begin(), reward.begin() + 2 * s.n);
  }
};

WorldState make_world_state(const FeatureSpace& space,
                            const std::array<uint8_t, kMaxValues>& color_assignment,
                            const std::array<uint8_t, kMaxValues>& shape_assignment);

// exactly 3 distinct objects, stored as ascending object ids
struct Context {
  std::array<uint8_t, kContextSize> objects{};

  ObjectSpec object(int slot, int n) const { return object_from_id(objects[static_cast<size_t>(slot)], n); }
  bool operator==(const Context&) const = default;
};

struct Game {
  int world_index = -1;
  int context_index = -1;
};

// all n!*n! states, lexicographic over (color assignment, shape assignment)
std::vector<WorldState> enumerate_world_states(const FeatureSpace& space);
// all C(n^2, 3) ascending object-id triples, lexicographic
std::vector<Context> enumerate_contexts(const FeatureSpace& space);

// bundles everything derived from n
struct GameSpace {
  FeatureSpace space;
  std::vector<WorldState> states;
  std::vector<Context> contexts;
};
GameSpace build_game_space(int n);

double reward(const FeatureSpace& space, const WorldState& world, const Context& context, int action);
std::array<double, 3> action_rewards(const FeatureSpace& space, const WorldState& world,
                                     const Context& context);

// rescales so the best action scores 1 and a uniform-random chooser scores 0
// in expectation; all-equal action rewards score 1
double normalized_reward(double raw, const std::array<double, 3>& rewards);

// deterministic shuffle by seed; train gets round-half-up(fraction * total)
std::pair<std::vector<int>, std::vector<int>> split_world_states(size_t total, double fraction,
                                                                 uint64_t seed);

Game sample_game(const std::vector<int>& train_state_indices, size_t num_contexts, Rng& rng);

// debugging exports, one row per entity
void write_world_states_csv(std::ostream& os, const FeatureSpace& space,
                            const std::vector<WorldState>& states);
void write_contexts_csv(std::ostream& os, const FeatureSpace& space,
                        const std::vector<Context>& contexts);

}  // namespace sigbandit::env

#endif
