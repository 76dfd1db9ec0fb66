#include "sigbandit/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sigbandit/io_util.hpp"

namespace sigbandit::env {

FeatureSpace FeatureSpace::create(int n) {
  if (n < kMinValues || n > kMaxValues) {
    throw std::invalid_argument("FeatureSpace: n must be in [" + std::to_string(kMinValues) +
                                ", " + std::to_string(kMaxValues) + "], got " + std::to_string(n));
  }
  FeatureSpace s;
  s.n = n;
  double color_step = 12.0 / static_cast<double>(n - 1);
  double shape_step = 6.0 / static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) {
    s.color_rewards[static_cast<size_t>(i)] = -6.0 + color_step * static_cast<double>(i);
    s.shape_rewards[static_cast<size_t>(i)] = -3.0 + shape_step * static_cast<double>(i);
  }
  return s;
}

ObjectSpec object_from_id(int id, int n) {
  return ObjectSpec{static_cast<uint8_t>(id / n), static_cast<uint8_t>(id % n)};
}

void object_phi(const FeatureSpace& space, ObjectSpec obj, double* out) {
  std::fill(out, out + space.phi_dim(), 0.0);
  out[obj.color] = 1.0;
  out[space.n + obj.shape] = 1.0;
}

std::vector<double> object_phi(const FeatureSpace& space, ObjectSpec obj) {
  std::vector<double> phi(static_cast<size_t>(space.phi_dim()), 0.0);
  object_phi(space, obj, phi.data());
  return phi;
}

WorldState make_world_state(const FeatureSpace& space,
                            const std::array<uint8_t, kMaxValues>& color_assignment,
                            const std::array<uint8_t, kMaxValues>& shape_assignment) {
  WorldState w;
  w.color_assignment = color_assignment;
  w.shape_assignment = shape_assignment;
  for (int i = 0; i < space.n; ++i) {
    w.reward[static_cast<size_t>(i)] = space.color_rewards[color_assignment[static_cast<size_t>(i)]];
    w.reward[static_cast<size_t>(space.n + i)] =
        space.shape_rewards[shape_assignment[static_cast<size_t>(i)]];
  }
  return w;
}

std::vector<WorldState> enumerate_world_states(const FeatureSpace& space) {
  int n = space.n;
  std::vector<std::array<uint8_t, kMaxValues>> perms;
  std::array<uint8_t, kMaxValues> p{};
  std::iota(p.begin(), p.begin() + n, static_cast<uint8_t>(0));
  do {
    perms.push_back(p);
  } while (std::next_permutation(p.begin(), p.begin() + n));

  std::vector<WorldState> states;
  states.reserve(perms.size() * perms.size());
  for (const auto& cp : perms) {
    for (const auto& sp : perms) {
      states.push_back(make_world_state(space, cp, sp));
    }
  }
  return states;
}

std::vector<Context> enumerate_contexts(const FeatureSpace& space) {
  int m = space.num_objects();
  if (m < kContextSize) {
    throw std::invalid_argument("enumerate_contexts: need at least 3 objects, have " + std::to_string(m));
  }
  std::vector<Context> out;
  out.reserve(static_cast<size_t>(m) * (m - 1) * (m - 2) / 6);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      for (int k = j + 1; k < m; ++k) {
        Context c;
        c.objects = {static_cast<uint8_t>(i), static_cast<uint8_t>(j), static_cast<uint8_t>(k)};
        out.push_back(c);
      }
    }
  }
  return out;
}

GameSpace build_game_space(int n) {
  GameSpace gs;
  gs.space = FeatureSpace::create(n);
  gs.states = enumerate_world_states(gs.space);
  gs.contexts = enumerate_contexts(gs.space);
  return gs;
}

double reward(const FeatureSpace& space, const WorldState& world, const Context& context, int action) {
  if (action < 0 || action >= kContextSize) {
    throw std::invalid_argument("reward: action must be in [0, 3), got " + std::to_string(action));
  }
  ObjectSpec o = context.object(action, space.n);
  return world.color_reward(o.color) + world.shape_reward(space, o.shape);
}

std::array<double, 3> action_rewards(const FeatureSpace& space, const WorldState& world,
                                     const Context& context) {
  return {reward(space, world, context, 0), reward(space, world, context, 1),
          reward(space, world, context, 2)};
}

double normalized_reward(double raw, const std::array<double, 3>& rewards) {
  double mean = (rewards[0] + rewards[1] + rewards[2]) / 3.0;
  double mx = std::max(rewards[0], std::max(rewards[1], rewards[2]));
  double denom = mx - mean;
  if (denom <= 0.0) return 1.0;  // all three actions tie
  return (raw - mean) / denom;
}

std::pair<std::vector<int>, std::vector<int>> split_world_states(size_t total, double fraction,
                                                                 uint64_t seed) {
  if (total == 0) throw std::invalid_argument("split_world_states: empty state list");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_world_states: fraction must be in (0, 1), got " +
                                format_double(fraction));
  }
  size_t n_train = static_cast<size_t>(std::floor(fraction * static_cast<double>(total) + 0.5));
  if (n_train == 0 || n_train >= total) {
    throw std::invalid_argument("split_world_states: fraction " + format_double(fraction) +
                                " leaves an empty side for " + std::to_string(total) + " states");
  }
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<int> train(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(n_train));
  std::vector<int> val(idx.begin() + static_cast<ptrdiff_t>(n_train), idx.end());
  return {std::move(train), std::move(val)};
}

Game sample_game(const std::vector<int>& train_state_indices, size_t num_contexts, Rng& rng) {
  if (train_state_indices.empty() || num_contexts == 0) {
    throw std::invalid_argument("sample_game: empty state or context list");
  }
  Game g;
  g.world_index = train_state_indices[rng.uniform_int(train_state_indices.size())];
  g.context_index = static_cast<int>(rng.uniform_int(num_contexts));
  return g;
}

void write_world_states_csv(std::ostream& os, const FeatureSpace& space,
                            const std::vector<WorldState>& states) {
  os << "state_id";
  for (int i = 0; i < space.n; ++i) os << ",color_" << i;
  for (int i = 0; i < space.n; ++i) os << ",shape_" << i;
  os << "\n";
  for (size_t s = 0; s < states.size(); ++s) {
    os << s;
    for (int i = 0; i < 2 * space.n; ++i) {
      os << ',' << format_double(states[s].reward[static_cast<size_t>(i)]);
    }
    os << "\n";
  }
}

void write_contexts_csv(std::ostream& os, const FeatureSpace& space,
                        const std::vector<Context>& contexts) {
  os << "context_id,obj0_color,obj0_shape,obj1_color,obj1_shape,obj2_color,obj2_shape\n";
  for (size_t c = 0; c < contexts.size(); ++c) {
    os << c;
    for (int slot = 0; slot < kContextSize; ++slot) {
      ObjectSpec o = contexts[c].object(slot, space.n);
      os << ',' << static_cast<int>(o.color) << ',' << static_cast<int>(o.shape);
    }
    os << "\n";
  }
}

}  // namespace sigbandit::env
