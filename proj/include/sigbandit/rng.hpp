#ifndef SIGBANDIT_RNG_HPP
#define SIGBANDIT_RNG_HPP

#include <cstdint>
#include <random>
#include <vector>

namespace sigbandit {

// Deterministic RNG used everywhere. Wraps mt19937_64 but derives doubles and
// bounded ints itself so sequences do not depend on libstdc++ distribution
// internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform on [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1), clamped away from both endpoints
  double uniform_open(double eps = 1e-12) {
    double u = uniform();
    if (u < eps) u = eps;
    if (u > 1.0 - eps) u = 1.0 - eps;
    return u;
  }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // uniform on [lo, hi)
  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard Gumbel(0,1) noise via inverse CDF
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices drawn uniformly from [0, n), in draw order
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      size_t j = i + static_cast<size_t>(uniform_int(static_cast<uint64_t>(n - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[j]);
      out.push_back(idx[static_cast<size_t>(i)]);
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer, used to derive independent sub-seeds from a run seed
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t sub_seed(uint64_t seed, uint64_t purpose, uint64_t index = 0) {
  return mix_seed(seed ^ mix_seed(purpose ^ mix_seed(index)));
}

}  // namespace sigbandit

#endif
