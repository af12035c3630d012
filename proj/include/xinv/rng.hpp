#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace xinv {

// All randomness in the project flows through one seeded engine type so a
// (seed, machine) pair reproduces runs bit-for-bit. std::mt19937_64 plus the
// libstdc++ distributions are stable on one machine configuration, which is
// the determinism contract we make.
class Rng {
 public:
  explicit Rng(uint64_t seed) : g_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(g_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(g_);
  }
  int64_t uniform_int(int64_t n) {  // [0, n)
    std::uniform_int_distribution<int64_t> d(0, n - 1);
    return d(g_);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), g_);
  }

  std::mt19937_64& engine() { return g_; }

 private:
  std::mt19937_64 g_;
};

// Stream substreams off a base seed without correlating them.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace xinv
