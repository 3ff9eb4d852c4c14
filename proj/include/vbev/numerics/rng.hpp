#pragma once

#include <cstdint>
#include <random>

namespace vbev {

// Seeded generator used for every random draw in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  std::uint64_t index(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_);
  }
  std::uint64_t next() { return eng_(); }

  // Derives an independent stream for a named sub-component.
  Rng fork(std::uint64_t salt) { return Rng(eng_() ^ (salt * 0x9E3779B97F4A7C15ull)); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace vbev
