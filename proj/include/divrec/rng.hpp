#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace divrec {

// Deterministic random source. All draws go through explicit helpers so a
// given seed reproduces the exact same sequence everywhere (std::shuffle and
// the std distributions are implementation-defined, so they are avoided).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // uniform double in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace divrec
