#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace samlab {

/// SplitMix64 finalizer. Used to derive independent child seeds:
/// child = mix_seed(base, index). Two calls with equal arguments always agree.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

/// Seeded stream with platform-independent samplers. std:: distributions are
/// implementation-defined, so uniform, normal and shuffle are done here on top
/// of mt19937_64 whose output sequence is fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Marsaglia polar method, cached pair).
  double normal();
  /// ±1 with equal probability.
  double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace samlab
