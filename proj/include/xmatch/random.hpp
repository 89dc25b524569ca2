#pragma once

#include <cstdint>
#include <random>

namespace xmatch {

/// Seeded random source passed explicitly to every sampling operation.
/// All library randomness flows through this type so runs are reproducible
/// from a single seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }

  double normal(double mean, double sigma) {
    return std::normal_distribution<double>(mean, sigma)(gen_);
  }

  /// Zero-mean normal truncated at +-trunc_sigmas standard deviations,
  /// rejection sampled.
  double truncated_normal(double sigma, double trunc_sigmas) {
    if (sigma <= 0.0) return 0.0;
    for (;;) {
      double x = normal(0.0, sigma);
      if (std::abs(x) <= trunc_sigmas * sigma) return x;
    }
  }

  uint64_t raw() { return gen_(); }

  /// Derive an independent child stream; used to hand deterministic
  /// per-trial seeds to parallel workers.
  Rng fork() { return Rng(gen_()); }

  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace xmatch
