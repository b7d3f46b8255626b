#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ctbcf {

/// Per-chain random stream. Everything a chain draws goes through one of
/// these, so a chain's trajectory depends only on its seed.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return unif_(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Gamma(shape, scale = 1).
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  /// Uniform integer in [0, n).
  int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }

  /// Normal(mean, sd^2) restricted to (0, inf).
  double truncated_normal_positive(double mean, double sd);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 step; used to derive independent per-chain seeds from one seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double RandomSource::truncated_normal_positive(double mean, double sd) {
  // Standardized lower bound.
  const double a = -mean / sd;
  if (a < 0.5) {
    // Acceptance probability at least Phi(-0.5) ~ 0.31.
    for (;;) {
      const double x = normal();
      if (x > a) return mean + sd * x;
    }
  }
  // Robert (1995) exponential proposal for the far tail.
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double x = a - std::log(1.0 - uniform()) / lambda;
    const double rho = std::exp(-0.5 * (x - lambda) * (x - lambda));
    if (uniform() <= rho) return mean + sd * x;
  }
}

}  // namespace ctbcf
