#include "invasion/random.hpp"

#include <cmath>

namespace invasion {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Standard normal truncated to (a, inf).
double tail_normal(double a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (a < 0.5) {
    std::normal_distribution<double> norm;
    for (;;) {
      double z = norm(rng);
      if (z > a) return z;
    }
  }
  // Exponential rejection sampler with the optimal rate for the tail.
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    double z = a - std::log1p(-unif(rng)) / rate;
    double d = z - rate;
    if (unif(rng) <= std::exp(-0.5 * d * d)) return z;
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x5851f42d4c957f2dULL));
}

double truncated_normal_positive(double mean, std::mt19937_64& rng) {
  return mean + tail_normal(-mean, rng);
}

}  // namespace invasion
