#pragma once

#include <cstdint>
#include <random>

namespace invasion {

/// Independent stream seed from a master seed and a stream number.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Draw from N(mean, 1) truncated to (0, inf).
double truncated_normal_positive(double mean, std::mt19937_64& rng);
/// Draw from N(mean, 1) truncated to (-inf, 0].
inline double truncated_normal_nonpositive(double mean, std::mt19937_64& rng) {
  return -truncated_normal_positive(-mean, rng);
}

}  // namespace invasion
