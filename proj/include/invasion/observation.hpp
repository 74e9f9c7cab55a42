#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invasion/diffusion.hpp"
#include "invasion/grid.hpp"

namespace invasion {

/// Lower clamp for probabilities and intensities entering a logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

/// A sampling opportunity: where, when and which species.
struct DesignPoint {
  Point location;
  int date = 0;  // months since 1970-01
  std::string species;
};

/// One tested individual with outcome y (1 positive or suspect, 0 negative).
struct SampleRecord {
  Point location;
  int date = 0;
  std::string species;
  int y = 0;
};

/// One-hot species indicators, one column per species and no intercept.
class SusceptibilityDesign {
 public:
  explicit SusceptibilityDesign(std::vector<std::string> species_order);

  std::size_t size() const { return species_.size(); }
  const std::vector<std::string>& species() const { return species_; }
  /// Column of `species`; throws ConfigurationError for unknown labels.
  std::size_t index(const std::string& species) const;
  std::vector<double> encode(const std::string& species) const;

 private:
  std::vector<std::string> species_;
};

/// Standard normal CDF.
double normal_cdf(double x);

/// Standard-lognormal CDF: Phi(log v), 0 at v = 0. Throws DomainError for v < 0.
double inverse_link(double v);

/// Phi(log u + x'beta), the computational form of Phi(log(u e^{x'beta})).
double infection_probability(double u, double linear_susceptibility);
double infection_probability(double u, std::span<const double> x, std::span<const double> beta);

/// Bernoulli log-likelihood with p clamped to [1e-12, 1 - 1e-12].
/// Throws CoverageError for a sample outside the trajectory window.
double log_likelihood(std::span<const SampleRecord> samples, const IntensityTrajectory& trajectory,
                      std::span<const double> beta, const SusceptibilityDesign& design);

/// Log-likelihood contribution of one outcome at probability p.
double bernoulli_log_density(int y, double p);

/// Draws y ~ Bernoulli(p_i) at each design point.
std::vector<SampleRecord> simulate_samples(std::span<const DesignPoint> points,
                                           const IntensityTrajectory& trajectory,
                                           std::span<const double> beta,
                                           const SusceptibilityDesign& design, std::mt19937_64& rng);

/// Sample CSV `x_km,y_km,date,species,y` with dates as YYYY-MM.
std::vector<SampleRecord> read_samples_csv(const std::filesystem::path& path);
void write_samples_csv(const std::filesystem::path& path, std::span<const SampleRecord> samples);
/// Design CSV: the sample layout without (or ignoring) the `y` column.
std::vector<DesignPoint> read_design_csv(const std::filesystem::path& path);

}  // namespace invasion
