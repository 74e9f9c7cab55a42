#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "invasion/grid.hpp"

namespace invasion {

namespace detail {
class PaddedKernel;
}

/// Fine-scale diffusion and growth rates with their coarse homogenized form.
struct RateFields {
  std::vector<double> mu;      // km^2/month, > 0 on the mask
  std::vector<double> lambda;  // 1/month, any sign
  HomogenizedField homogenized;
};

RateFields make_rate_fields(const GridSpec& grid, std::vector<double> mu,
                            std::vector<double> lambda);

/// mu(s) = exp(alpha0 + z(s)'alpha) over the named layers. Out-of-mask
/// cells are 0. Throws ConfigurationError for a missing layer or a length
/// mismatch between `alpha` and `layers`.
std::vector<double> diffusion_field(double alpha0, std::span<const double> alpha,
                                    std::span<const std::string> layers,
                                    const CovariateRaster& covariates);

/// lambda(s) = gamma0 + w(s)'gamma over the named layers.
std::vector<double> growth_field(double gamma0, std::span<const double> gamma,
                                 std::span<const std::string> layers,
                                 const CovariateRaster& covariates);

/// Point-source introduction of `theta` particles at `omega` on month `t0`.
struct IntroductionEvent {
  Point omega;
  double t0 = 0.0;
  double theta = 1.0;
};

struct SolverSettings {
  int steps_per_month = 30;
  int frame_stride_months = 1;
};

/// Solved intensity on the fine grid at the saved frame times.
struct IntensityTrajectory {
  GridSpec grid;
  double t_start = 0.0;
  double t_end = 0.0;
  double dt = 0.0;  // effective step after any halving
  std::vector<double> frame_times;
  std::vector<std::vector<double>> frames;         // fine u per frame
  std::vector<std::vector<double>> coarse_frames;  // homogenized c-bar; empty for the fine oracle

  /// Nearest saved frame; throws CoverageError outside [t_start, t_end].
  std::size_t nearest_frame(double month) const;
  /// u at a location and date; throws DomainError outside the mask.
  double intensity_at(const Point& p, double month) const;
};

/// Coarse initial state: each event adds theta * mu_bar / A to its coarse
/// cell, where A is the masked area of that cell, so the downscaled mass of
/// the cell equals theta. Throws DomainError for events outside the mask and
/// ConfigurationError when events disagree on t0.
std::vector<double> initialize_intensity(std::span<const IntroductionEvent> events,
                                         const RateFields& rates, const GridSpec& grid);

/// u(s) = c-bar(parent of s) / mu(s) on masked cells, 0 elsewhere.
std::vector<double> downscale_intensity(std::span<const double> cbar, const RateFields& rates,
                                        const GridSpec& grid);

/// Sum of u * (fine cell area) over `region`. Throws DomainError if the
/// region leaves the mask.
double integrate_intensity(std::span<const double> u, std::span<const std::size_t> region,
                           const GridSpec& grid);
double integrate_intensity(std::span<const double> u, const GridSpec& grid);

/// Forward-Euler solve of dc/dt = mu_bar * Lap(c) + lambda_bar * c on the
/// coarse grid with zero Dirichlet values outside the mask and the extent.
/// The step is halved until the explicit scheme is positivity-preserving.
IntensityTrajectory solve_homogenized(std::span<const IntroductionEvent> events,
                                      const RateFields& rates, const GridSpec& grid, double t_end,
                                      const SolverSettings& settings = {});

/// Direct forward-Euler solve of du/dt = Lap(mu u) + lambda u on the fine
/// grid, seeded with the same downscaled initial state as the homogenized
/// solver. Limited to grids of at most 128 x 128 fine cells.
IntensityTrajectory solve_fine_oracle(std::span<const IntroductionEvent> events,
                                      const RateFields& rates, const GridSpec& grid, double t_end,
                                      const SolverSettings& settings = {});

/// Writes one `u_<YYYY-MM>.asc` raster per saved frame into `dir`.
void export_trajectory(const std::filesystem::path& dir, const IntensityTrajectory& trajectory);

/// Largest step (months) the coarse scheme accepts for these rates.
double coarse_stable_dt(const RateFields& rates, const GridSpec& grid);
/// Effective step: 1/steps_per_month halved until stable.
double effective_dt(double stable_dt, int steps_per_month);

/// Response to a unit-mass source in one coarse cell, kept at whole-month
/// lags after the introduction. The equation is autonomous, so the
/// intensity at lag L after any introduction date is read from frame L.
/// Frames are produced on demand and the sequence of Euler steps is the same
/// as solve_homogenized's, so values agree with it up to the scaling by theta.
class UnitResponse {
 public:
  UnitResponse(const GridSpec& grid, const RateFields& rates, std::size_t seed_coarse,
               int steps_per_month);
  ~UnitResponse();
  UnitResponse(UnitResponse&&) noexcept;
  UnitResponse& operator=(UnitResponse&&) noexcept;

  /// Extends the stored frames through `lag`. Throws NumericalBlowup.
  void extend_to(int lag);
  int max_lag() const { return static_cast<int>(frames_.size()) - 1; }
  /// c-bar at a coarse cell `lag` months after introduction (lag >= 0).
  double coarse_value(int lag, std::size_t coarse) const {
    return frames_[static_cast<std::size_t>(lag)][coarse];
  }
  std::size_t seed_coarse() const { return seed_; }
  double dt() const { return dt_; }

 private:
  std::size_t seed_;
  int substeps_per_month_ = 0;
  double dt_ = 0.0;
  int rows_ = 0;
  int cols_ = 0;
  std::unique_ptr<detail::PaddedKernel> kernel_;  // holds the latest state
  std::vector<std::vector<double>> frames_;
  long steps_taken_ = 0;
};

}  // namespace invasion
