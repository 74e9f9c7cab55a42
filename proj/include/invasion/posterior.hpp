#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invasion/grid.hpp"
#include "invasion/mcmc.hpp"
#include "invasion/observation.hpp"

namespace invasion {

struct ScalarSummary {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct PosteriorSummary {
  double level = 0.9;
  std::vector<ScalarSummary> parameters;
  std::map<int, double> year_pmf;  // calendar year of t0 -> probability
};

/// Quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);
/// Mean, median and equal-tailed interval at `level`.
ScalarSummary summarize_scalar(std::string name, std::span<const double> draws, double level);
/// Fraction of t0 draws (months since 1970-01) in each calendar year.
std::map<int, double> year_pmf(std::span<const int> t0_draws);

/// Pools draws across chains. Throws ConfigurationError with fewer than 100
/// draws in total.
PosteriorSummary summarize_marginals(const Model& model, std::span<const ChainOutput> chains,
                                     double level = 0.9);

/// Histogram of the source locations on fine cells, normalized to sum 1.
/// With several sources every source location contributes. The optional
/// smoothing uses a Gaussian kernel with a one-cell bandwidth.
std::vector<double> location_posterior_map(std::span<const ChainOutput> chains,
                                           const GridSpec& grid, bool smooth = false);

struct CredibleRegion {
  std::vector<std::size_t> cells;  // sorted fine-cell indices
  double level = 0.0;              // attained probability mass
  double area_km2 = 0.0;

  bool contains(std::size_t cell) const;
};

/// Greedy highest-mass region: cells in decreasing mass order (ties by
/// row-major index) until the cumulative mass reaches `level`.
CredibleRegion hpd_region(std::span<const double> map, const GridSpec& grid, double level);

struct ExceedanceRegion {
  CredibleRegion region;
  double max_distance_km = 0.0;  // farthest region cell centre from the reference
  double bearing_deg = 0.0;      // compass bearing of that cell, clockwise from north
};

/// All positive-mass cells with mass at least that of the reference cell.
ExceedanceRegion exceedance_region(std::span<const double> map, const GridSpec& grid,
                                   const Point& reference);

struct RateMaps {
  std::vector<double> mu_mean;
  std::vector<double> lambda_mean;
};

RateMaps posterior_rate_maps(const Model& model, std::span<const ChainOutput> chains);

struct ForecastRecord {
  DesignPoint point;
  double p_mean = 0.0;
  int label = 0;
  std::string error;  // non-empty when the record could not be scored
};

struct ForecastResult {
  std::vector<ForecastRecord> records;
  std::size_t draws_used = 0;
};

/// Label rule: positive when the probability is at least 0.5.
inline int forecast_label(double p) { return p >= 0.5 ? 1 : 0; }

/// Posterior-mean infection probability at each design point, averaged over
/// `max_draws` evenly spaced retained draws (all draws when fewer).
ForecastResult forecast(const Model& model, std::span<const ChainOutput> chains,
                        std::span<const DesignPoint> holdout, std::size_t max_draws = 500);

/// Fraction of labels that disagree with `truth`.
double misclassification_rate(std::span<const int> labels, std::span<const int> truth);
double misclassification_rate(const ForecastResult& result, std::span<const int> truth);

struct LogisticFit {
  Eigen::VectorXd coefficients;  // full length; dropped columns are 0
  std::vector<bool> dropped;
  std::vector<double> deviance_trace;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Logistic regression by iteratively reweighted least squares with step
/// halving. Aliased columns are dropped; coefficients are capped at |20|.
LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         int max_iterations = 50, double tolerance = 1e-8);
Eigen::VectorXd predict_logistic(const LogisticFit& fit, const Eigen::MatrixXd& x);

struct GlmBaseline {
  LogisticFit fit;
  std::vector<std::string> columns;
  std::vector<double> predictions;
};

/// Intercept, covariates at the sample cells and species indicators (first
/// species as reference) fitted to `train`, then predicted at `test`.
GlmBaseline glm_baseline(std::span<const SampleRecord> train, const CovariateRaster& covariates,
                         std::span<const std::string> layers, const SusceptibilityDesign& design,
                         std::span<const DesignPoint> test);

}  // namespace invasion
