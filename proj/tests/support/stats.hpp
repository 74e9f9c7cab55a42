#pragma once

#include <functional>
#include <span>
#include <vector>

namespace teststats {

double mean(std::span<const double> v);
double variance(std::span<const double> v);  // unbiased

/// Asymptotic Kolmogorov tail probability for statistic `d` with effective
/// size `n`, using the Stephens small-sample correction.
double kolmogorov_pvalue(double d, double n);

/// Two-sample Kolmogorov-Smirnov statistic and p-value.
struct KsResult {
  double statistic = 0.0;
  double pvalue = 0.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);
KsResult ks_one_sample(std::vector<double> a, const std::function<double(double)>& cdf);

/// Pearson chi-square goodness of fit; degrees of freedom = cells - 1.
struct ChiSquareResult {
  double statistic = 0.0;
  double pvalue = 0.0;
  int dof = 0;
};
ChiSquareResult chi_square_gof(std::span<const double> observed, std::span<const double> expected);

/// Monte Carlo standard error of the mean using batch means.
double batch_means_se(std::span<const double> v, int batches = 50);

}  // namespace teststats
