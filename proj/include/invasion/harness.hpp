#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invasion/config.hpp"
#include "invasion/errors.hpp"
#include "invasion/mcmc.hpp"
#include "invasion/observation.hpp"

namespace invasion {

/// A failure inside a named pipeline stage ("load", "mcmc", "forecast", ...).
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct Dataset {
  std::vector<SampleRecord> samples;
  std::vector<SampleRecord> holdout;
};

/// `n` design points with dates uniform over [first, last], locations uniform
/// over the masked area and species uniform over the design's labels.
std::vector<DesignPoint> draw_design(const Model& model, int first, int last, int n,
                                     std::mt19937_64& rng);

/// Outcomes at given design points under the true parameters. Throws
/// CoverageError when a point predates the introduction.
std::vector<SampleRecord> simulate_at(const SimTruth& truth, const Model& model,
                                      std::span<const DesignPoint> points, std::mt19937_64& rng);

/// Draws the design (samples_per_year per started year of the window, plus
/// the holdout) and the outcomes.
Dataset generate_dataset(const SimTruth& truth, const Model& model, std::mt19937_64& rng);

/// `samples.csv`, `holdout.csv` (when present), `truth.ini` and one
/// `covariates/<layer>.asc` per layer.
void write_dataset(const std::filesystem::path& dir, const Model& model, const SimTruth& truth,
                   const Dataset& data);

struct ReplicateResult {
  std::string setting;
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  int n_samples = 0;
  int n_positive = 0;
  int t0_true = 0;
  double t0_median = 0.0;
  double t0_lower = 0.0;
  double t0_upper = 0.0;
  bool t0_covered = false;
  double t0_error = 0.0;                // median - truth, months
  std::vector<double> omega_error_km;   // per source
  std::vector<bool> omega_covered;      // per source
  double hpd_area_km2 = 0.0;
};

struct SettingReport {
  std::string name;
  int replicates = 0;
  int failures = 0;
  double t0_coverage = 0.0;
  double omega_coverage = 0.0;  // over all sources of all successful replicates
  double mean_t0_error = 0.0;
  double se_t0_error = 0.0;
  double mean_omega_error_km = 0.0;
};

struct ExperimentReport {
  double level = 0.9;
  std::vector<ReplicateResult> replicates;  // ordered by setting, then replicate
  std::vector<SettingReport> settings;
  std::vector<std::string> warnings;
};

struct ExperimentSetting {
  std::string name;
  RunConfig config;  // needs a [truth] section
};

/// One replicate: generate, fit, and score the 90% (config level) interval
/// for t0 and HPD region for the source locations. With several sources the
/// draws are ordered by x before point estimates are formed.
ReplicateResult run_replicate(const ExperimentSetting& setting, int replicate, std::uint64_t seed);

/// Runs every replicate of every setting on `threads` workers. Replicate
/// seeds derive from `seed`, the setting index and the replicate number, so
/// results do not depend on scheduling. Failed replicates are counted and
/// excluded from the aggregates.
ExperimentReport run_experiment(std::span<const ExperimentSetting> settings, int replicates,
                                std::uint64_t seed, int threads);

/// `replicates.csv`, `summary.csv` and `report.txt`.
void write_experiment(const std::filesystem::path& dir, const ExperimentReport& report);

/// Fit outputs under `dir`: chains/, summaries/, maps/, forecasts/ and
/// report.txt. Errors are rethrown as StageError.
void pipeline_fit(const RunConfig& config, const std::filesystem::path& dir);
/// Recomputes summaries/, maps/ and report.txt from chains/.
void pipeline_summarize(const RunConfig& config, const std::filesystem::path& dir);
/// Recomputes forecasts/ from chains/ and the holdout design.
void pipeline_forecast(const RunConfig& config, const std::filesystem::path& dir);

/// Prior window from the config, or the default window before the samples.
PriorSpec resolve_prior(const RunConfig& config, std::span<const SampleRecord> samples);

}  // namespace invasion
