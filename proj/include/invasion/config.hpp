#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invasion/grid.hpp"
#include "invasion/mcmc.hpp"

namespace invasion {

/// Where and how many synthetic samples to draw.
struct SamplingDesign {
  int first = 0;  // months since 1970-01, inclusive
  int last = 0;
  int samples_per_year = 100;
  int holdout_first = 0;
  int holdout_last = -1;  // holdout disabled when last < first
  int holdout_samples = 0;
};

/// Known parameter values and sampling design of a synthetic setting.
struct SimTruth {
  ParameterState state;
  SamplingDesign design;
};

/// One run's settings, read from an INI-style file with sections
/// [grid] [covariates] [model] [prior] [mcmc] [data] [output] [truth]
/// [design] [experiment]. Relative paths resolve against the file's folder.
struct RunConfig {
  std::filesystem::path source;

  Extent extent;
  double fine_size = 10.0;
  double coarse_size = 100.0;
  std::optional<std::filesystem::path> mask_path;

  std::map<std::string, std::filesystem::path> layer_paths;
  std::string synthetic;  // "", "smooth" or "patchy"
  std::uint64_t synthetic_seed = 1;
  std::vector<std::string> synthetic_layers;

  std::vector<std::string> diffusion_layers;
  std::vector<std::string> growth_layers;
  std::vector<std::string> species;
  int steps_per_month = 30;
  int n_events = 1;

  PriorSpec prior;
  bool prior_window_set = false;

  MCMCConfig mcmc;

  std::optional<std::filesystem::path> samples_path;
  std::optional<std::filesystem::path> holdout_path;
  std::optional<Point> reference;

  double level = 0.9;
  std::size_t forecast_draws = 500;
  int frame_stride = 1;
  bool export_trajectory = false;

  std::optional<SimTruth> truth;

  int replicates = 0;
  std::vector<std::filesystem::path> settings;
};

/// Parses and validates a config file. Every error names the file, section
/// and key. Referenced input files must exist.
RunConfig load_config(const std::filesystem::path& path);

/// Builds the grid (applying the mask raster) and covariate layers.
CovariateRaster load_covariates(const RunConfig& config);
Model build_model(const RunConfig& config);

/// Synthetic covariate layer with values in [0, 1]. "smooth" layers are
/// low-frequency waves; "patchy" layers are 0/1 indicators of random blobs.
std::vector<double> synthetic_layer(const GridSpec& grid, const std::string& kind,
                                    std::uint64_t seed, std::size_t layer_index);

/// Writes a truth sidecar in the same INI dialect ([truth] and [design]).
void write_truth_file(const std::filesystem::path& path, const Model& model, const SimTruth& truth);

}  // namespace invasion
