#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invasion/diffusion.hpp"
#include "invasion/grid.hpp"
#include "invasion/observation.hpp"

namespace invasion {

/// Everything about the model that is fixed during a fit.
struct Model {
  CovariateRaster covariates;
  std::vector<std::string> diffusion_layers;  // z(s)
  std::vector<std::string> growth_layers;     // w(s)
  SusceptibilityDesign design;
  int steps_per_month = 30;
  int n_events = 1;  // J, fixed and known

  const GridSpec& grid() const { return covariates.grid(); }
};

struct Source {
  Point omega;
  double theta = 1.0;
};

/// Full parameter vector. All sources share the introduction month t0.
struct ParameterState {
  double alpha0 = 0.0;
  std::vector<double> alpha;
  double gamma0 = 0.0;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<Source> sources;
  int t0 = 0;  // months since 1970-01
};

RateFields rate_fields(const Model& model, const ParameterState& state);
std::vector<IntroductionEvent> introduction_events(const ParameterState& state);
/// Throws DomainError/ConfigurationError when the state breaks an invariant.
void validate_state(const Model& model, const ParameterState& state);

struct PriorSpec {
  double sigma_beta = 2.5;
  double sigma_regression = 2.5;  // alpha0, alpha
  double sigma_growth = 2.5;      // gamma0, gamma
  double theta_log_mean = 0.0;
  double theta_log_sd = 1.0;
  int t0_first = 0;  // inclusive window, whole months
  int t0_last = 0;

  /// Default window: the 360 months before the first sample.
  static PriorSpec with_default_window(std::span<const SampleRecord> samples);
  int window_size() const { return t0_last - t0_first + 1; }
  /// Throws ConfigurationError when scales are not positive, the window is
  /// empty or it does not end before `first_sample`.
  void validate(int first_sample) const;
};

double log_prior(const PriorSpec& prior, const Model& model, const ParameterState& state);
ParameterState draw_from_prior(const PriorSpec& prior, const Model& model, std::mt19937_64& rng);

struct ProposalScales {
  double alpha = 0.05;
  double gamma = 0.005;
  double log_theta = 0.3;
  double omega_km = 20.0;
  double t0_months = 3.0;
};

struct MCMCConfig {
  int n_chains = 3;
  long n_iterations = 20000;
  long n_burnin = 5000;
  long thin = 10;
  std::uint64_t seed = 1;
  bool adapt = true;
  ProposalScales scales;
  double local_move_prob = 0.9;
  int init_draws = 50;         // scored starting candidates per chain
  int init_pilots = 4;         // best candidates given a pilot run
  long pilot_iterations = 250;  // adaptive iterations per pilot, before burn-in
  bool use_likelihood = true;
  int threads = 1;

  void validate() const;
  long retained_per_chain() const { return (n_iterations - n_burnin) / thin; }
};

struct BlockStats {
  std::string name;
  long proposed = 0;
  long accepted = 0;
  double scale = 0.0;  // final proposal scale
  double rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
};

struct Draw {
  long iter = 0;
  ParameterState state;
  double log_post = 0.0;
};

struct ChainOutput {
  int chain_id = 0;
  std::vector<Draw> draws;
  std::vector<BlockStats> acceptance;  // counted after burn-in
  long solver_failures = 0;
  std::vector<std::string> warnings;
};

/// Per-sample quantities fixed by the data.
struct SampleIndex {
  std::vector<std::size_t> fine_cell;
  std::vector<std::size_t> coarse_cell;
  std::vector<int> species;
  std::vector<int> date;
  std::vector<int> y;
  int first_date = 0;
  int last_date = 0;

  /// Throws DomainError for samples outside the mask.
  static SampleIndex build(const Model& model, std::span<const SampleRecord> samples);
};

/// Gibbs draw of beta given intensities at the samples. Latent
/// h_i ~ N(log u_i + x_i'beta, 1) truncated to (0, inf) for y_i = 1 and
/// (-inf, 0] for y_i = 0; then beta | h is conjugate normal with offset
/// log u_i. Intensities are floored at 1e-12.
std::vector<double> update_beta(std::span<const double> beta, std::span<const double> intensity,
                                std::span<const int> species, std::span<const int> y,
                                double sigma_beta, std::mt19937_64& rng);

/// Sampler state for one chain. Each update is one Metropolis-within-Gibbs
/// block; solves are cached per source as unit responses at monthly lags.
class ChainSampler {
 public:
  ChainSampler(const Model& model, std::span<const SampleRecord> samples, const PriorSpec& prior,
               const MCMCConfig& config, ParameterState initial, std::uint64_t seed);
  ~ChainSampler();
  ChainSampler(ChainSampler&&) noexcept;

  void update_beta();
  /// Replaces beta by its conditional posterior mode given the current
  /// intensities. Used to score candidate starting states.
  void set_beta_to_conditional_mode();
  void update_dynamics();
  void update_introduction();
  void iterate() {
    update_beta();
    update_dynamics();
    update_introduction();
  }

  void set_adapting(bool on);
  /// Resets acceptance counters, keeping proposal scales.
  void reset_counters();

  const ParameterState& state() const;
  double log_posterior() const;
  double log_likelihood() const;
  std::vector<BlockStats> stats() const;
  long solver_failures() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs `config.n_chains` independent chains, concurrently when
/// `config.threads > 1`. Output depends only on the inputs and seed.
std::vector<ChainOutput> run_mcmc(std::span<const SampleRecord> samples, const Model& model,
                                  const PriorSpec& prior, const MCMCConfig& config);

/// Column names for the scalar parameters, in CSV order.
std::vector<std::string> parameter_names(const Model& model);
std::vector<double> flatten(const ParameterState& state);
ParameterState unflatten(const Model& model, std::span<const double> values);

void write_chain_csv(const std::filesystem::path& path, const Model& model,
                     const ChainOutput& chain);
ChainOutput read_chain_csv(const std::filesystem::path& path, const Model& model);

struct ParameterDiagnostics {
  std::string name;
  double rhat = 0.0;  // NaN when undefined
  double ess = 0.0;   // NaN when undefined
  bool rhat_defined = false;
  bool ess_defined = false;
};

struct DiagnosticsReport {
  std::vector<ParameterDiagnostics> parameters;
  std::vector<std::vector<BlockStats>> acceptance;  // per chain
  std::vector<std::string> warnings;
};

/// Split-Rhat (needs >= 2 chains) of one scalar across chains.
double split_rhat(std::span<const std::vector<double>> chains);
/// Effective sample size summed over chains; each chain's autocorrelation
/// sum stops at the first pair of lags whose sum is negative.
double effective_sample_size(std::span<const std::vector<double>> chains);

DiagnosticsReport chain_diagnostics(const Model& model, std::span<const ChainOutput> chains);

}  // namespace invasion
