#include "invasion/mcmc.hpp"

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "invasion/errors.hpp"
#include "invasion/random.hpp"

namespace invasion {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kRobbinsMonroExponent = 0.6;
constexpr double kMaxScaleRatio = 100.0;

double normal_logpdf_kernel(double x, double sd) { return -0.5 * (x / sd) * (x / sd); }

double sample_log_likelihood(std::span<const double> u, const SampleIndex& idx,
                             std::span<const double> beta) {
  double ll = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double ui = std::max(u[i], kProbabilityFloor);
    double p = normal_cdf(std::log(ui) + beta[static_cast<std::size_t>(idx.species[i])]);
    ll += bernoulli_log_density(idx.y[i], p);
  }
  return ll;
}

}  // namespace

RateFields rate_fields(const Model& model, const ParameterState& state) {
  return make_rate_fields(
      model.grid(),
      diffusion_field(state.alpha0, state.alpha, model.diffusion_layers, model.covariates),
      growth_field(state.gamma0, state.gamma, model.growth_layers, model.covariates));
}

std::vector<IntroductionEvent> introduction_events(const ParameterState& state) {
  std::vector<IntroductionEvent> ev;
  for (const auto& s : state.sources) ev.push_back({s.omega, static_cast<double>(state.t0), s.theta});
  return ev;
}

void validate_state(const Model& model, const ParameterState& state) {
  if (state.alpha.size() != model.diffusion_layers.size() ||
      state.gamma.size() != model.growth_layers.size() || state.beta.size() != model.design.size() ||
      state.sources.size() != static_cast<std::size_t>(model.n_events)) {
    throw ConfigurationError("parameter state does not match the model dimensions");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  bool ok = finite(state.alpha0) && finite(state.gamma0) &&
            std::all_of(state.alpha.begin(), state.alpha.end(), finite) &&
            std::all_of(state.gamma.begin(), state.gamma.end(), finite) &&
            std::all_of(state.beta.begin(), state.beta.end(), finite);
  if (!ok) throw DomainError("parameter state has non-finite entries");
  for (const auto& s : state.sources) {
    if (!(s.theta > 0.0) || !std::isfinite(s.theta)) throw DomainError("theta must be positive");
    if (!model.grid().locate_masked(s.omega)) throw DomainError("source outside the mask");
  }
}

PriorSpec PriorSpec::with_default_window(std::span<const SampleRecord> samples) {
  if (samples.empty()) throw ConfigurationError("no samples");
  int first = samples.front().date;
  for (const auto& s : samples) first = std::min(first, s.date);
  PriorSpec p;
  p.t0_last = first - 1;
  p.t0_first = first - 360;
  return p;
}

void PriorSpec::validate(int first_sample) const {
  if (!(sigma_beta > 0.0) || !(sigma_regression > 0.0) || !(sigma_growth > 0.0) ||
      !(theta_log_sd > 0.0)) {
    throw ConfigurationError("prior scales must be positive");
  }
  if (t0_last < t0_first) throw ConfigurationError("t0 prior window is empty");
  if (t0_last >= first_sample) {
    throw ConfigurationError("t0 prior window must end before the first sample date");
  }
}

double log_prior(const PriorSpec& prior, const Model& model, const ParameterState& state) {
  if (state.t0 < prior.t0_first || state.t0 > prior.t0_last) return kNegInf;
  double lp = normal_logpdf_kernel(state.alpha0, prior.sigma_regression) +
              normal_logpdf_kernel(state.gamma0, prior.sigma_growth);
  for (double a : state.alpha) lp += normal_logpdf_kernel(a, prior.sigma_regression);
  for (double g : state.gamma) lp += normal_logpdf_kernel(g, prior.sigma_growth);
  for (double b : state.beta) lp += normal_logpdf_kernel(b, prior.sigma_beta);
  for (const auto& s : state.sources) {
    if (!(s.theta > 0.0) || !model.grid().locate_masked(s.omega)) return kNegInf;
    double lt = std::log(s.theta);
    lp += -lt + normal_logpdf_kernel(lt - prior.theta_log_mean, prior.theta_log_sd);
  }
  return lp;
}

namespace {

std::vector<std::size_t> masked_cells(const GridSpec& grid) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < grid.fine_count(); ++i) {
    if (grid.inside(i)) cells.push_back(i);
  }
  return cells;
}

Point uniform_in_cell(const GridSpec& grid, std::size_t cell, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  Point c = grid.center(cell);
  double h = grid.fine_size();
  // Keep strictly inside the cell so locate() maps back to it.
  return {c.x + 0.999999 * h * unif(rng), c.y + 0.999999 * h * unif(rng)};
}

}  // namespace

ParameterState draw_from_prior(const PriorSpec& prior, const Model& model, std::mt19937_64& rng) {
  std::normal_distribution<double> norm;
  ParameterState s;
  s.alpha0 = prior.sigma_regression * norm(rng);
  for (std::size_t k = 0; k < model.diffusion_layers.size(); ++k) {
    s.alpha.push_back(prior.sigma_regression * norm(rng));
  }
  s.gamma0 = prior.sigma_growth * norm(rng);
  for (std::size_t k = 0; k < model.growth_layers.size(); ++k) {
    s.gamma.push_back(prior.sigma_growth * norm(rng));
  }
  for (std::size_t k = 0; k < model.design.size(); ++k) s.beta.push_back(prior.sigma_beta * norm(rng));
  auto cells = masked_cells(model.grid());
  std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
  for (int j = 0; j < model.n_events; ++j) {
    Source src;
    src.omega = uniform_in_cell(model.grid(), cells[pick(rng)], rng);
    src.theta = std::exp(prior.theta_log_mean + prior.theta_log_sd * norm(rng));
    s.sources.push_back(src);
  }
  std::uniform_int_distribution<int> month(prior.t0_first, prior.t0_last);
  s.t0 = month(rng);
  return s;
}

void MCMCConfig::validate() const {
  if (n_chains < 1) throw ConfigurationError("n_chains must be at least 1");
  if (n_iterations < 1 || n_burnin < 0 || n_burnin >= n_iterations) {
    throw ConfigurationError("need 0 <= n_burnin < n_iterations");
  }
  if (thin < 1) throw ConfigurationError("thin must be at least 1");
  if (local_move_prob < 0.0 || local_move_prob > 1.0) {
    throw ConfigurationError("local_move_prob must lie in [0, 1]");
  }
  if (scales.alpha < 0 || scales.gamma < 0 || scales.log_theta < 0 || scales.omega_km < 0 ||
      scales.t0_months < 0) {
    throw ConfigurationError("proposal scales must be non-negative");
  }
  if (init_draws < 1) throw ConfigurationError("init_draws must be at least 1");
  if (init_pilots < 1) throw ConfigurationError("init_pilots must be at least 1");
  if (pilot_iterations < 0) throw ConfigurationError("pilot_iterations must be non-negative");
  if (threads < 1) throw ConfigurationError("threads must be at least 1");
}

SampleIndex SampleIndex::build(const Model& model, std::span<const SampleRecord> samples) {
  if (samples.empty()) throw ConfigurationError("no samples to fit");
  SampleIndex idx;
  idx.first_date = samples.front().date;
  idx.last_date = samples.front().date;
  for (const auto& s : samples) {
    auto cell = model.grid().locate_masked(s.location);
    if (!cell) throw DomainError("sample location outside the study-area mask");
    idx.fine_cell.push_back(*cell);
    idx.coarse_cell.push_back(model.grid().coarse_of(*cell));
    idx.species.push_back(static_cast<int>(model.design.index(s.species)));
    idx.date.push_back(s.date);
    idx.y.push_back(s.y ? 1 : 0);
    idx.first_date = std::min(idx.first_date, s.date);
    idx.last_date = std::max(idx.last_date, s.date);
  }
  return idx;
}

std::vector<double> update_beta(std::span<const double> beta, std::span<const double> intensity,
                                std::span<const int> species, std::span<const int> y,
                                double sigma_beta, std::mt19937_64& rng) {
  const auto p = static_cast<Eigen::Index>(beta.size());
  const std::size_t n = intensity.size();
  // With one indicator per sample, X'X is diagonal (counts per species).
  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(p, p) / (sigma_beta * sigma_beta);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(species[i]);
    const double offset = std::log(std::max(intensity[i], kProbabilityFloor));
    const double mean = offset + beta[static_cast<std::size_t>(k)];
    const double h = y[i] ? truncated_normal_positive(mean, rng)
                          : truncated_normal_nonpositive(mean, rng);
    precision(k, k) += 1.0;
    rhs(k) += h - offset;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  Eigen::VectorXd mean = llt.solve(rhs);
  std::normal_distribution<double> norm;
  Eigen::VectorXd z(p);
  for (Eigen::Index k = 0; k < p; ++k) z(k) = norm(rng);
  // precision = L L'  =>  L'^{-1} z ~ N(0, precision^{-1})
  Eigen::VectorXd draw = mean + llt.matrixU().solve(z);
  return {draw.data(), draw.data() + p};
}

// ---------------------------------------------------------------------------

struct ChainSampler::Impl {
  struct Block {
    std::string name;
    double scale = 0.0;
    double target = 0.44;
    long proposed = 0;
    long accepted = 0;
    long adapt_steps = 0;
    double initial = 0.0;
  };

  const Model& model;
  PriorSpec prior;
  MCMCConfig config;
  SampleIndex idx;
  std::mt19937_64 rng;
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif{0.0, 1.0};
  std::vector<std::size_t> cells;

  ParameterState state;
  std::vector<double> inv_mu;  // 1/mu at each sample's fine cell
  std::vector<std::shared_ptr<UnitResponse>> responses;
  RateFields rates;
  std::vector<double> u;
  double loglik = 0.0;
  double logprior = 0.0;

  std::vector<double> diffusion_means;  // masked-cell layer means
  std::vector<double> growth_means;
  std::vector<Block> blocks;
  std::size_t local_block = 0;
  std::size_t independent_block = 0;
  bool adapting = false;
  long failures = 0;

  Impl(const Model& m, std::span<const SampleRecord> samples, const PriorSpec& p,
       const MCMCConfig& c, ParameterState initial, std::uint64_t seed)
      : model(m), prior(p), config(c), idx(SampleIndex::build(m, samples)), rng(seed),
        cells(masked_cells(m.grid())), state(std::move(initial)) {
    validate_state(model, state);
    prior.validate(idx.first_date);
    auto masked_mean = [&](const std::string& name) {
      const auto& v = model.covariates.layer(name);
      double sum = 0.0;
      for (auto c : cells) sum += v[c];
      return cells.empty() ? 0.0 : sum / static_cast<double>(cells.size());
    };
    for (const auto& n : model.diffusion_layers) diffusion_means.push_back(masked_mean(n));
    for (const auto& n : model.growth_layers) growth_means.push_back(masked_mean(n));
    blocks.push_back({"alpha0", config.scales.alpha});
    for (const auto& n : model.diffusion_layers) blocks.push_back({"alpha_" + n, config.scales.alpha});
    blocks.push_back({"gamma0", config.scales.gamma});
    for (const auto& n : model.growth_layers) blocks.push_back({"gamma_" + n, config.scales.gamma});
    for (int j = 0; j < model.n_events; ++j) {
      blocks.push_back({j == 0 ? "theta" : "theta_" + std::to_string(j + 1), config.scales.log_theta});
    }
    blocks.push_back({"theta_beta", config.scales.log_theta});
    local_block = blocks.size();
    blocks.push_back({"introduction_local", 1.0, 0.234});
    independent_block = blocks.size();
    blocks.push_back({"introduction_independent", 0.0, 0.0});
    blocks.push_back({"beta", 0.0, 0.0});

    for (auto& b : blocks) b.initial = b.scale;
    logprior = log_prior(prior, model, state);
    if (!std::isfinite(logprior)) throw DomainError("initial state has zero prior density");
    if (config.use_likelihood) {
      rates = rate_fields(model, state);
      inv_mu = inverse_mu(rates);
      for (const auto& s : state.sources) responses.push_back(make_response(rates, s.omega));
      u.resize(idx.y.size());
      if (!intensities(responses, state.sources, state.t0, inv_mu, u)) {
        throw NumericalBlowup("initial state overflows the solver", 0);
      }
      loglik = sample_log_likelihood(u, idx, state.beta);
    }
  }

  std::vector<double> inverse_mu(const RateFields& r) const {
    std::vector<double> out(idx.fine_cell.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / r.mu[idx.fine_cell[i]];
    return out;
  }

  std::shared_ptr<UnitResponse> make_response(const RateFields& r, const Point& omega) const {
    auto cell = model.grid().locate_masked(omega);
    return std::make_shared<UnitResponse>(model.grid(), r, model.grid().coarse_of(*cell),
                                          model.steps_per_month);
  }

  // u_i = sum_j theta_j * cbar_j(lag_i, parent_i) / mu(s_i). False on blowup.
  bool intensities(const std::vector<std::shared_ptr<UnitResponse>>& resp,
                   const std::vector<Source>& sources, int t0, const std::vector<double>& imu,
                   std::vector<double>& out) {
    const int max_lag = idx.last_date - t0;
    try {
      for (const auto& r : resp) r->extend_to(max_lag);
    } catch (const NumericalBlowup&) {
      return false;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      const int lag = idx.date[i] - t0;
      double v = 0.0;
      if (lag >= 0) {
        for (std::size_t j = 0; j < resp.size(); ++j) {
          v += sources[j].theta * resp[j]->coarse_value(lag, idx.coarse_cell[i]);
        }
      }
      out[i] = v * imu[i];
    }
    return true;
  }

  bool accept(double log_ratio) {
    if (log_ratio >= 0.0) return true;
    return std::log(unif(rng)) < log_ratio;
  }

  void record(Block& b, bool accepted) {
    ++b.proposed;
    if (accepted) ++b.accepted;
    if (adapting && b.target > 0.0) {
      ++b.adapt_steps;
      double gain = std::pow(static_cast<double>(b.adapt_steps), -kRobbinsMonroExponent);
      b.scale *= std::exp(gain * ((accepted ? 1.0 : 0.0) - b.target));
      // Flat likelihood regions would otherwise let the scale grow without bound.
      if (b.initial > 0.0) {
        b.scale = std::clamp(b.scale, b.initial / kMaxScaleRatio, b.initial * kMaxScaleRatio);
      }
    }
  }

  // Each beta_k only touches the samples of species k, so the conditional
  // mode is a set of independent one-dimensional maximizations.
  void beta_to_mode() {
    if (!config.use_likelihood) return;
    for (std::size_t k = 0; k < state.beta.size(); ++k) {
      std::vector<double> offset;
      std::vector<int> y;
      for (std::size_t i = 0; i < u.size(); ++i) {
        if (static_cast<std::size_t>(idx.species[i]) != k) continue;
        offset.push_back(std::log(std::max(u[i], kProbabilityFloor)));
        y.push_back(idx.y[i]);
      }
      auto negative_log_post = [&](double b) {
        double f = 0.5 * (b / prior.sigma_beta) * (b / prior.sigma_beta);
        for (std::size_t i = 0; i < offset.size(); ++i) {
          f -= bernoulli_log_density(y[i], normal_cdf(offset[i] + b));
        }
        return f;
      };
      const double bound = 10.0 * prior.sigma_beta - std::log(kProbabilityFloor);
      state.beta[k] = boost::math::tools::brent_find_minima(negative_log_post, -bound, bound, 40).first;
    }
    loglik = sample_log_likelihood(u, idx, state.beta);
    logprior = log_prior(prior, model, state);
  }

  void step_beta() {
    Block& b = blocks.back();
    if (config.use_likelihood) {
      state.beta = invasion::update_beta(state.beta, u, idx.species, idx.y, prior.sigma_beta, rng);
      loglik = sample_log_likelihood(u, idx, state.beta);
    } else {
      for (auto& v : state.beta) v = prior.sigma_beta * norm(rng);
    }
    logprior = log_prior(prior, model, state);
    ++b.proposed;
    ++b.accepted;
  }

  // Random-walk update of one regression coefficient; needs fresh solves.
  // A slope move shifts its intercept by -mean(layer) * delta so the field
  // changes around its masked mean. The shear has unit Jacobian and the
  // increment is symmetric, so the move stays a plain Metropolis step.
  void step_regression(Block& block, double& param, double* intercept = nullptr,
                       double layer_mean = 0.0) {
    const double old = param;
    const double old_intercept = intercept ? *intercept : 0.0;
    const double delta = block.scale * norm(rng);
    param = old + delta;
    if (intercept) *intercept = old_intercept - layer_mean * delta;
    const double new_prior = log_prior(prior, model, state);
    double new_lik = 0.0;
    RateFields new_rates;
    std::vector<std::shared_ptr<UnitResponse>> new_resp;
    std::vector<double> new_imu;
    std::vector<double> new_u;
    bool ok = true;
    if (config.use_likelihood) {
      try {
        new_rates = rate_fields(model, state);
        new_imu = inverse_mu(new_rates);
        for (const auto& s : state.sources) new_resp.push_back(make_response(new_rates, s.omega));
        new_u.resize(u.size());
        ok = intensities(new_resp, state.sources, state.t0, new_imu, new_u);
      } catch (const NumericalBlowup&) {
        ok = false;
      } catch (const DomainError&) {
        ok = false;  // e.g. mu underflow to zero
      }
      if (ok) new_lik = sample_log_likelihood(new_u, idx, state.beta);
    }
    if (!ok) {
      ++failures;
      param = old;
      if (intercept) *intercept = old_intercept;
      record(block, false);
      return;
    }
    bool acc = accept((new_lik - loglik) + (new_prior - logprior));
    if (acc) {
      logprior = new_prior;
      if (config.use_likelihood) {
        loglik = new_lik;
        rates = std::move(new_rates);
        inv_mu = std::move(new_imu);
        responses = std::move(new_resp);
        u = std::move(new_u);
      }
    } else {
      param = old;
      if (intercept) *intercept = old_intercept;
    }
    record(block, acc);
  }

  // Log-scale random walk on theta_j; the solve is linear in theta so the
  // cached unit responses are reused.
  void step_theta(Block& block, std::size_t j) {
    const double old = state.sources[j].theta;
    const double proposal = old * std::exp(block.scale * norm(rng));
    state.sources[j].theta = proposal;
    const double new_prior = log_prior(prior, model, state);
    double new_lik = 0.0;
    std::vector<double> new_u;
    if (config.use_likelihood) {
      new_u.resize(u.size());
      intensities(responses, state.sources, state.t0, inv_mu, new_u);
      new_lik = sample_log_likelihood(new_u, idx, state.beta);
    }
    // Jacobian of the log-scale move.
    const double log_ratio =
        (new_lik - loglik) + (new_prior - logprior) + std::log(proposal) - std::log(old);
    bool acc = std::isfinite(new_prior) && accept(log_ratio);
    if (acc) {
      logprior = new_prior;
      if (config.use_likelihood) {
        loglik = new_lik;
        u = std::move(new_u);
      }
    } else {
      state.sources[j].theta = old;
    }
    record(block, acc);
  }

  void step_dynamics() {
    std::size_t b = 0;
    step_regression(blocks[b++], state.alpha0);
    for (std::size_t k = 0; k < state.alpha.size(); ++k)
      step_regression(blocks[b++], state.alpha[k], &state.alpha0, diffusion_means[k]);
    step_regression(blocks[b++], state.gamma0);
    for (std::size_t k = 0; k < state.gamma.size(); ++k)
      step_regression(blocks[b++], state.gamma[k], &state.gamma0, growth_means[k]);
    for (std::size_t j = 0; j < state.sources.size(); ++j) step_theta(blocks[b++], j);
    step_theta_beta(blocks[b++]);
  }

  // The likelihood sees log(theta) and beta only through their sum, so
  // scaling every theta_j by exp(delta) while shifting every beta_k by
  // -delta moves along that ridge.
  void step_theta_beta(Block& block) {
    const double delta = block.scale * norm(rng);
    const ParameterState old = state;
    for (auto& src : state.sources) src.theta *= std::exp(delta);
    for (auto& b : state.beta) b -= delta;
    const double new_prior = log_prior(prior, model, state);
    double new_lik = 0.0;
    std::vector<double> new_u;
    if (config.use_likelihood) {
      new_u.resize(u.size());
      intensities(responses, state.sources, state.t0, inv_mu, new_u);
      new_lik = sample_log_likelihood(new_u, idx, state.beta);
    }
    const double log_jacobian = static_cast<double>(state.sources.size()) * delta;
    const double log_ratio = (new_lik - loglik) + (new_prior - logprior) + log_jacobian;
    bool acc = std::isfinite(new_prior) && accept(log_ratio);
    if (acc) {
      logprior = new_prior;
      if (config.use_likelihood) {
        loglik = new_lik;
        u = std::move(new_u);
      }
    } else {
      state = old;
    }
    record(block, acc);
  }

  // Masked mean of the growth rate under the current state.
  double mean_growth() const {
    double g = state.gamma0;
    for (std::size_t k = 0; k < state.gamma.size(); ++k) g += state.gamma[k] * growth_means[k];
    return g;
  }

  // Mixture of a local random walk on (omega_j, t0) and an independent draw
  // from their prior. Each component is a Metropolis-Hastings kernel on its
  // own. Moving t0 by d months also shifts every beta_k by mean_growth * d,
  // which roughly cancels the change in log intensity; the shear has unit
  // Jacobian and is its own reverse, so the ratio is likelihood times the
  // beta prior (the prior on omega and t0 is flat).
  void step_introduction(std::size_t j) {
    const bool local = unif(rng) < config.local_move_prob;
    Block& block = local ? blocks[local_block] : blocks[independent_block];
    Point omega;
    int t0 = 0;
    if (local) {
      const double f = block.scale;
      const Point cur = state.sources[j].omega;
      omega = {cur.x + f * config.scales.omega_km * norm(rng),
               cur.y + f * config.scales.omega_km * norm(rng)};
      t0 = state.t0 + static_cast<int>(std::lround(f * config.scales.t0_months * norm(rng)));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
      omega = uniform_in_cell(model.grid(), cells[pick(rng)], rng);
      std::uniform_int_distribution<int> month(prior.t0_first, prior.t0_last);
      t0 = month(rng);
    }
    auto cell = model.grid().locate_masked(omega);
    if (!cell || t0 < prior.t0_first || t0 > prior.t0_last) {
      record(block, false);
      return;
    }
    if (!config.use_likelihood) {
      state.sources[j].omega = omega;
      state.t0 = t0;
      logprior = log_prior(prior, model, state);
      record(block, true);
      return;
    }
    auto new_resp = responses;
    const std::size_t coarse = model.grid().coarse_of(*cell);
    bool ok = true;
    if (coarse != responses[j]->seed_coarse()) {
      try {
        new_resp[j] = make_response(rates, omega);
      } catch (const NumericalBlowup&) {
        ok = false;
      }
    }
    std::vector<Source> new_sources = state.sources;
    new_sources[j].omega = omega;
    std::vector<double> new_u(u.size());
    ok = ok && intensities(new_resp, new_sources, t0, inv_mu, new_u);
    if (!ok) {
      ++failures;
      record(block, false);
      return;
    }
    const double shift = mean_growth() * static_cast<double>(t0 - state.t0);
    const std::vector<double> old_beta = state.beta;
    for (auto& b : state.beta) b += shift;
    const double new_prior = log_prior(prior, model, state);
    const double new_lik = sample_log_likelihood(new_u, idx, state.beta);
    bool acc = std::isfinite(new_prior) && accept((new_lik - loglik) + (new_prior - logprior));
    if (acc) {
      state.sources = std::move(new_sources);
      state.t0 = t0;
      responses = std::move(new_resp);
      u = std::move(new_u);
      loglik = new_lik;
      logprior = new_prior;
    } else {
      state.beta = old_beta;
    }
    record(block, acc);
  }
};

ChainSampler::ChainSampler(const Model& model, std::span<const SampleRecord> samples,
                           const PriorSpec& prior, const MCMCConfig& config,
                           ParameterState initial, std::uint64_t seed)
    : impl_(std::make_unique<Impl>(model, samples, prior, config, std::move(initial), seed)) {}

ChainSampler::~ChainSampler() = default;
ChainSampler::ChainSampler(ChainSampler&&) noexcept = default;

void ChainSampler::update_beta() { impl_->step_beta(); }
void ChainSampler::set_beta_to_conditional_mode() { impl_->beta_to_mode(); }
void ChainSampler::update_dynamics() { impl_->step_dynamics(); }
void ChainSampler::update_introduction() {
  for (std::size_t j = 0; j < impl_->state.sources.size(); ++j) impl_->step_introduction(j);
}
void ChainSampler::set_adapting(bool on) { impl_->adapting = on; }
void ChainSampler::reset_counters() {
  for (auto& b : impl_->blocks) b.proposed = b.accepted = 0;
}
const ParameterState& ChainSampler::state() const { return impl_->state; }
double ChainSampler::log_posterior() const { return impl_->loglik + impl_->logprior; }
double ChainSampler::log_likelihood() const { return impl_->loglik; }
long ChainSampler::solver_failures() const { return impl_->failures; }

std::vector<BlockStats> ChainSampler::stats() const {
  std::vector<BlockStats> out;
  for (const auto& b : impl_->blocks) out.push_back({b.name, b.proposed, b.accepted, b.scale});
  return out;
}

namespace {

ChainOutput run_chain(std::span<const SampleRecord> samples, const Model& model,
                      const PriorSpec& prior, const MCMCConfig& config, int chain_id) {
  std::mt19937_64 init_rng(derive_seed(config.seed, 2 * static_cast<std::uint64_t>(chain_id)));
  const std::uint64_t sampler_seed =
      derive_seed(config.seed, 2 * static_cast<std::uint64_t>(chain_id) + 1);
  std::vector<Point> positives;
  for (const auto& s : samples)
    if (s.y == 1) positives.push_back(s.location);

  // Score prior draws with beta at its conditional mode. Every other
  // candidate places the sources on positive samples instead of uniformly;
  // starting points do not enter the target, only the time to reach it.
  struct Candidate {
    double score;
    std::unique_ptr<ChainSampler> sampler;
  };
  std::vector<Candidate> pool;
  int tries = 0;
  for (int k = 0; k < config.init_draws || (pool.empty() && tries < 100 * config.init_draws); ++k) {
    ++tries;
    ParameterState candidate = draw_from_prior(prior, model, init_rng);
    if (k % 2 == 1 && !positives.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, positives.size() - 1);
      for (auto& src : candidate.sources) src.omega = positives[pick(init_rng)];
    }
    try {
      auto s = std::make_unique<ChainSampler>(model, samples, prior, config, candidate,
                                              derive_seed(sampler_seed, static_cast<std::uint64_t>(k)));
      s->set_beta_to_conditional_mode();
      if (!std::isfinite(s->log_posterior())) continue;
      pool.push_back({s->log_posterior(), std::move(s)});
    } catch (const NumericalBlowup&) {
    } catch (const DomainError&) {
    }
  }
  if (pool.empty()) throw NumericalBlowup("no prior draw gave a finite posterior to start the chain", 0);
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(config.init_pilots)));

  // Short adaptive pilot runs from the best candidates; the chain continues
  // from the pilot with the highest mean log posterior over its second half.
  std::unique_ptr<ChainSampler> best;
  if (config.pilot_iterations > 0 && pool.size() > 1) {
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto& c : pool) {
      c.sampler->set_adapting(config.adapt);
      double sum = 0.0;
      long counted = 0;
      for (long it = 1; it <= config.pilot_iterations; ++it) {
        c.sampler->iterate();
        if (2 * it > config.pilot_iterations) {
          sum += c.sampler->log_posterior();
          ++counted;
        }
      }
      const double score = sum / static_cast<double>(counted);
      if (!best || score > best_score) {
        best_score = score;
        best = std::move(c.sampler);
      }
    }
  } else {
    best = std::move(pool.front().sampler);
  }
  best->reset_counters();

  ChainSampler& sampler = *best;
  ChainOutput out;
  out.chain_id = chain_id;
  out.draws.reserve(static_cast<std::size_t>(config.retained_per_chain()));
  sampler.set_adapting(config.adapt && config.n_burnin > 0);
  for (long iter = 1; iter <= config.n_iterations; ++iter) {
    if (iter == config.n_burnin + 1) {
      sampler.set_adapting(false);
      sampler.reset_counters();
    }
    sampler.iterate();
    if (iter > config.n_burnin && (iter - config.n_burnin) % config.thin == 0) {
      out.draws.push_back({iter, sampler.state(), sampler.log_posterior()});
    }
  }
  out.acceptance = sampler.stats();
  out.solver_failures = sampler.solver_failures();
  for (const auto& b : out.acceptance) {
    if (b.proposed > 0 && b.accepted == 0) {
      out.warnings.push_back("chain " + std::to_string(chain_id) + ": block " + b.name +
                             " accepted no proposals after burn-in");
    }
  }
  if (out.solver_failures > 0) {
    out.warnings.push_back("chain " + std::to_string(chain_id) + ": " +
                           std::to_string(out.solver_failures) +
                           " proposals rejected after solver blowup");
  }
  return out;
}

}  // namespace

std::vector<ChainOutput> run_mcmc(std::span<const SampleRecord> samples, const Model& model,
                                  const PriorSpec& prior, const MCMCConfig& config) {
  config.validate();
  auto idx = SampleIndex::build(model, samples);
  prior.validate(idx.first_date);

  std::vector<ChainOutput> chains(static_cast<std::size_t>(config.n_chains));
  std::vector<std::exception_ptr> errors(chains.size());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int c = next++; c < config.n_chains; c = next++) {
      try {
        chains[static_cast<std::size_t>(c)] = run_chain(samples, model, prior, config, c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(config.threads, config.n_chains);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return chains;
}

// ---------------------------------------------------------------------------

std::vector<std::string> parameter_names(const Model& model) {
  std::vector<std::string> names{"alpha0"};
  for (const auto& n : model.diffusion_layers) names.push_back("alpha_" + n);
  names.push_back("gamma0");
  for (const auto& n : model.growth_layers) names.push_back("gamma_" + n);
  for (const auto& s : model.design.species()) names.push_back("beta_" + s);
  names.insert(names.end(), {"omega_x", "omega_y", "t0", "theta"});
  for (int j = 2; j <= model.n_events; ++j) {
    auto sfx = "_" + std::to_string(j);
    names.insert(names.end(), {"omega_x" + sfx, "omega_y" + sfx, "theta" + sfx});
  }
  return names;
}

std::vector<double> flatten(const ParameterState& state) {
  std::vector<double> v{state.alpha0};
  v.insert(v.end(), state.alpha.begin(), state.alpha.end());
  v.push_back(state.gamma0);
  v.insert(v.end(), state.gamma.begin(), state.gamma.end());
  v.insert(v.end(), state.beta.begin(), state.beta.end());
  const auto& s0 = state.sources.at(0);
  v.insert(v.end(), {s0.omega.x, s0.omega.y, static_cast<double>(state.t0), s0.theta});
  for (std::size_t j = 1; j < state.sources.size(); ++j) {
    const auto& s = state.sources[j];
    v.insert(v.end(), {s.omega.x, s.omega.y, s.theta});
  }
  return v;
}

ParameterState unflatten(const Model& model, std::span<const double> v) {
  if (v.size() != parameter_names(model).size()) {
    throw ConfigurationError("parameter vector length does not match the model");
  }
  std::size_t k = 0;
  ParameterState s;
  s.alpha0 = v[k++];
  for (std::size_t i = 0; i < model.diffusion_layers.size(); ++i) s.alpha.push_back(v[k++]);
  s.gamma0 = v[k++];
  for (std::size_t i = 0; i < model.growth_layers.size(); ++i) s.gamma.push_back(v[k++]);
  for (std::size_t i = 0; i < model.design.size(); ++i) s.beta.push_back(v[k++]);
  Source first;
  first.omega = {v[k], v[k + 1]};
  s.t0 = static_cast<int>(std::lround(v[k + 2]));
  first.theta = v[k + 3];
  k += 4;
  s.sources.push_back(first);
  for (int j = 2; j <= model.n_events; ++j) {
    s.sources.push_back({{v[k], v[k + 1]}, v[k + 2]});
    k += 3;
  }
  return s;
}

void write_chain_csv(const std::filesystem::path& path, const Model& model,
                     const ChainOutput& chain) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw ConfigurationError("cannot write '" + path.string() + "'");
  for (const auto& n : parameter_names(model)) std::fprintf(f, "%s,", n.c_str());
  std::fputs("log_post,chain_id,iter\n", f);
  for (const auto& d : chain.draws) {
    for (double v : flatten(d.state)) std::fprintf(f, "%.17g,", v);
    std::fprintf(f, "%.17g,%d,%ld\n", d.log_post, chain.chain_id, d.iter);
  }
  std::fclose(f);
}

ChainOutput read_chain_csv(const std::filesystem::path& path, const Model& model) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open chain file '" + path.string() + "'");
  auto names = parameter_names(model);
  names.insert(names.end(), {"log_post", "chain_id", "iter"});
  std::string line;
  std::getline(in, line);
  {
    std::istringstream hs(line);
    std::string field;
    std::size_t k = 0;
    while (std::getline(hs, field, ',')) {
      if (k >= names.size() || field != names[k]) {
        throw ParseError(path.string() + ": chain header does not match the model");
      }
      ++k;
    }
    if (k != names.size()) throw ParseError(path.string() + ": chain header is incomplete");
  }
  ChainOutput out;
  const std::size_t np = names.size() - 3;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<double> v;
    while (std::getline(ls, field, ',')) {
      try {
        v.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": bad value '" + field + "'");
      }
    }
    if (v.size() != names.size()) throw ParseError(path.string() + ": wrong field count");
    Draw d;
    d.state = unflatten(model, std::span<const double>(v).first(np));
    d.log_post = v[np];
    out.chain_id = static_cast<int>(v[np + 1]);
    d.iter = static_cast<long>(v[np + 2]);
    out.draws.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

bool constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

double variance_of(std::span<const double> x) {
  if (constant(x)) return 0.0;
  double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double chain_ess(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4 || constant(x)) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  c0 /= static_cast<double>(n);
  if (!(c0 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  auto rho = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - m) * (x[t + lag] - m);
    return s / static_cast<double>(n) / c0;
  };
  double tau = -1.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = (k == 0 ? 1.0 : rho(2 * k)) + rho(2 * k + 1);
    if (pair < 0.0) break;
    tau += 2.0 * pair;
  }
  return static_cast<double>(n) / std::max(tau, 1e-12);
}

}  // namespace

double split_rhat(std::span<const std::vector<double>> chains) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (chains.size() < 2) return nan;
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  const std::size_t half = n / 2;
  if (half < 2) return nan;
  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    std::span<const double> all(c.data(), n);
    for (auto part : {all.first(half), all.last(half)}) {
      means.push_back(mean_of(part));
      vars.push_back(variance_of(part));
    }
  }
  const double m = static_cast<double>(means.size());
  const double grand = mean_of(means);
  double b = 0.0;
  for (double v : means) b += (v - grand) * (v - grand);
  b *= static_cast<double>(half) / (m - 1.0);
  const double w = mean_of(vars);
  if (!(w > 0.0)) return nan;
  const double nh = static_cast<double>(half);
  const double var_plus = (nh - 1.0) / nh * w + b / nh;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(std::span<const std::vector<double>> chains) {
  double total = 0.0;
  for (const auto& c : chains) {
    double e = chain_ess(c);
    if (std::isnan(e)) return std::numeric_limits<double>::quiet_NaN();
    total += e;
  }
  return total;
}

DiagnosticsReport chain_diagnostics(const Model& model, std::span<const ChainOutput> chains) {
  DiagnosticsReport report;
  if (chains.empty()) throw ConfigurationError("no chains to diagnose");
  if (chains.size() < 2) report.warnings.push_back("single chain: split-Rhat omitted");
  const auto names = parameter_names(model);
  for (std::size_t p = 0; p < names.size(); ++p) {
    std::vector<std::vector<double>> series;
    for (const auto& c : chains) {
      std::vector<double> s;
      for (const auto& d : c.draws) s.push_back(flatten(d.state)[p]);
      series.push_back(std::move(s));
    }
    ParameterDiagnostics d;
    d.name = names[p];
    d.rhat = chains.size() >= 2 ? split_rhat(series) : std::numeric_limits<double>::quiet_NaN();
    d.rhat_defined = std::isfinite(d.rhat);
    d.ess = effective_sample_size(series);
    d.ess_defined = std::isfinite(d.ess);
    if (chains.size() >= 2 && !d.rhat_defined) {
      report.warnings.push_back(names[p] + ": split-Rhat undefined (zero within-chain variance)");
    }
    if (!d.ess_defined) report.warnings.push_back(names[p] + ": ESS undefined");
    report.parameters.push_back(d);
  }
  for (const auto& c : chains) {
    report.acceptance.push_back(c.acceptance);
    report.warnings.insert(report.warnings.end(), c.warnings.begin(), c.warnings.end());
  }
  return report;
}

}  // namespace invasion
