#include "invasion/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "invasion/calendar.hpp"
#include "invasion/diffusion.hpp"
#include "invasion/errors.hpp"

namespace invasion {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigurationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  double pos = q * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, values.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ScalarSummary summarize_scalar(std::string name, std::span<const double> draws, double level) {
  if (draws.empty()) throw ConfigurationError("no draws for '" + name + "'");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("credible level must lie in (0, 1)");
  std::vector<double> v(draws.begin(), draws.end());
  ScalarSummary s;
  s.name = std::move(name);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.median = quantile(v, 0.5);
  s.lower = quantile(v, 0.5 * (1.0 - level));
  s.upper = quantile(v, 1.0 - 0.5 * (1.0 - level));
  return s;
}

std::map<int, double> year_pmf(std::span<const int> t0_draws) {
  std::map<int, long> counts;
  for (int m : t0_draws) ++counts[month_year(m)];
  std::map<int, double> pmf;
  for (auto [year, n] : counts) {
    pmf[year] = static_cast<double>(n) / static_cast<double>(t0_draws.size());
  }
  return pmf;
}

PosteriorSummary summarize_marginals(const Model& model, std::span<const ChainOutput> chains,
                                     double level) {
  const auto names = parameter_names(model);
  std::vector<std::vector<double>> columns(names.size());
  std::vector<int> t0;
  for (const auto& c : chains) {
    for (const auto& d : c.draws) {
      auto v = flatten(d.state);
      for (std::size_t p = 0; p < v.size(); ++p) columns[p].push_back(v[p]);
      t0.push_back(d.state.t0);
    }
  }
  if (t0.empty()) throw ConfigurationError("chains hold no draws");
  if (t0.size() < 100) {
    throw ConfigurationError("need at least 100 retained draws, have " + std::to_string(t0.size()));
  }
  PosteriorSummary out;
  out.level = level;
  for (std::size_t p = 0; p < names.size(); ++p) {
    out.parameters.push_back(summarize_scalar(names[p], columns[p], level));
  }
  out.year_pmf = year_pmf(t0);
  return out;
}

std::vector<double> location_posterior_map(std::span<const ChainOutput> chains,
                                           const GridSpec& grid, bool smooth) {
  std::vector<double> map(grid.fine_count(), 0.0);
  double total = 0.0;
  for (const auto& c : chains) {
    for (const auto& d : c.draws) {
      for (const auto& s : d.state.sources) {
        auto cell = grid.locate_masked(s.omega);
        if (!cell) throw InternalConsistencyError("retained source location outside the mask");
        map[*cell] += 1.0;
        total += 1.0;
      }
    }
  }
  if (total == 0.0) throw ConfigurationError("chains hold no location draws");
  if (smooth) {
    std::vector<double> out(map.size(), 0.0);
    const int reach = 3;
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map[i] == 0.0) continue;
      const int r0 = grid.fine_row(i);
      const int c0 = grid.fine_col(i);
      double wsum = 0.0;
      std::vector<std::pair<std::size_t, double>> spread;
      for (int dr = -reach; dr <= reach; ++dr) {
        for (int dc = -reach; dc <= reach; ++dc) {
          int r = r0 + dr;
          int c = c0 + dc;
          if (r < 0 || c < 0 || r >= grid.fine_rows() || c >= grid.fine_cols()) continue;
          std::size_t j = grid.fine_index(r, c);
          if (!grid.inside(j)) continue;
          double w = std::exp(-0.5 * (dr * dr + dc * dc));
          spread.emplace_back(j, w);
          wsum += w;
        }
      }
      for (auto [j, w] : spread) out[j] += map[i] * w / wsum;
    }
    map.swap(out);
  }
  for (auto& v : map) v /= total;
  return map;
}

bool CredibleRegion::contains(std::size_t cell) const {
  return std::binary_search(cells.begin(), cells.end(), cell);
}

namespace {

CredibleRegion make_region(std::vector<std::size_t> cells, std::span<const double> map,
                           const GridSpec& grid) {
  std::sort(cells.begin(), cells.end());
  CredibleRegion r;
  for (std::size_t i : cells) r.level += map[i];
  r.area_km2 = static_cast<double>(cells.size()) * grid.fine_cell_area();
  r.cells = std::move(cells);
  return r;
}

void check_map(std::span<const double> map, const GridSpec& grid) {
  if (map.size() != grid.fine_count()) throw ConfigurationError("map size does not match grid");
  double sum = 0.0;
  for (double v : map) {
    if (v < 0.0 || !std::isfinite(v)) throw DomainError("map has negative or non-finite mass");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DomainError("map is not normalized");
}

}  // namespace

CredibleRegion hpd_region(std::span<const double> map, const GridSpec& grid, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("credible level must lie in (0, 1)");
  check_map(map, grid);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] > 0.0) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return map[a] != map[b] ? map[a] > map[b] : a < b;
  });
  // Tolerance absorbs round-off when the level is hit exactly (e.g. 900 x 0.001).
  constexpr double tol = 1e-12;
  std::vector<std::size_t> cells;
  double cum = 0.0;
  for (std::size_t i : order) {
    cells.push_back(i);
    cum += map[i];
    if (cum >= level - tol) break;
  }
  return make_region(std::move(cells), map, grid);
}

ExceedanceRegion exceedance_region(std::span<const double> map, const GridSpec& grid,
                                   const Point& reference) {
  check_map(map, grid);
  auto ref = grid.locate_masked(reference);
  if (!ref) throw DomainError("reference location outside the study-area mask");
  const double threshold = map[*ref];
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] > 0.0 && map[i] >= threshold) cells.push_back(i);
  }
  ExceedanceRegion out;
  for (std::size_t i : cells) {
    Point c = grid.center(i);
    double dx = c.x - reference.x;
    double dy = c.y - reference.y;
    double d = std::hypot(dx, dy);
    if (d > out.max_distance_km) {
      out.max_distance_km = d;
      double deg = std::atan2(dx, dy) * 180.0 / std::numbers::pi;
      out.bearing_deg = deg < 0.0 ? deg + 360.0 : deg;
    }
  }
  out.region = make_region(std::move(cells), map, grid);
  return out;
}

RateMaps posterior_rate_maps(const Model& model, std::span<const ChainOutput> chains) {
  const std::size_t n = model.grid().fine_count();
  RateMaps out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  long count = 0;
  for (const auto& c : chains) {
    for (const auto& d : c.draws) {
      auto mu = diffusion_field(d.state.alpha0, d.state.alpha, model.diffusion_layers,
                                model.covariates);
      auto lambda = growth_field(d.state.gamma0, d.state.gamma, model.growth_layers,
                                 model.covariates);
      for (std::size_t i = 0; i < n; ++i) {
        out.mu_mean[i] += mu[i];
        out.lambda_mean[i] += lambda[i];
      }
      ++count;
    }
  }
  if (count == 0) throw ConfigurationError("chains hold no draws");
  for (std::size_t i = 0; i < n; ++i) {
    out.mu_mean[i] /= static_cast<double>(count);
    out.lambda_mean[i] /= static_cast<double>(count);
  }
  return out;
}

ForecastResult forecast(const Model& model, std::span<const ChainOutput> chains,
                        std::span<const DesignPoint> holdout, std::size_t max_draws) {
  std::vector<const ParameterState*> all;
  for (const auto& c : chains) {
    for (const auto& d : c.draws) all.push_back(&d.state);
  }
  if (all.empty()) throw ConfigurationError("chains hold no draws");
  std::vector<const ParameterState*> used;
  if (max_draws == 0 || all.size() <= max_draws) {
    used = all;
  } else {
    for (std::size_t k = 0; k < max_draws; ++k) used.push_back(all[k * all.size() / max_draws]);
  }

  const GridSpec& grid = model.grid();
  ForecastResult result;
  std::vector<std::optional<std::size_t>> cell(holdout.size());
  std::vector<int> species(holdout.size(), -1);
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    result.records.push_back({holdout[i], 0.0, 0, {}});
    cell[i] = grid.locate_masked(holdout[i].location);
    if (!cell[i]) {
      result.records[i].error = "location outside the study-area mask";
      continue;
    }
    try {
      species[i] = static_cast<int>(model.design.index(holdout[i].species));
    } catch (const ConfigurationError& e) {
      result.records[i].error = e.what();
    }
  }
  int last = std::numeric_limits<int>::min();
  for (const auto& p : holdout) last = std::max(last, p.date);

  std::vector<double> sum(holdout.size(), 0.0);
  std::size_t n_used = 0;
  for (const ParameterState* s : used) {
    std::vector<double> p(holdout.size(), 0.0);
    try {
      RateFields rates = rate_fields(model, *s);
      std::vector<UnitResponse> resp;
      for (const auto& src : s->sources) {
        auto c = grid.locate_masked(src.omega);
        if (!c) throw InternalConsistencyError("retained source location outside the mask");
        resp.emplace_back(grid, rates, grid.coarse_of(*c), model.steps_per_month);
        resp.back().extend_to(std::max(0, last - s->t0));
      }
      for (std::size_t i = 0; i < holdout.size(); ++i) {
        if (species[i] < 0) continue;
        const int lag = holdout[i].date - s->t0;
        double u = 0.0;
        if (lag >= 0) {
          for (std::size_t j = 0; j < resp.size(); ++j) {
            u += s->sources[j].theta * resp[j].coarse_value(lag, grid.coarse_of(*cell[i]));
          }
          u /= rates.mu[*cell[i]];
        }
        p[i] = infection_probability(u, s->beta[static_cast<std::size_t>(species[i])]);
      }
    } catch (const NumericalBlowup&) {
      continue;
    }
    for (std::size_t i = 0; i < p.size(); ++i) sum[i] += p[i];
    ++n_used;
  }
  if (n_used == 0) throw NumericalBlowup("every forecast draw overflowed the solver", 0);
  result.draws_used = n_used;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    if (!result.records[i].error.empty()) continue;
    result.records[i].p_mean = sum[i] / static_cast<double>(n_used);
    result.records[i].label = forecast_label(result.records[i].p_mean);
  }
  return result;
}

double misclassification_rate(std::span<const int> labels, std::span<const int> truth) {
  if (labels.size() != truth.size()) throw ConfigurationError("label and truth lengths differ");
  if (labels.empty()) throw ConfigurationError("no labels to score");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += (labels[i] != truth[i]) ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double misclassification_rate(const ForecastResult& result, std::span<const int> truth) {
  std::vector<int> labels;
  for (const auto& r : result.records) labels.push_back(r.label);
  return misclassification_rate(labels, truth);
}

namespace {

constexpr double kCoefficientCap = 20.0;

Eigen::VectorXd logistic(const Eigen::VectorXd& eta) {
  return eta.unaryExpr([](double e) {
    return e >= 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
  });
}

double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  // -2 log L with log(1 + e^eta) evaluated stably.
  double d = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double e = eta(i);
    double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    d += log1pexp - y(i) * e;
  }
  return 2.0 * d;
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_iterations,
                         double tolerance) {
  if (x.rows() != y.size() || x.rows() == 0) throw ConfigurationError("design and response sizes differ");
  LogisticFit fit;
  fit.dropped.assign(static_cast<std::size_t>(x.cols()), false);

  // Sequential Gram-Schmidt: drop columns in the span of the earlier kept ones.
  std::vector<Eigen::Index> kept;
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::VectorXd v = x.col(j);
    const double norm0 = v.norm();
    for (const auto& q : basis) v -= q.dot(v) * q;
    if (norm0 == 0.0 || v.norm() <= 1e-8 * norm0) {
      fit.dropped[static_cast<std::size_t>(j)] = true;
      fit.warnings.push_back("column " + std::to_string(j) + " is aliased and was dropped");
      continue;
    }
    basis.push_back(v / v.norm());
    kept.push_back(j);
  }
  Eigen::MatrixXd xk(x.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) xk.col(static_cast<Eigen::Index>(k)) = x.col(kept[k]);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(xk.cols());
  Eigen::VectorXd eta = xk * beta;
  double dev = deviance(y, eta);
  fit.deviance_trace.push_back(dev);
  bool separated = false;
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd p = logistic(eta);
    Eigen::VectorXd w = (p.array() * (1.0 - p.array())).max(1e-10).matrix();
    Eigen::VectorXd z = eta + ((y - p).array() / w.array()).matrix();
    Eigen::MatrixXd xtw = xk.transpose() * w.asDiagonal();
    Eigen::VectorXd target = (xtw * xk).ldlt().solve(xtw * z);
    Eigen::VectorXd step = target - beta;
    double new_dev = deviance(y, xk * target);
    for (int h = 0; h < 30 && !(new_dev <= dev); ++h) {
      step *= 0.5;
      target = beta + step;
      new_dev = deviance(y, xk * target);
    }
    if (!(new_dev <= dev)) {
      fit.iterations = it;
      fit.converged = true;  // no further descent available
      break;
    }
    beta = target;
    eta = xk * beta;
    fit.deviance_trace.push_back(new_dev);
    fit.iterations = it;
    const double rel = std::abs(dev - new_dev) / (std::abs(new_dev) + 0.1);
    dev = new_dev;
    if (beta.cwiseAbs().maxCoeff() > kCoefficientCap) {
      separated = true;
      break;
    }
    if (rel < tolerance) {
      fit.converged = true;
      break;
    }
  }
  if (separated) {
    fit.converged = false;
    fit.warnings.push_back("complete separation suspected; coefficients capped at |20|");
    beta = beta.cwiseMax(-kCoefficientCap).cwiseMin(kCoefficientCap);
  } else if (!fit.converged) {
    fit.warnings.push_back("IRLS did not converge in " + std::to_string(max_iterations) + " iterations");
  }
  fit.coefficients = Eigen::VectorXd::Zero(x.cols());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    fit.coefficients(kept[k]) = beta(static_cast<Eigen::Index>(k));
  }
  return fit;
}

Eigen::VectorXd predict_logistic(const LogisticFit& fit, const Eigen::MatrixXd& x) {
  return logistic(x * fit.coefficients);
}

namespace {

Eigen::MatrixXd glm_design(std::span<const DesignPoint> points, const CovariateRaster& covariates,
                           std::span<const std::string> layers, const SusceptibilityDesign& design,
                           std::vector<std::string>* errors) {
  const auto cols = static_cast<Eigen::Index>(1 + layers.size() + design.size() - 1);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(points.size()), cols);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = 1.0;
    auto cell = covariates.grid().locate_masked(points[i].location);
    if (!cell) {
      if (!errors) throw DomainError("sample location outside the study-area mask");
      (*errors)[i] = "location outside the study-area mask";
      continue;
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
      x(r, static_cast<Eigen::Index>(1 + k)) = covariates.layer(layers[k])[*cell];
    }
    std::size_t s = design.index(points[i].species);
    if (s > 0) x(r, static_cast<Eigen::Index>(layers.size() + s)) = 1.0;
  }
  return x;
}

}  // namespace

GlmBaseline glm_baseline(std::span<const SampleRecord> train, const CovariateRaster& covariates,
                         std::span<const std::string> layers, const SusceptibilityDesign& design,
                         std::span<const DesignPoint> test) {
  std::vector<DesignPoint> pts;
  Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    pts.push_back({train[i].location, train[i].date, train[i].species});
    y(static_cast<Eigen::Index>(i)) = train[i].y;
  }
  GlmBaseline out;
  out.columns.push_back("intercept");
  for (const auto& l : layers) out.columns.push_back(l);
  for (std::size_t s = 1; s < design.size(); ++s) out.columns.push_back("species_" + design.species()[s]);
  out.fit = fit_logistic(glm_design(pts, covariates, layers, design, nullptr), y);
  std::vector<std::string> errors(test.size());
  Eigen::VectorXd p = predict_logistic(out.fit, glm_design(test, covariates, layers, design, &errors));
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.predictions.push_back(errors[i].empty() ? p(static_cast<Eigen::Index>(i))
                                                : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

}  // namespace invasion
