#include "invasion/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "invasion/calendar.hpp"
#include "invasion/errors.hpp"
#include "invasion/random.hpp"
#include "invasion/raster_io.hpp"

namespace invasion {

namespace fs = std::filesystem;

namespace {

using Section = std::map<std::string, std::string>;

class Reader {
 public:
  Reader(fs::path file, std::map<std::string, Section> sections)
      : file_(std::move(file)), sections_(std::move(sections)) {}

  bool has_section(const std::string& s) const { return sections_.count(s) != 0; }
  bool has(const std::string& s, const std::string& key) const {
    auto it = sections_.find(s);
    return it != sections_.end() && it->second.count(key) != 0;
  }

  [[noreturn]] void fail(const std::string& s, const std::string& key,
                         const std::string& message) const {
    throw ConfigurationError(file_.string() + ": [" + s + "] " + key + ": " + message);
  }

  const std::string& raw(const std::string& s, const std::string& key) {
    auto it = sections_.find(s);
    if (it == sections_.end() || !it->second.count(key)) fail(s, key, "missing required key");
    used_.insert(s + "\n" + key);
    return it->second.at(key);
  }

  std::string text(const std::string& s, const std::string& key, const std::string& fallback) {
    return has(s, key) ? raw(s, key) : fallback;
  }

  double number(const std::string& s, const std::string& key) {
    const std::string& v = raw(s, key);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
      fail(s, key, "expected a finite number, got '" + v + "'");
    return out;
  }
  double number(const std::string& s, const std::string& key, double fallback) {
    return has(s, key) ? number(s, key) : fallback;
  }

  long integer(const std::string& s, const std::string& key) {
    const std::string& v = raw(s, key);
    long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      fail(s, key, "expected an integer, got '" + v + "'");
    return out;
  }
  long integer(const std::string& s, const std::string& key, long fallback) {
    return has(s, key) ? integer(s, key) : fallback;
  }

  std::uint64_t seed(const std::string& s, const std::string& key, std::uint64_t fallback) {
    if (!has(s, key)) return fallback;
    const std::string& v = raw(s, key);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      fail(s, key, "expected a non-negative integer, got '" + v + "'");
    return out;
  }

  bool flag(const std::string& s, const std::string& key, bool fallback) {
    if (!has(s, key)) return fallback;
    const std::string& v = raw(s, key);
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    fail(s, key, "expected true or false, got '" + v + "'");
  }

  int month(const std::string& s, const std::string& key) {
    const std::string& v = raw(s, key);
    try {
      return parse_month(v);
    } catch (const Error& e) {
      fail(s, key, e.what());
    }
  }

  std::vector<std::string> list(const std::string& s, const std::string& key) {
    std::vector<std::string> out;
    if (!has(s, key)) return out;
    std::stringstream ss(raw(s, key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto b = item.find_first_not_of(" \t");
      auto e = item.find_last_not_of(" \t");
      if (b == std::string::npos) fail(s, key, "empty list item");
      out.push_back(item.substr(b, e - b + 1));
    }
    return out;
  }

  fs::path existing_file(const std::string& s, const std::string& key) {
    fs::path p = raw(s, key);
    if (p.is_relative()) p = file_.parent_path() / p;
    if (!fs::is_regular_file(p)) fail(s, key, "file not found: " + p.string());
    return p;
  }

  /// Keys in `s` starting with `prefix`, with the prefix removed.
  std::vector<std::string> keys_with_prefix(const std::string& s, const std::string& prefix) const {
    std::vector<std::string> out;
    auto it = sections_.find(s);
    if (it == sections_.end()) return out;
    for (const auto& [k, v] : it->second)
      if (k.rfind(prefix, 0) == 0) out.push_back(k.substr(prefix.size()));
    return out;
  }

  void reject_unknown() const {
    for (const auto& [s, keys] : sections_)
      for (const auto& [k, v] : keys)
        if (!used_.count(s + "\n" + k)) fail(s, k, "unknown key");
  }

  const fs::path& file() const { return file_; }

 private:
  fs::path file_;
  std::map<std::string, Section> sections_;
  std::set<std::string> used_;
};

const std::set<std::string> kSections = {"grid",  "covariates", "model",  "prior",
                                         "mcmc",  "data",       "output", "truth",
                                         "design", "experiment"};

Reader open_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigurationError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigurationError(path.string() + ": " + e.message() + " (line " +
                             std::to_string(e.line()) + ")");
  }
  std::map<std::string, Section> sections;
  for (const auto& [name, child] : tree) {
    if (child.empty()) throw ConfigurationError(path.string() + ": key '" + name + "' outside a section");
    if (!kSections.count(name)) throw ConfigurationError(path.string() + ": unknown section [" + name + "]");
    Section& sec = sections[name];
    for (const auto& [key, value] : child) {
      std::string v = value.data();
      auto semi = v.find(';');
      if (semi != std::string::npos) v = v.substr(0, semi);
      auto e = v.find_last_not_of(" \t");
      v = e == std::string::npos ? std::string() : v.substr(0, e + 1);
      sec[key] = v;
    }
  }
  return Reader(path, std::move(sections));
}

void read_truth(Reader& r, RunConfig& c) {
  SimTruth truth;
  ParameterState& s = truth.state;
  s.alpha0 = r.number("truth", "alpha0");
  for (const auto& l : c.diffusion_layers) s.alpha.push_back(r.number("truth", "alpha." + l));
  s.gamma0 = r.number("truth", "gamma0");
  for (const auto& l : c.growth_layers) s.gamma.push_back(r.number("truth", "gamma." + l));
  for (const auto& sp : c.species) s.beta.push_back(r.number("truth", "beta." + sp));
  s.t0 = r.month("truth", "t0");
  for (int j = 1; j <= c.n_events; ++j) {
    std::string suffix = j == 1 ? "" : "_" + std::to_string(j);
    Source src;
    src.omega.x = r.number("truth", "omega_x" + suffix);
    src.omega.y = r.number("truth", "omega_y" + suffix);
    src.theta = r.number("truth", "theta" + suffix);
    if (!(src.theta > 0.0)) r.fail("truth", "theta" + suffix, "must be positive");
    s.sources.push_back(src);
  }

  SamplingDesign& d = truth.design;
  d.first = r.month("design", "first");
  d.last = r.month("design", "last");
  d.samples_per_year = static_cast<int>(r.integer("design", "samples_per_year"));
  if (d.last < d.first) r.fail("design", "last", "before first");
  if (d.samples_per_year <= 0) r.fail("design", "samples_per_year", "must be positive");
  if (r.has("design", "holdout_first")) {
    d.holdout_first = r.month("design", "holdout_first");
    d.holdout_last = r.month("design", "holdout_last");
    d.holdout_samples = static_cast<int>(r.integer("design", "holdout_samples"));
    if (d.holdout_last < d.holdout_first) r.fail("design", "holdout_last", "before holdout_first");
    if (d.holdout_samples <= 0) r.fail("design", "holdout_samples", "must be positive");
  }
  if (s.t0 >= d.first) r.fail("truth", "t0", "must precede the first sampling month");
  c.truth = std::move(truth);
}

void read_experiment(Reader& r, RunConfig& c) {
  c.replicates = static_cast<int>(r.integer("experiment", "replicates"));
  if (c.replicates < 1) r.fail("experiment", "replicates", "must be positive");
  for (const auto& s : r.list("experiment", "settings")) {
    fs::path sp = s;
    if (sp.is_relative()) sp = r.file().parent_path() / sp;
    if (!fs::is_regular_file(sp)) r.fail("experiment", "settings", "file not found: " + sp.string());
    c.settings.push_back(sp);
  }
}

}  // namespace

RunConfig load_config(const fs::path& path) {
  Reader r = open_config(path);
  RunConfig c;
  c.source = path;

  // An experiment file may consist of a settings list and a master seed only;
  // each listed setting is then a complete config of its own.
  if (!r.has_section("grid") && r.has("experiment", "settings")) {
    c.mcmc.seed = r.seed("mcmc", "seed", c.mcmc.seed);
    read_experiment(r, c);
    r.reject_unknown();
    for (const auto& sp : c.settings) {
      RunConfig setting = load_config(sp);
      if (!setting.truth) r.fail("experiment", "settings", sp.string() + " has no [truth] section");
    }
    return c;
  }

  c.extent.xmin = r.number("grid", "xmin");
  c.extent.ymin = r.number("grid", "ymin");
  c.extent.xmax = r.number("grid", "xmax");
  c.extent.ymax = r.number("grid", "ymax");
  c.fine_size = r.number("grid", "fine_size");
  c.coarse_size = r.number("grid", "coarse_size");
  if (r.has("grid", "mask")) c.mask_path = r.existing_file("grid", "mask");

  for (const auto& name : r.keys_with_prefix("covariates", "layer."))
    c.layer_paths[name] = r.existing_file("covariates", "layer." + name);
  c.synthetic = r.text("covariates", "synthetic", "");
  if (!c.synthetic.empty() && c.synthetic != "smooth" && c.synthetic != "patchy")
    r.fail("covariates", "synthetic", "expected smooth or patchy");
  c.synthetic_seed = r.seed("covariates", "synthetic_seed", 1);
  c.synthetic_layers = r.list("covariates", "synthetic_layers");
  if (!c.synthetic.empty() && c.synthetic_layers.empty())
    r.fail("covariates", "synthetic_layers", "required with synthetic");
  for (const auto& l : c.synthetic_layers)
    if (c.layer_paths.count(l)) r.fail("covariates", "synthetic_layers", "duplicate layer " + l);

  auto known_layer = [&](const std::string& key, const std::string& l) {
    if (!c.layer_paths.count(l) &&
        std::find(c.synthetic_layers.begin(), c.synthetic_layers.end(), l) ==
            c.synthetic_layers.end())
      r.fail("model", key, "unknown covariate layer '" + l + "'");
  };
  c.diffusion_layers = r.list("model", "diffusion_layers");
  for (const auto& l : c.diffusion_layers) known_layer("diffusion_layers", l);
  c.growth_layers = r.list("model", "growth_layers");
  for (const auto& l : c.growth_layers) known_layer("growth_layers", l);
  c.species = r.list("model", "species");
  if (c.species.empty()) r.fail("model", "species", "at least one species required");
  {
    std::set<std::string> uniq(c.species.begin(), c.species.end());
    if (uniq.size() != c.species.size()) r.fail("model", "species", "duplicate species");
  }
  c.steps_per_month = static_cast<int>(r.integer("model", "steps_per_month", 30));
  if (c.steps_per_month < 1) r.fail("model", "steps_per_month", "must be at least 1");
  c.n_events = static_cast<int>(r.integer("model", "n_events", 1));
  if (c.n_events < 1) r.fail("model", "n_events", "must be at least 1");

  PriorSpec& p = c.prior;
  p.sigma_beta = r.number("prior", "sigma_beta", p.sigma_beta);
  p.sigma_regression = r.number("prior", "sigma_regression", p.sigma_regression);
  p.sigma_growth = r.number("prior", "sigma_growth", p.sigma_growth);
  p.theta_log_mean = r.number("prior", "theta_log_mean", p.theta_log_mean);
  p.theta_log_sd = r.number("prior", "theta_log_sd", p.theta_log_sd);
  if (!(p.sigma_beta > 0)) r.fail("prior", "sigma_beta", "must be positive");
  if (!(p.sigma_regression > 0)) r.fail("prior", "sigma_regression", "must be positive");
  if (!(p.sigma_growth > 0)) r.fail("prior", "sigma_growth", "must be positive");
  if (!(p.theta_log_sd > 0)) r.fail("prior", "theta_log_sd", "must be positive");
  if (r.has("prior", "t0_first") || r.has("prior", "t0_last")) {
    p.t0_first = r.month("prior", "t0_first");
    p.t0_last = r.month("prior", "t0_last");
    if (p.t0_last < p.t0_first) r.fail("prior", "t0_last", "before t0_first");
    c.prior_window_set = true;
  }

  MCMCConfig& m = c.mcmc;
  m.n_chains = static_cast<int>(r.integer("mcmc", "chains", m.n_chains));
  m.n_iterations = r.integer("mcmc", "iterations", m.n_iterations);
  m.n_burnin = r.integer("mcmc", "burnin", m.n_burnin);
  m.thin = r.integer("mcmc", "thin", m.thin);
  m.seed = r.seed("mcmc", "seed", m.seed);
  m.adapt = r.flag("mcmc", "adapt", m.adapt);
  m.local_move_prob = r.number("mcmc", "local_move_prob", m.local_move_prob);
  m.init_draws = static_cast<int>(r.integer("mcmc", "init_draws", m.init_draws));
  m.init_pilots = static_cast<int>(r.integer("mcmc", "init_pilots", m.init_pilots));
  m.pilot_iterations = r.integer("mcmc", "pilot_iterations", m.pilot_iterations);
  m.use_likelihood = r.flag("mcmc", "use_likelihood", m.use_likelihood);
  m.scales.alpha = r.number("mcmc", "scale_alpha", m.scales.alpha);
  m.scales.gamma = r.number("mcmc", "scale_gamma", m.scales.gamma);
  m.scales.log_theta = r.number("mcmc", "scale_log_theta", m.scales.log_theta);
  m.scales.omega_km = r.number("mcmc", "scale_omega_km", m.scales.omega_km);
  m.scales.t0_months = r.number("mcmc", "scale_t0_months", m.scales.t0_months);
  try {
    m.validate();
  } catch (const ConfigurationError& e) {
    throw ConfigurationError(path.string() + ": [mcmc] " + e.what());
  }

  if (r.has("data", "samples")) c.samples_path = r.existing_file("data", "samples");
  if (r.has("data", "holdout")) c.holdout_path = r.existing_file("data", "holdout");
  if (r.has("data", "reference_x") || r.has("data", "reference_y"))
    c.reference = Point{r.number("data", "reference_x"), r.number("data", "reference_y")};

  c.level = r.number("output", "level", c.level);
  if (!(c.level > 0.0 && c.level < 1.0)) r.fail("output", "level", "must lie in (0, 1)");
  long fd = r.integer("output", "forecast_draws", static_cast<long>(c.forecast_draws));
  if (fd < 1) r.fail("output", "forecast_draws", "must be positive");
  c.forecast_draws = static_cast<std::size_t>(fd);
  c.frame_stride = static_cast<int>(r.integer("output", "frame_stride", 1));
  if (c.frame_stride < 1) r.fail("output", "frame_stride", "must be at least 1");
  c.export_trajectory = r.flag("output", "export_trajectory", false);

  if (r.has_section("truth")) read_truth(r, c);

  if (r.has_section("experiment")) read_experiment(r, c);

  r.reject_unknown();

  // Grid and raster alignment are checked here so errors surface at load time.
  Model model = build_model(c);
  if (c.truth) {
    try {
      validate_state(model, c.truth->state);
    } catch (const Error& e) {
      throw ConfigurationError(path.string() + ": [truth] " + e.what());
    }
    if (c.prior_window_set &&
        (c.truth->state.t0 < c.prior.t0_first || c.truth->state.t0 > c.prior.t0_last))
      throw ConfigurationError(path.string() + ": [truth] t0: outside the prior window");
  }
  if (c.prior_window_set && c.truth) {
    try {
      c.prior.validate(c.truth->design.first);
    } catch (const ConfigurationError& e) {
      throw ConfigurationError(path.string() + ": [prior] " + e.what());
    }
  }
  return c;
}

std::vector<double> synthetic_layer(const GridSpec& grid, const std::string& kind,
                                    std::uint64_t seed, std::size_t layer_index) {
  std::mt19937_64 rng(derive_seed(seed, layer_index));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Extent e = grid.extent();
  const double w = e.xmax - e.xmin;
  const double h = e.ymax - e.ymin;
  std::vector<double> out(grid.fine_count(), 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  if (kind == "smooth") {
    // Sum of two random low-frequency waves, rescaled to [0, 1].
    double kx1 = 0.5 + unif(rng), ky1 = 0.5 + unif(rng), p1 = two_pi * unif(rng);
    double kx2 = unif(rng), ky2 = 0.5 + unif(rng), p2 = two_pi * unif(rng);
    for (std::size_t i = 0; i < out.size(); ++i) {
      Point c = grid.center(i);
      double x = (c.x - e.xmin) / w, y = (c.y - e.ymin) / h;
      double v = std::sin(two_pi * (kx1 * x + 0.3 * ky1 * y) * 0.5 + p1) +
                 0.5 * std::cos(two_pi * (0.3 * kx2 * x + ky2 * y) * 0.5 + p2);
      out[i] = (v + 1.5) / 3.0;
    }
  } else if (kind == "patchy") {
    // Indicator of a union of random discs covering roughly a third of the area.
    const double radius = 0.12 * std::min(w, h);
    const int n_discs = std::max(1, static_cast<int>(std::round(0.33 * w * h /
                                                                (std::numbers::pi * radius * radius))));
    std::vector<Point> centers;
    for (int k = 0; k < n_discs; ++k)
      centers.push_back({e.xmin + w * unif(rng), e.ymin + h * unif(rng)});
    for (std::size_t i = 0; i < out.size(); ++i) {
      Point c = grid.center(i);
      for (const auto& d : centers)
        if (std::hypot(c.x - d.x, c.y - d.y) <= radius) {
          out[i] = 1.0;
          break;
        }
    }
  } else {
    throw ConfigurationError("unknown synthetic covariate kind '" + kind + "'");
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!grid.inside(i)) out[i] = 0.0;
  return out;
}

CovariateRaster load_covariates(const RunConfig& c) {
  GridSpec grid = GridSpec::build(c.extent, c.fine_size, c.coarse_size);
  if (c.mask_path) {
    RasterLayer mask = read_ascii_raster(*c.mask_path, grid);
    std::vector<std::uint8_t> valid(grid.fine_count());
    for (std::size_t i = 0; i < valid.size(); ++i)
      valid[i] = mask.valid[i] && mask.values[i] != 0.0 ? 1 : 0;
    grid = grid.restricted(valid);
  }
  std::vector<RasterLayer> layers;
  for (const auto& [name, p] : c.layer_paths) {
    RasterLayer layer = read_ascii_raster(p, grid);
    for (std::size_t i = 0; i < grid.fine_count(); ++i)
      if (grid.inside(i) && !layer.valid[i])
        throw DomainError("covariate layer '" + name + "' has NODATA inside the mask (" +
                          p.string() + ")");
    layers.push_back(std::move(layer));
  }
  CovariateRaster cov(grid);
  std::size_t k = 0;
  for (const auto& [name, p] : c.layer_paths) {
    std::vector<double> v = std::move(layers[k++].values);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!grid.inside(i)) v[i] = 0.0;
    cov.add_layer(name, std::move(v));
  }
  for (std::size_t i = 0; i < c.synthetic_layers.size(); ++i)
    cov.add_layer(c.synthetic_layers[i], synthetic_layer(grid, c.synthetic, c.synthetic_seed, i));
  return cov;
}

Model build_model(const RunConfig& c) {
  return Model{load_covariates(c), c.diffusion_layers, c.growth_layers,
               SusceptibilityDesign(c.species), c.steps_per_month, c.n_events};
}

void write_truth_file(const fs::path& path, const Model& model, const SimTruth& truth) {
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write " + path.string());
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  const ParameterState& s = truth.state;
  out << "[truth]\n";
  out << "alpha0 = " << num(s.alpha0) << "\n";
  for (std::size_t k = 0; k < s.alpha.size(); ++k)
    out << "alpha." << model.diffusion_layers[k] << " = " << num(s.alpha[k]) << "\n";
  out << "gamma0 = " << num(s.gamma0) << "\n";
  for (std::size_t k = 0; k < s.gamma.size(); ++k)
    out << "gamma." << model.growth_layers[k] << " = " << num(s.gamma[k]) << "\n";
  for (std::size_t k = 0; k < s.beta.size(); ++k)
    out << "beta." << model.design.species()[k] << " = " << num(s.beta[k]) << "\n";
  out << "t0 = " << format_month(s.t0) << "\n";
  for (std::size_t j = 0; j < s.sources.size(); ++j) {
    std::string suffix = j == 0 ? "" : "_" + std::to_string(j + 1);
    out << "omega_x" << suffix << " = " << num(s.sources[j].omega.x) << "\n";
    out << "omega_y" << suffix << " = " << num(s.sources[j].omega.y) << "\n";
    out << "theta" << suffix << " = " << num(s.sources[j].theta) << "\n";
  }
  const SamplingDesign& d = truth.design;
  out << "\n[design]\n";
  out << "first = " << format_month(d.first) << "\n";
  out << "last = " << format_month(d.last) << "\n";
  out << "samples_per_year = " << d.samples_per_year << "\n";
  if (d.holdout_last >= d.holdout_first) {
    out << "holdout_first = " << format_month(d.holdout_first) << "\n";
    out << "holdout_last = " << format_month(d.holdout_last) << "\n";
    out << "holdout_samples = " << d.holdout_samples << "\n";
  }
}

}  // namespace invasion
