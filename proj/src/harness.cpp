#include "invasion/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "invasion/calendar.hpp"
#include "invasion/diffusion.hpp"
#include "invasion/posterior.hpp"
#include "invasion/random.hpp"
#include "invasion/raster_io.hpp"

namespace invasion {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string full(double v) { return fmt(v, "%.17g"); }

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigurationError("cannot write '" + p.string() + "'");
  return out;
}

std::vector<std::size_t> masked_cells(const GridSpec& grid) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < grid.fine_count(); ++i)
    if (grid.inside(i)) cells.push_back(i);
  return cells;
}

// Per-draw source order by x keeps the labels of exchangeable sources aligned.
std::vector<Source> sorted_sources(std::vector<Source> s) {
  std::sort(s.begin(), s.end(), [](const Source& a, const Source& b) {
    return a.omega.x != b.omega.x ? a.omega.x < b.omega.x : a.omega.y < b.omega.y;
  });
  return s;
}

std::vector<std::string> covariate_layers(const Model& model) {
  std::vector<std::string> out;
  for (const auto& l : model.diffusion_layers)
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  for (const auto& l : model.growth_layers)
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  return out;
}

}  // namespace

std::vector<DesignPoint> draw_design(const Model& model, int first, int last, int n,
                                     std::mt19937_64& rng) {
  if (last < first) throw ConfigurationError("design window is empty");
  if (n < 0) throw ConfigurationError("negative design size");
  const GridSpec& grid = model.grid();
  const auto cells = masked_cells(grid);
  std::uniform_int_distribution<std::size_t> pick_cell(0, cells.size() - 1);
  std::uniform_int_distribution<int> pick_month(first, last);
  std::uniform_int_distribution<std::size_t> pick_species(0, model.design.size() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<DesignPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    DesignPoint p;
    p.date = pick_month(rng);
    Point c = grid.center(cells[pick_cell(rng)]);
    const double h = grid.fine_size();
    p.location = {c.x + (unif(rng) - 0.5) * h, c.y + (unif(rng) - 0.5) * h};
    p.species = model.design.species()[pick_species(rng)];
    out.push_back(std::move(p));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const DesignPoint& a, const DesignPoint& b) { return a.date < b.date; });
  return out;
}

std::vector<SampleRecord> simulate_at(const SimTruth& truth, const Model& model,
                                      std::span<const DesignPoint> points, std::mt19937_64& rng) {
  validate_state(model, truth.state);
  if (points.empty()) return {};
  int last = points.front().date;
  for (const auto& p : points) {
    if (p.date < truth.state.t0) {
      throw CoverageError("design point dated " + format_month(p.date) +
                          " precedes the introduction month " + format_month(truth.state.t0));
    }
    last = std::max(last, p.date);
  }
  RateFields rates = rate_fields(model, truth.state);
  auto events = introduction_events(truth.state);
  SolverSettings settings;
  settings.steps_per_month = model.steps_per_month;
  auto traj = solve_homogenized(events, rates, model.grid(), static_cast<double>(last), settings);
  return simulate_samples(points, traj, truth.state.beta, model.design, rng);
}

Dataset generate_dataset(const SimTruth& truth, const Model& model, std::mt19937_64& rng) {
  const SamplingDesign& d = truth.design;
  const int years = (d.last - d.first) / 12 + 1;
  auto train = draw_design(model, d.first, d.last, d.samples_per_year * years, rng);
  std::vector<DesignPoint> test;
  if (d.holdout_last >= d.holdout_first && d.holdout_samples > 0)
    test = draw_design(model, d.holdout_first, d.holdout_last, d.holdout_samples, rng);
  std::vector<DesignPoint> all = train;
  all.insert(all.end(), test.begin(), test.end());
  auto records = simulate_at(truth, model, all, rng);
  Dataset out;
  out.samples.assign(records.begin(), records.begin() + static_cast<long>(train.size()));
  out.holdout.assign(records.begin() + static_cast<long>(train.size()), records.end());
  return out;
}

void write_dataset(const fs::path& dir, const Model& model, const SimTruth& truth,
                   const Dataset& data) {
  fs::create_directories(dir / "covariates");
  write_samples_csv(dir / "samples.csv", data.samples);
  if (!data.holdout.empty()) write_samples_csv(dir / "holdout.csv", data.holdout);
  write_truth_file(dir / "truth.ini", model, truth);
  for (const auto& name : model.covariates.layer_names())
    write_ascii_raster(dir / "covariates" / (name + ".asc"), model.grid(),
                       model.covariates.layer(name));
}

PriorSpec resolve_prior(const RunConfig& config, std::span<const SampleRecord> samples) {
  PriorSpec p = config.prior;
  if (!config.prior_window_set) {
    PriorSpec w = PriorSpec::with_default_window(samples);
    p.t0_first = w.t0_first;
    p.t0_last = w.t0_last;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Simulation experiment

ReplicateResult run_replicate(const ExperimentSetting& setting, int replicate, std::uint64_t seed) {
  const RunConfig& cfg = setting.config;
  if (!cfg.truth) throw ConfigurationError("setting '" + setting.name + "' has no [truth] section");
  ReplicateResult r;
  r.setting = setting.name;
  r.replicate = replicate;
  r.seed = seed;
  r.t0_true = cfg.truth->state.t0;
  try {
    Model model = build_model(cfg);
    std::mt19937_64 rng(derive_seed(seed, 0));
    SimTruth truth = *cfg.truth;
    truth.design.holdout_last = truth.design.holdout_first - 1;
    Dataset data = generate_dataset(truth, model, rng);
    r.n_samples = static_cast<int>(data.samples.size());
    for (const auto& s : data.samples) r.n_positive += s.y;

    MCMCConfig mc = cfg.mcmc;
    mc.seed = derive_seed(seed, 1);
    mc.threads = 1;
    PriorSpec prior = resolve_prior(cfg, data.samples);
    auto chains = run_mcmc(data.samples, model, prior, mc);

    std::vector<double> t0;
    for (const auto& c : chains)
      for (const auto& d : c.draws) t0.push_back(d.state.t0);
    ScalarSummary s = summarize_scalar("t0", t0, cfg.level);
    r.t0_median = s.median;
    r.t0_lower = s.lower;
    r.t0_upper = s.upper;
    r.t0_covered = s.lower <= r.t0_true && r.t0_true <= s.upper;
    r.t0_error = s.median - r.t0_true;

    auto map = location_posterior_map(chains, model.grid());
    CredibleRegion hpd = hpd_region(map, model.grid(), cfg.level);
    r.hpd_area_km2 = hpd.area_km2;
    auto true_sources = sorted_sources(truth.state.sources);
    std::vector<Point> mean(true_sources.size(), Point{0.0, 0.0});
    std::size_t n = 0;
    for (const auto& c : chains)
      for (const auto& d : c.draws) {
        auto srt = sorted_sources(d.state.sources);
        for (std::size_t j = 0; j < srt.size(); ++j) {
          mean[j].x += srt[j].omega.x;
          mean[j].y += srt[j].omega.y;
        }
        ++n;
      }
    for (std::size_t j = 0; j < true_sources.size(); ++j) {
      const Point& w = true_sources[j].omega;
      r.omega_error_km.push_back(std::hypot(mean[j].x / n - w.x, mean[j].y / n - w.y));
      auto cell = model.grid().locate_masked(w);
      r.omega_covered.push_back(cell && hpd.contains(*cell));
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

ExperimentReport run_experiment(std::span<const ExperimentSetting> settings, int replicates,
                                std::uint64_t seed, int threads) {
  if (replicates < 1) throw ConfigurationError("experiment needs at least one replicate");
  if (settings.empty()) throw ConfigurationError("experiment needs at least one setting");
  if (threads < 1) throw ConfigurationError("threads must be at least 1");
  for (const auto& s : settings)
    if (!s.config.truth) throw ConfigurationError("setting '" + s.name + "' has no [truth] section");

  const std::size_t n_jobs = settings.size() * static_cast<std::size_t>(replicates);
  ExperimentReport report;
  report.level = settings.front().config.level;
  report.replicates.resize(n_jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < n_jobs; job = next++) {
      const std::size_t s = job / static_cast<std::size_t>(replicates);
      const int rep = static_cast<int>(job % static_cast<std::size_t>(replicates));
      const std::uint64_t rs = derive_seed(derive_seed(seed, s), static_cast<std::uint64_t>(rep));
      report.replicates[job] = run_replicate(settings[s], rep, rs);
    }
  };
  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n_jobs));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t s = 0; s < settings.size(); ++s) {
    SettingReport agg;
    agg.name = settings[s].name;
    agg.replicates = replicates;
    std::vector<double> err;
    double t0_cov = 0.0, om_cov = 0.0, om_err = 0.0;
    std::size_t om_n = 0;
    for (int rep = 0; rep < replicates; ++rep) {
      const auto& r = report.replicates[s * static_cast<std::size_t>(replicates) + static_cast<std::size_t>(rep)];
      if (!r.ok) {
        ++agg.failures;
        report.warnings.push_back(agg.name + " replicate " + std::to_string(rep) +
                                  " failed: " + r.error);
        continue;
      }
      err.push_back(r.t0_error);
      t0_cov += r.t0_covered ? 1.0 : 0.0;
      for (std::size_t j = 0; j < r.omega_covered.size(); ++j) {
        om_cov += r.omega_covered[j] ? 1.0 : 0.0;
        om_err += r.omega_error_km[j];
        ++om_n;
      }
    }
    const double n_ok = static_cast<double>(err.size());
    if (!err.empty()) {
      agg.t0_coverage = t0_cov / n_ok;
      agg.omega_coverage = om_n ? om_cov / static_cast<double>(om_n) : 0.0;
      agg.mean_omega_error_km = om_n ? om_err / static_cast<double>(om_n) : 0.0;
      agg.mean_t0_error = std::accumulate(err.begin(), err.end(), 0.0) / n_ok;
      if (err.size() > 1) {
        double ss = 0.0;
        for (double e : err) ss += (e - agg.mean_t0_error) * (e - agg.mean_t0_error);
        agg.se_t0_error = std::sqrt(ss / (n_ok - 1.0) / n_ok);
      }
    }
    if (replicates < 20)
      report.warnings.push_back(agg.name + ": fewer than 20 replicates; coverage is imprecise");
    report.settings.push_back(agg);
  }
  return report;
}

void write_experiment(const fs::path& dir, const ExperimentReport& report) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "replicates.csv");
    out << "setting,replicate,seed,status,n_samples,n_positive,t0_true,t0_median,t0_lower,t0_upper,"
           "t0_covered,t0_error,source,omega_error_km,omega_covered,hpd_area_km2,error\n";
    for (const auto& r : report.replicates) {
      const std::size_t n_src = std::max<std::size_t>(1, r.omega_covered.size());
      for (std::size_t j = 0; j < n_src; ++j) {
        out << r.setting << ',' << r.replicate << ',' << r.seed << ',' << (r.ok ? "ok" : "failed")
            << ',' << r.n_samples << ',' << r.n_positive << ',' << format_month(r.t0_true) << ',';
        if (r.ok) {
          out << full(r.t0_median) << ',' << full(r.t0_lower) << ',' << full(r.t0_upper) << ','
              << (r.t0_covered ? 1 : 0) << ',' << full(r.t0_error) << ',' << j + 1 << ','
              << full(r.omega_error_km[j]) << ',' << (r.omega_covered[j] ? 1 : 0) << ','
              << full(r.hpd_area_km2) << ",\n";
        } else {
          std::string msg = r.error;
          std::replace(msg.begin(), msg.end(), ',', ';');
          std::replace(msg.begin(), msg.end(), '\n', ' ');
          out << ",,,,,,,,," << msg << "\n";
        }
      }
    }
  }
  {
    auto out = open_out(dir / "summary.csv");
    out << "setting,replicates,failures,t0_coverage,omega_coverage,mean_t0_error,se_t0_error,"
           "mean_omega_error_km\n";
    for (const auto& s : report.settings)
      out << s.name << ',' << s.replicates << ',' << s.failures << ',' << full(s.t0_coverage) << ','
          << full(s.omega_coverage) << ',' << full(s.mean_t0_error) << ',' << full(s.se_t0_error)
          << ',' << full(s.mean_omega_error_km) << '\n';
  }
  auto out = open_out(dir / "report.txt");
  out << "simulation experiment\n";
  out << "credible level: " << fmt(report.level) << "\n\n";
  for (const auto& s : report.settings) {
    out << "setting " << s.name << "\n";
    out << "  replicates: " << s.replicates << " (" << s.failures << " failed)\n";
    out << "  t0 interval coverage: " << fmt(s.t0_coverage, "%.4f") << "\n";
    out << "  source HPD region coverage: " << fmt(s.omega_coverage, "%.4f") << "\n";
    out << "  t0 mean signed error: " << fmt(s.mean_t0_error, "%.3f") << " months (SE "
        << fmt(s.se_t0_error, "%.3f") << ")\n";
    out << "  source mean location error: " << fmt(s.mean_omega_error_km, "%.2f") << " km\n";
  }
  if (!report.warnings.empty()) {
    out << "\nwarnings\n";
    for (const auto& w : report.warnings) out << "  " << w << "\n";
  }
}

// ---------------------------------------------------------------------------
// Fit pipeline

namespace {

struct LoadedRun {
  Model model;
  std::vector<SampleRecord> samples;
  PriorSpec prior;
};

LoadedRun load_run(const RunConfig& config) {
  return stage("load", [&] {
    if (!config.samples_path) throw ConfigurationError("no samples file ([data] samples)");
    Model model = build_model(config);
    auto samples = read_samples_csv(*config.samples_path);
    if (samples.empty()) throw ConfigurationError("samples file holds no records");
    SampleIndex::build(model, samples);
    PriorSpec prior = resolve_prior(config, samples);
    prior.validate(std::min_element(samples.begin(), samples.end(), [](const auto& a, const auto& b) {
                     return a.date < b.date;
                   })->date);
    return LoadedRun{std::move(model), std::move(samples), prior};
  });
}

std::vector<ChainOutput> load_chains(const Model& model, const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir / "chains")) throw ConfigurationError("no chains/ directory in " + dir.string());
  for (const auto& e : fs::directory_iterator(dir / "chains")) {
    const auto name = e.path().filename().string();
    if (name.rfind("chain_", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
  }
  if (files.empty()) throw ConfigurationError("no chain files in " + (dir / "chains").string());
  std::sort(files.begin(), files.end());
  std::vector<ChainOutput> chains;
  for (const auto& f : files) chains.push_back(read_chain_csv(f, model));
  std::sort(chains.begin(), chains.end(),
            [](const ChainOutput& a, const ChainOutput& b) { return a.chain_id < b.chain_id; });

  const fs::path sampler = dir / "chains" / "sampler.csv";
  if (fs::is_regular_file(sampler)) {
    std::ifstream in(sampler);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string f[6];
      for (auto& x : f) std::getline(ss, x, ',');
      int id = std::stoi(f[0]);
      for (auto& c : chains) {
        if (c.chain_id != id) continue;
        if (f[1] == "solver_failures") {
          c.solver_failures = std::stol(f[2]);
        } else {
          c.acceptance.push_back({f[1], std::stol(f[2]), std::stol(f[3]), std::stod(f[4])});
        }
      }
    }
  }
  return chains;
}

void write_chains(const Model& model, const std::vector<ChainOutput>& chains, const fs::path& dir) {
  fs::create_directories(dir / "chains");
  for (const auto& c : chains) {
    char name[32];
    std::snprintf(name, sizeof name, "chain_%02d.csv", c.chain_id);
    write_chain_csv(dir / "chains" / name, model, c);
  }
  auto out = open_out(dir / "chains" / "sampler.csv");
  out << "chain_id,block,proposed,accepted,scale\n";
  for (const auto& c : chains) {
    for (const auto& b : c.acceptance)
      out << c.chain_id << ',' << b.name << ',' << b.proposed << ',' << b.accepted << ','
          << full(b.scale) << '\n';
    out << c.chain_id << ",solver_failures," << c.solver_failures << ",0,0\n";
  }
}

struct Score {
  std::string method;
  double rate = 0.0;
  std::size_t n = 0;
};

std::vector<Score> read_scores(const fs::path& dir) {
  std::vector<Score> out;
  std::ifstream in(dir / "forecasts" / "scores.csv");
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string m, r, n;
    std::getline(ss, m, ',');
    std::getline(ss, r, ',');
    std::getline(ss, n, ',');
    out.push_back({m, std::stod(r), static_cast<std::size_t>(std::stoul(n))});
  }
  return out;
}

void write_forecast_csv(const fs::path& p, std::span<const DesignPoint> points,
                        std::span<const double> prob, std::span<const std::string> errors) {
  auto out = open_out(p);
  out << "x_km,y_km,date,species,p_mean,label\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << full(points[i].location.x) << ',' << full(points[i].location.y) << ','
        << format_month(points[i].date) << ',' << points[i].species << ',';
    if (!errors[i].empty() || !std::isfinite(prob[i])) {
      out << "NA,NA\n";
    } else {
      out << full(prob[i]) << ',' << forecast_label(prob[i]) << '\n';
    }
  }
}

// Holdout file with an optional y column.
std::vector<SampleRecord> read_holdout(const fs::path& p, bool& has_y) {
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  has_y = header == "x_km,y_km,date,species,y";
  if (has_y) return read_samples_csv(p);
  std::vector<SampleRecord> out;
  for (const auto& d : read_design_csv(p)) out.push_back({d.location, d.date, d.species, 0});
  return out;
}

}  // namespace

void pipeline_forecast(const RunConfig& config, const fs::path& dir) {
  LoadedRun run = load_run(config);
  if (!config.holdout_path) throw StageError("forecast", "no holdout file ([data] holdout)");
  bool has_y = false;
  auto holdout = stage("forecast", [&] { return read_holdout(*config.holdout_path, has_y); });
  auto chains = stage("summarize", [&] { return load_chains(run.model, dir); });
  stage("forecast", [&] {
    fs::create_directories(dir / "forecasts");
    std::vector<DesignPoint> pts;
    for (const auto& h : holdout) pts.push_back({h.location, h.date, h.species});
    ForecastResult fr = forecast(run.model, chains, pts, config.forecast_draws);
    std::vector<double> p;
    std::vector<std::string> errs;
    for (const auto& r : fr.records) {
      p.push_back(r.p_mean);
      errs.push_back(r.error);
    }
    write_forecast_csv(dir / "forecasts" / "forecast.csv", pts, p, errs);

    auto layers = covariate_layers(run.model);
    GlmBaseline glm = glm_baseline(run.samples, run.model.covariates, layers, run.model.design, pts);
    std::vector<std::string> glm_errs(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (!std::isfinite(glm.predictions[i])) glm_errs[i] = "unscored";
    write_forecast_csv(dir / "forecasts" / "glm_baseline.csv", pts, glm.predictions, glm_errs);
    {
      auto out = open_out(dir / "forecasts" / "glm_coefficients.csv");
      out << "column,estimate,dropped\n";
      for (std::size_t k = 0; k < glm.columns.size(); ++k)
        out << glm.columns[k] << ',' << full(glm.fit.coefficients(static_cast<Eigen::Index>(k)))
            << ',' << (glm.fit.dropped[k] ? 1 : 0) << '\n';
    }

    fs::remove(dir / "forecasts" / "scores.csv");
    if (has_y) {
      std::vector<int> model_labels, glm_labels, truth;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!errs[i].empty() || !glm_errs[i].empty()) continue;
        model_labels.push_back(fr.records[i].label);
        glm_labels.push_back(forecast_label(glm.predictions[i]));
        truth.push_back(holdout[i].y);
      }
      auto out = open_out(dir / "forecasts" / "scores.csv");
      out << "method,misclassification,n\n";
      if (!truth.empty()) {
        out << "model," << full(misclassification_rate(model_labels, truth)) << ',' << truth.size() << '\n';
        out << "glm," << full(misclassification_rate(glm_labels, truth)) << ',' << truth.size() << '\n';
      }
    }
    return 0;
  });
}

void pipeline_summarize(const RunConfig& config, const fs::path& dir) {
  LoadedRun run = load_run(config);
  auto chains = stage("summarize", [&] { return load_chains(run.model, dir); });
  stage("summarize", [&] {
    const Model& model = run.model;
    const GridSpec& grid = model.grid();
    fs::create_directories(dir / "summaries");
    fs::create_directories(dir / "maps");

    PosteriorSummary summary = summarize_marginals(model, chains, config.level);
    {
      auto out = open_out(dir / "summaries" / "parameters.csv");
      out << "name,mean,median,lower,upper\n";
      for (const auto& p : summary.parameters)
        out << p.name << ',' << full(p.mean) << ',' << full(p.median) << ',' << full(p.lower)
            << ',' << full(p.upper) << '\n';
    }
    {
      auto out = open_out(dir / "summaries" / "year_pmf.csv");
      out << "year,probability\n";
      for (const auto& [y, p] : summary.year_pmf) out << y << ',' << full(p) << '\n';
    }
    DiagnosticsReport diag = chain_diagnostics(model, chains);
    {
      auto out = open_out(dir / "summaries" / "diagnostics.csv");
      out << "name,rhat,ess\n";
      for (const auto& d : diag.parameters)
        out << d.name << ',' << (d.rhat_defined ? full(d.rhat) : "NA") << ','
            << (d.ess_defined ? full(d.ess) : "NA") << '\n';
    }
    {
      auto out = open_out(dir / "summaries" / "acceptance.csv");
      out << "chain_id,block,proposed,accepted,rate,scale\n";
      for (const auto& c : chains)
        for (const auto& b : c.acceptance)
          out << c.chain_id << ',' << b.name << ',' << b.proposed << ',' << b.accepted << ','
              << full(b.rate()) << ',' << full(b.scale) << '\n';
    }

    auto map = location_posterior_map(chains, grid);
    write_ascii_raster(dir / "maps" / "location_posterior.asc", grid, map);
    write_ascii_raster(dir / "maps" / "location_posterior_smoothed.asc", grid,
                       location_posterior_map(chains, grid, true));
    CredibleRegion hpd = hpd_region(map, grid, config.level);
    std::vector<double> ind(grid.fine_count(), 0.0);
    for (auto c : hpd.cells) ind[c] = 1.0;
    write_ascii_raster(dir / "maps" / "hpd_region.asc", grid, ind);
    std::optional<ExceedanceRegion> exc;
    if (config.reference) {
      exc = exceedance_region(map, grid, *config.reference);
      std::vector<double> e(grid.fine_count(), 0.0);
      for (auto c : exc->region.cells) e[c] = 1.0;
      write_ascii_raster(dir / "maps" / "exceedance_region.asc", grid, e);
    }
    RateMaps rates = posterior_rate_maps(model, chains);
    write_ascii_raster(dir / "maps" / "mu_mean.asc", grid, rates.mu_mean);
    write_ascii_raster(dir / "maps" / "lambda_mean.asc", grid, rates.lambda_mean);

    std::size_t n_draws = 0;
    for (const auto& c : chains) n_draws += c.draws.size();
    int n_pos = 0, first = run.samples.front().date, last = first;
    for (const auto& s : run.samples) {
      n_pos += s.y;
      first = std::min(first, s.date);
      last = std::max(last, s.date);
    }

    auto out = open_out(dir / "report.txt");
    out << "introduction inference report\n\n";
    out << "samples: " << run.samples.size() << " (" << n_pos << " positive), "
        << format_month(first) << " to " << format_month(last) << "\n";
    out << "grid: " << grid.fine_rows() << " x " << grid.fine_cols() << " fine cells of "
        << fmt(grid.fine_size()) << " km, coarse ratio " << grid.ratio() << ", "
        << grid.masked_count() << " cells in the mask\n";
    out << "introduction window: " << format_month(run.prior.t0_first) << " to "
        << format_month(run.prior.t0_last) << "\n";
    out << "sources: " << model.n_events << "\n";
    out << "chains: " << chains.size() << ", retained draws: " << n_draws << "\n\n";

    for (const auto& p : summary.parameters) {
      if (p.name != "t0") continue;
      out << "introduction month: median " << format_month(static_cast<int>(std::lround(p.median)))
          << ", " << fmt(100.0 * config.level) << "% interval "
          << format_month(static_cast<int>(std::floor(p.lower))) << " to "
          << format_month(static_cast<int>(std::ceil(p.upper))) << "\n";
    }
    auto best = std::max_element(summary.year_pmf.begin(), summary.year_pmf.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    out << "most probable introduction year: " << best->first << " (probability "
        << fmt(best->second, "%.4f") << ")\n";
    out << fmt(100.0 * config.level) << "% HPD region for the source: " << hpd.cells.size()
        << " cells, " << fmt(hpd.area_km2) << " km^2, mass " << fmt(hpd.level, "%.4f") << "\n";
    if (exc) {
      out << "exceedance region: " << exc->region.cells.size() << " cells, "
          << fmt(exc->region.area_km2) << " km^2, mass " << fmt(exc->region.level, "%.4f")
          << ", farthest cell " << fmt(exc->max_distance_km) << " km at bearing "
          << fmt(exc->bearing_deg, "%.1f") << " deg\n";
    }
    out << "\nparameters (mean, median, " << fmt(100.0 * config.level) << "% interval)\n";
    for (const auto& p : summary.parameters)
      out << "  " << p.name << ": " << fmt(p.mean) << ", " << fmt(p.median) << ", [" << fmt(p.lower)
          << ", " << fmt(p.upper) << "]\n";

    double max_rhat = 0.0, min_ess = std::numeric_limits<double>::infinity();
    for (const auto& d : diag.parameters) {
      if (d.rhat_defined) max_rhat = std::max(max_rhat, d.rhat);
      if (d.ess_defined) min_ess = std::min(min_ess, d.ess);
    }
    out << "\ndiagnostics\n";
    out << "  max split-Rhat: " << (max_rhat > 0.0 ? fmt(max_rhat, "%.4f") : "NA") << "\n";
    out << "  min ESS: " << (std::isfinite(min_ess) ? fmt(min_ess, "%.1f") : "NA") << "\n";
    for (const auto& c : chains) {
      if (c.acceptance.empty()) continue;
      out << "  chain " << c.chain_id << " acceptance:";
      for (const auto& b : c.acceptance)
        if (b.proposed > 0) out << " " << b.name << "=" << fmt(b.rate(), "%.3f");
      out << "\n";
    }

    auto scores = read_scores(dir);
    if (!scores.empty()) {
      out << "\nforecast misclassification\n";
      for (const auto& s : scores)
        out << "  " << s.method << ": " << fmt(s.rate, "%.4f") << " (n = " << s.n << ")\n";
    }

    std::vector<std::string> warnings = diag.warnings;
    for (const auto& c : chains) {
      for (const auto& b : c.acceptance)
        if (b.proposed > 0 && b.accepted == 0)
          warnings.push_back("chain " + std::to_string(c.chain_id) + ": block " + b.name +
                             " accepted no proposals after burn-in");
      if (c.solver_failures > 0)
        warnings.push_back("chain " + std::to_string(c.chain_id) + ": " +
                           std::to_string(c.solver_failures) + " proposals rejected after solver blowup");
    }
    std::sort(warnings.begin(), warnings.end());
    warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());
    if (!warnings.empty()) {
      out << "\nwarnings\n";
      for (const auto& w : warnings) out << "  " << w << "\n";
    }
    return 0;
  });
}

void pipeline_fit(const RunConfig& config, const fs::path& dir) {
  LoadedRun run = load_run(config);
  auto chains = stage("mcmc", [&] { return run_mcmc(run.samples, run.model, run.prior, config.mcmc); });
  stage("write", [&] {
    write_chains(run.model, chains, dir);
    return 0;
  });
  if (config.holdout_path) pipeline_forecast(config, dir);
  pipeline_summarize(config, dir);
}

}  // namespace invasion
