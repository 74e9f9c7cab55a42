// Batch front end: simulate, fit, summarize, forecast, experiment, validate-config.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "invasion/calendar.hpp"
#include "invasion/config.hpp"
#include "invasion/diffusion.hpp"
#include "invasion/harness.hpp"
#include "invasion/random.hpp"

namespace fs = std::filesystem;
using namespace invasion;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out_dir = "out";
  std::string samples;
  std::string holdout;
};

RunConfig load(const Options& o) {
  RunConfig c;
  try {
    c = load_config(o.config);
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  if (!o.samples.empty()) {
    if (!fs::is_regular_file(o.samples)) throw StageError("config", "samples file not found: " + o.samples);
    c.samples_path = fs::path(o.samples);
  }
  if (!o.holdout.empty()) {
    if (!fs::is_regular_file(o.holdout)) throw StageError("config", "holdout file not found: " + o.holdout);
    c.holdout_path = fs::path(o.holdout);
  }
  if (o.seed) c.mcmc.seed = *o.seed;
  if (o.threads < 1) throw StageError("config", "--threads must be at least 1");
  c.mcmc.threads = o.threads;
  return c;
}

void cmd_simulate(const Options& o) {
  RunConfig c = load(o);
  if (!c.truth) throw StageError("config", o.config + ": simulate needs a [truth] section");
  Model model = build_model(c);
  std::mt19937_64 rng(derive_seed(c.mcmc.seed, 0x5151));
  Dataset data;
  try {
    data = generate_dataset(*c.truth, model, rng);
  } catch (const std::exception& e) {
    throw StageError("simulate", e.what());
  }
  try {
    write_dataset(o.out_dir, model, *c.truth, data);
    if (c.export_trajectory) {
      const SamplingDesign& d = c.truth->design;
      int last = std::max(d.last, d.holdout_last);
      SolverSettings s{model.steps_per_month, c.frame_stride};
      auto traj = solve_homogenized(introduction_events(c.truth->state), rate_fields(model, c.truth->state),
                                    model.grid(), last, s);
      export_trajectory(fs::path(o.out_dir) / "trajectory", traj);
    }
  } catch (const std::exception& e) {
    throw StageError("write", e.what());
  }
  int pos = 0;
  for (const auto& s : data.samples) pos += s.y;
  std::printf("wrote %zu samples (%d positive) and %zu holdout records to %s\n", data.samples.size(),
              pos, data.holdout.size(), o.out_dir.c_str());
}

void cmd_experiment(const Options& o) {
  RunConfig c = load(o);
  if (c.replicates < 1) throw StageError("config", o.config + ": [experiment] replicates is required");
  std::vector<ExperimentSetting> settings;
  if (c.settings.empty()) {
    settings.push_back({fs::path(o.config).stem().string(), c});
  } else {
    for (const auto& p : c.settings) {
      try {
        settings.push_back({p.stem().string(), load_config(p)});
      } catch (const std::exception& e) {
        throw StageError("config", e.what());
      }
    }
  }
  for (auto& s : settings)
    if (!s.config.truth) throw StageError("config", "setting " + s.name + " has no [truth] section");
  std::uint64_t seed = o.seed ? *o.seed : c.mcmc.seed;
  ExperimentReport report;
  try {
    report = run_experiment(settings, c.replicates, seed, o.threads);
  } catch (const std::exception& e) {
    throw StageError("experiment", e.what());
  }
  try {
    write_experiment(fs::path(o.out_dir) / "experiment", report);
  } catch (const std::exception& e) {
    throw StageError("write", e.what());
  }
  for (const auto& s : report.settings)
    std::printf("%s: t0 coverage %.3f, source coverage %.3f, %d/%d failed\n", s.name.c_str(),
                s.t0_coverage, s.omega_coverage, s.failures, s.replicates);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infer the date and place of a pathogen introduction from surveillance records"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "Run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed (overrides [mcmc] seed)");
    sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("-o,--out-dir", o.out_dir, "Output directory");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--samples", o.samples, "Samples CSV (overrides [data] samples)");
    sub->add_option("--holdout", o.holdout, "Holdout CSV (overrides [data] holdout)");
  };

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset from [truth] and [design]");
  auto* fit = app.add_subcommand("fit", "Run the sampler and write chains, summaries, maps and report");
  auto* summarize = app.add_subcommand("summarize", "Recompute summaries and maps from existing chains");
  auto* fcast = app.add_subcommand("forecast", "Score the holdout design with existing chains");
  auto* experiment = app.add_subcommand("experiment", "Run the replicate simulation experiment");
  auto* validate = app.add_subcommand("validate-config", "Check a configuration file and exit");
  for (auto* s : {simulate, fit, summarize, fcast, experiment, validate}) add_common(s);
  for (auto* s : {fit, summarize, fcast}) add_data(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) {
      cmd_simulate(o);
    } else if (*fit) {
      RunConfig c = load(o);
      pipeline_fit(c, o.out_dir);
      std::printf("fit written to %s\n", o.out_dir.c_str());
    } else if (*summarize) {
      pipeline_summarize(load(o), o.out_dir);
      std::printf("summaries written to %s\n", o.out_dir.c_str());
    } else if (*fcast) {
      RunConfig c = load(o);
      pipeline_forecast(c, o.out_dir);
      pipeline_summarize(c, o.out_dir);
      std::printf("forecasts written to %s\n", (fs::path(o.out_dir) / "forecasts").string().c_str());
    } else if (*experiment) {
      cmd_experiment(o);
    } else if (*validate) {
      load(o);
      std::printf("%s: ok\n", o.config.c_str());
    }
  } catch (const StageError& e) {
    std::fprintf(stderr, "invasion: %s\n", e.what());
    return e.stage() == "config" || e.stage() == "load" ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "invasion: %s\n", e.what());
    return 1;
  }
  return 0;
}
