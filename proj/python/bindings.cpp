#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "invasion/calendar.hpp"
#include "invasion/config.hpp"
#include "invasion/diffusion.hpp"
#include "invasion/errors.hpp"
#include "invasion/grid.hpp"
#include "invasion/harness.hpp"
#include "invasion/mcmc.hpp"
#include "invasion/observation.hpp"
#include "invasion/posterior.hpp"

namespace py = pybind11;
using namespace invasion;

PYBIND11_MODULE(_invasion, m) {
  m.doc() = "Introduction date and location inference with ecological diffusion";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigurationError>(m, "ConfigurationError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<AlignmentError>(m, "AlignmentError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<CoverageError>(m, "CoverageError", base.ptr());
  py::register_exception<NumericalBlowup>(m, "NumericalBlowup", base.ptr());

  m.def("parse_month", [](const std::string& s) { return parse_month(s); });
  m.def("format_month", &format_month);

  py::class_<Extent>(m, "Extent")
      .def(py::init([](double xmin, double ymin, double xmax, double ymax) {
             return Extent{xmin, ymin, xmax, ymax};
           }),
           py::arg("xmin"), py::arg("ymin"), py::arg("xmax"), py::arg("ymax"))
      .def_readwrite("xmin", &Extent::xmin)
      .def_readwrite("ymin", &Extent::ymin)
      .def_readwrite("xmax", &Extent::xmax)
      .def_readwrite("ymax", &Extent::ymax);

  py::class_<GridSpec>(m, "GridSpec")
      .def_static(
          "build",
          [](const Extent& e, double fine, double coarse, std::vector<std::uint8_t> mask) {
            return GridSpec::build(e, fine, coarse, mask);
          },
          py::arg("extent"), py::arg("fine_size"), py::arg("coarse_size"),
          py::arg("mask") = std::vector<std::uint8_t>{})
      .def_property_readonly("fine_rows", &GridSpec::fine_rows)
      .def_property_readonly("fine_cols", &GridSpec::fine_cols)
      .def_property_readonly("ratio", &GridSpec::ratio)
      .def_property_readonly("fine_size", &GridSpec::fine_size)
      .def_property_readonly("masked_count", &GridSpec::masked_count)
      .def("locate", [](const GridSpec& g, double x, double y) { return g.locate({x, y}); })
      .def("center", [](const GridSpec& g, std::size_t i) {
        Point p = g.center(i);
        return py::make_tuple(p.x, p.y);
      });

  m.def("homogenize",
        [](const std::vector<double>& mu, const std::vector<double>& lambda, const GridSpec& g) {
          auto h = homogenize(mu, lambda, g);
          return py::make_tuple(h.mu_bar, h.lambda_bar);
        },
        py::arg("mu"), py::arg("lambda_"), py::arg("grid"),
        "Harmonic-mean diffusion and 1/mu-weighted growth per coarse cell.");

  m.def(
      "solve",
      [](const GridSpec& g, std::vector<double> mu, std::vector<double> lambda, double x, double y,
         double t0, double theta, double t_end, int steps_per_month, bool fine_oracle) {
        RateFields rates = make_rate_fields(g, std::move(mu), std::move(lambda));
        std::vector<IntroductionEvent> ev{{{x, y}, t0, theta}};
        SolverSettings s{steps_per_month, 1};
        auto traj = fine_oracle ? solve_fine_oracle(ev, rates, g, t_end, s)
                                : solve_homogenized(ev, rates, g, t_end, s);
        return py::make_tuple(traj.frame_times, traj.frames);
      },
      py::arg("grid"), py::arg("mu"), py::arg("lambda_"), py::arg("x"), py::arg("y"),
      py::arg("t0"), py::arg("theta"), py::arg("t_end"), py::arg("steps_per_month") = 30,
      py::arg("fine_oracle") = false,
      "Solve the diffusion equation from a point source; returns (frame_times, fine frames).");

  m.def("integrate", [](const std::vector<double>& u, const GridSpec& g) {
    return integrate_intensity(u, g);
  });

  m.def("infection_probability",
        py::overload_cast<double, double>(&infection_probability), py::arg("u"),
        py::arg("linear_susceptibility"));
  m.def("normal_cdf", &normal_cdf);

  m.def(
      "update_beta",
      [](const std::vector<double>& beta, const std::vector<double>& u,
         const std::vector<int>& species, const std::vector<int>& y, double sigma,
         std::uint64_t seed, int n_draws) {
        std::mt19937_64 rng(seed);
        std::vector<std::vector<double>> out;
        std::vector<double> b = beta;
        for (int k = 0; k < n_draws; ++k) {
          b = update_beta(b, u, species, y, sigma, rng);
          out.push_back(b);
        }
        return out;
      },
      py::arg("beta"), py::arg("intensity"), py::arg("species"), py::arg("y"),
      py::arg("sigma_beta"), py::arg("seed"), py::arg("n_draws") = 1);

  m.def(
      "hpd_region",
      [](const std::vector<double>& map, const GridSpec& g, double level) {
        auto r = hpd_region(map, g, level);
        return py::make_tuple(r.cells, r.level, r.area_km2);
      },
      py::arg("map"), py::arg("grid"), py::arg("level"));

  m.def("misclassification_rate",
        [](const std::vector<int>& labels, const std::vector<int>& truth) {
          return misclassification_rate(labels, truth);
        });

  m.def(
      "fit_logistic",
      [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
        auto f = fit_logistic(x, y);
        return py::make_tuple(f.coefficients, f.deviance_trace, f.converged);
      },
      py::arg("x"), py::arg("y"));

  m.def("validate_config", [](const std::filesystem::path& p) {
    load_config(p);
    return true;
  });
  m.def(
      "simulate",
      [](const std::filesystem::path& config, const std::filesystem::path& out_dir,
         std::uint64_t seed) {
        RunConfig c = load_config(config);
        if (!c.truth) throw ConfigurationError("config has no [truth] section");
        Model model = build_model(c);
        std::mt19937_64 rng(seed);
        Dataset d = generate_dataset(*c.truth, model, rng);
        write_dataset(out_dir, model, *c.truth, d);
        return d.samples.size();
      },
      py::arg("config"), py::arg("out_dir"), py::arg("seed") = 1);
  m.def(
      "fit",
      [](const std::filesystem::path& config, const std::filesystem::path& out_dir,
         std::optional<std::filesystem::path> samples, std::optional<std::uint64_t> seed) {
        RunConfig c = load_config(config);
        if (samples) c.samples_path = *samples;
        if (seed) c.mcmc.seed = *seed;
        py::gil_scoped_release release;
        pipeline_fit(c, out_dir);
      },
      py::arg("config"), py::arg("out_dir"), py::arg("samples") = py::none(),
      py::arg("seed") = py::none(), "Run the full fit pipeline into out_dir.");
}
