#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "invasion/calendar.hpp"
#include "invasion/diffusion.hpp"
#include "invasion/errors.hpp"

using namespace invasion;

namespace {

RateFields constant_rates(const GridSpec& g, double mu, double lambda) {
  std::vector<double> m(g.fine_count(), 0.0), l(g.fine_count(), 0.0);
  for (std::size_t i = 0; i < g.fine_count(); ++i) {
    if (g.inside(i)) {
      m[i] = mu;
      l[i] = lambda;
    }
  }
  return make_rate_fields(g, std::move(m), std::move(l));
}

double total_mass(const std::vector<double>& u, const GridSpec& g) { return integrate_intensity(u, g); }

// Fraction of mass sitting in the outermost ring of coarse cells.
double border_fraction(const std::vector<double>& cbar, const RateFields& r, const GridSpec& g) {
  auto u = downscale_intensity(cbar, r, g);
  double border = 0.0;
  for (std::size_t i = 0; i < g.fine_count(); ++i) {
    std::size_t k = g.coarse_of(i);
    int cr = static_cast<int>(k) / g.coarse_cols();
    int cc = static_cast<int>(k) % g.coarse_cols();
    if (cr == 0 || cc == 0 || cr == g.coarse_rows() - 1 || cc == g.coarse_cols() - 1) border += u[i];
  }
  return border * g.fine_cell_area() / total_mass(u, g);
}

double relative_l1(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::abs(a[i] - b[i]);
    den += std::abs(b[i]);
  }
  return num / den;
}

}  // namespace

TEST_CASE("diffusion and growth fields") {
  auto g = GridSpec::build({0, 0, 20, 20}, 10, 20);
  CovariateRaster cov(g);
  cov.add_layer("z", std::vector<double>(4, 0.5));
  std::vector<std::string> none;
  std::vector<std::string> z{"z"};

  auto unit = diffusion_field(0.0, std::vector<double>{}, none, cov);
  for (double v : unit) CHECK(v == 1.0);
  auto mu = diffusion_field(std::log(2.0), std::vector<double>{1.0}, z, cov);
  for (double v : mu) CHECK(v == doctest::Approx(2.0 * std::exp(0.5)).epsilon(1e-14));
  CHECK(mu[0] == doctest::Approx(3.2974).epsilon(1e-4));

  auto zero = growth_field(0.0, std::vector<double>{0.0}, z, cov);
  for (double v : zero) CHECK(v == 0.0);
  auto lam = growth_field(-0.1, std::vector<double>{0.4}, z, cov);
  for (double v : lam) CHECK(v == doctest::Approx(0.1).epsilon(1e-14));
  auto decay = growth_field(-1.0, std::vector<double>{0.0}, z, cov);
  for (double v : decay) CHECK(v == -1.0);

  std::vector<std::string> missing{"karst"};
  CHECK_THROWS_AS(diffusion_field(0.0, std::vector<double>{1.0}, missing, cov), ConfigurationError);
  CHECK_THROWS_AS(growth_field(0.0, std::vector<double>{1.0}, missing, cov), ConfigurationError);
  CHECK_THROWS_AS(diffusion_field(0.0, std::vector<double>{1.0, 2.0}, z, cov), ConfigurationError);
}

TEST_CASE("property: mu is positive for any finite coefficients") {
  auto g = GridSpec::build({0, 0, 40, 40}, 10, 20);
  CovariateRaster cov(g);
  std::vector<double> z(16);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::sin(static_cast<double>(i));
  cov.add_layer("z", z);
  std::vector<std::string> names{"z"};
  for (double a0 : {-30.0, -1.0, 0.0, 5.0, 30.0}) {
    for (double a : {-20.0, 0.0, 20.0}) {
      for (double v : diffusion_field(a0, std::vector<double>{a}, names, cov)) CHECK(v > 0.0);
    }
  }
}

TEST_CASE("initial condition places theta in the seeded coarse cell") {
  auto g = GridSpec::build({0, 0, 500, 500}, 10, 100);
  SUBCASE("theta 100, mu 1") {
    auto r = constant_rates(g, 1.0, 0.0);
    std::vector<IntroductionEvent> ev{{{250, 250}, 0.0, 100.0}};
    auto c = initialize_intensity(ev, r, g);
    auto seeded = g.coarse_of(*g.locate({250, 250}));
    for (std::size_t k = 0; k < c.size(); ++k) CHECK(c[k] == doctest::Approx(k == seeded ? 0.01 : 0.0));
    auto u = downscale_intensity(c, r, g);
    CHECK(total_mass(u, g) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(integrate_intensity(u, g.fine_cells_of(seeded), g) == doctest::Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("two events in one cell add") {
    auto r = constant_rates(g, 1.0, 0.0);
    std::vector<IntroductionEvent> ev{{{210, 210}, 3.0, 1.0}, {{290, 290}, 3.0, 1.0}};
    auto c = initialize_intensity(ev, r, g);
    auto u = downscale_intensity(c, r, g);
    CHECK(total_mass(u, g) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(*std::max_element(c.begin(), c.end()) == doctest::Approx(2e-4));
  }
  SUBCASE("theta 50, mu 2") {
    auto r = constant_rates(g, 2.0, 0.0);
    std::vector<IntroductionEvent> ev{{{50, 50}, 0.0, 50.0}};
    auto c = initialize_intensity(ev, r, g);
    CHECK(*std::max_element(c.begin(), c.end()) == doctest::Approx(0.01).epsilon(1e-14));
    CHECK(total_mass(downscale_intensity(c, r, g), g) == doctest::Approx(50.0).epsilon(1e-12));
  }
  SUBCASE("errors") {
    auto r = constant_rates(g, 1.0, 0.0);
    std::vector<IntroductionEvent> outside{{{600, 50}, 0.0, 1.0}};
    CHECK_THROWS_AS(initialize_intensity(outside, r, g), DomainError);
    std::vector<IntroductionEvent> dates{{{50, 50}, 0.0, 1.0}, {{150, 50}, 1.0, 1.0}};
    CHECK_THROWS_AS(initialize_intensity(dates, r, g), ConfigurationError);
    std::vector<IntroductionEvent> massless{{{50, 50}, 0.0, 0.0}};
    CHECK_THROWS_AS(initialize_intensity(massless, r, g), DomainError);
  }
}

TEST_CASE("partially masked cells keep the seeded mass") {
  std::vector<std::uint8_t> mask(100, 1);
  for (int c = 0; c < 5; ++c) mask[c] = 0;  // top row of the first coarse cell
  auto g = GridSpec::build({0, 0, 100, 100}, 10, 50, mask);
  auto r = constant_rates(g, 3.0, 0.0);
  std::vector<IntroductionEvent> ev{{{25, 75}, 0.0, 7.0}};
  auto u = downscale_intensity(initialize_intensity(ev, r, g), r, g);
  CHECK(total_mass(u, g) == doctest::Approx(7.0).epsilon(1e-12));
  for (int c = 0; c < 5; ++c) CHECK(u[static_cast<std::size_t>(c)] == 0.0);
}

TEST_CASE("downscaling") {
  auto g = GridSpec::build({0, 0, 20, 10}, 10, 10);
  SUBCASE("zero state") {
    auto r = constant_rates(g, 1.0, 0.0);
    for (double v : downscale_intensity(std::vector<double>{0.0, 0.0}, r, g)) CHECK(v == 0.0);
  }
  SUBCASE("division by fine mu") {
    auto g2 = GridSpec::build({0, 0, 20, 20}, 10, 20, std::vector<std::uint8_t>{1, 1, 0, 0});
    auto r = make_rate_fields(g2, {1.0, 2.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0});
    auto u = downscale_intensity(std::vector<double>{2.0}, r, g2);
    CHECK(u[0] == 2.0);
    CHECK(u[1] == 1.0);
    CHECK(u[2] == 0.0);
    CHECK(u[3] == 0.0);
  }
  SUBCASE("constant mu gives piecewise constant u") {
    auto g3 = GridSpec::build({0, 0, 40, 40}, 10, 20);
    auto r = constant_rates(g3, 2.5, 0.0);
    auto u = downscale_intensity(std::vector<double>{1.0, 2.0, 3.0, 4.0}, r, g3);
    for (std::size_t i = 0; i < u.size(); ++i) CHECK(u[i] == (g3.coarse_of(i) + 1.0) / 2.5);
  }
}

TEST_CASE("integration") {
  auto g = GridSpec::build({0, 0, 40, 40}, 10, 20);
  std::vector<double> zero(16, 0.0);
  CHECK(integrate_intensity(zero, g) == 0.0);
  std::vector<double> u(16);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = 0.1 * static_cast<double>(i * i);
  std::vector<std::size_t> a{0, 1, 2, 7}, b{3, 9, 15}, ab{0, 1, 2, 7, 3, 9, 15};
  CHECK(integrate_intensity(u, ab, g) ==
        doctest::Approx(integrate_intensity(u, a, g) + integrate_intensity(u, b, g)).epsilon(1e-14));
  CHECK(integrate_intensity(u, std::vector<std::size_t>{}, g) == 0.0);
  auto masked = GridSpec::build({0, 0, 40, 40}, 10, 20, std::vector<std::uint8_t>(16, 1));
  auto holes = masked.restricted([] {
    std::vector<std::uint8_t> v(16, 1);
    v[4] = 0;
    return v;
  }());
  CHECK_THROWS_AS(integrate_intensity(u, std::vector<std::size_t>{4}, holes), DomainError);
}

TEST_CASE("conservation without growth") {
  auto g = GridSpec::build({0, 0, 640, 640}, 10, 40);
  auto r = constant_rates(g, 2.0, 0.0);
  std::vector<IntroductionEvent> ev{{{320, 320}, 0.0, 100.0}};
  SolverSettings s{30, 1};
  auto traj = solve_homogenized(ev, r, g, 1000.0 / 30.0, s);
  std::size_t checked = 0;
  for (std::size_t k = 0; k < traj.frames.size(); ++k) {
    if (border_fraction(traj.coarse_frames[k], r, g) > 1e-12) break;
    CHECK(std::abs(total_mass(traj.frames[k], g) / 100.0 - 1.0) <= 1e-6);
    ++checked;
  }
  CHECK(checked == traj.frames.size());
}

TEST_CASE("uniform growth multiplies mass by the Euler factor each step") {
  auto g = GridSpec::build({0, 0, 640, 640}, 10, 40);
  auto r = constant_rates(g, 10.0, 0.2);
  std::vector<IntroductionEvent> ev{{{320, 320}, 0.0, 3.0}};
  auto traj = solve_homogenized(ev, r, g, 12.0);
  REQUIRE(traj.frames.size() == 13);
  for (std::size_t k = 0; k < traj.frames.size(); ++k) {
    const double expected = 3.0 * std::pow(1.0 + 0.2 * traj.dt, 30.0 * static_cast<double>(k));
    CHECK(total_mass(traj.frames[k], g) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("uniform growth follows the exponential at a fine step") {
  auto g = GridSpec::build({0, 0, 640, 640}, 10, 40);
  auto r = constant_rates(g, 10.0, 0.2);
  std::vector<IntroductionEvent> ev{{{320, 320}, 0.0, 3.0}};
  auto traj = solve_homogenized(ev, r, g, 12.0, SolverSettings{400, 1});
  for (std::size_t k = 0; k < traj.frames.size(); ++k) {
    const double expected = 3.0 * std::exp(0.2 * traj.frame_times[k]);
    CHECK(std::abs(total_mass(traj.frames[k], g) / expected - 1.0) <= 1e-3);
  }
}

TEST_CASE("frames and time window") {
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40);
  auto r = constant_rates(g, 5.0, 0.0);
  std::vector<IntroductionEvent> ev{{{100, 100}, 24.0, 1.0}};
  auto single = solve_homogenized(ev, r, g, 24.0);
  CHECK(single.frames.size() == 1);
  CHECK(single.frame_times[0] == 24.0);
  auto traj = solve_homogenized(ev, r, g, 36.0, SolverSettings{30, 3});
  CHECK(traj.frames.size() == 5);
  CHECK(traj.frame_times.back() == doctest::Approx(36.0));
  CHECK(traj.nearest_frame(25.4) == 0);
  CHECK(traj.nearest_frame(25.6) == 1);
  CHECK_THROWS_AS(traj.nearest_frame(23.0), CoverageError);
  CHECK_THROWS_AS(traj.nearest_frame(37.0), CoverageError);
  CHECK_THROWS_AS(solve_homogenized(ev, r, g, 20.0), ConfigurationError);
}

TEST_CASE("t0 snaps to the solver step") {
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40);
  auto r = constant_rates(g, 5.0, 0.0);
  std::vector<IntroductionEvent> ev{{{100, 100}, 10.0 + 0.4 / 30.0, 1.0}};
  auto traj = solve_homogenized(ev, r, g, 12.0);
  CHECK(traj.t_start == doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("unstable rates halve the step") {
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40);
  auto r = constant_rates(g, 2000.0, 0.0);  // 4 mu / H^2 = 5 per month
  CHECK(coarse_stable_dt(r, g) == doctest::Approx(0.2));
  CHECK(effective_dt(coarse_stable_dt(r, g), 30) == doctest::Approx(1.0 / 30.0));
  auto fast = constant_rates(g, 40000.0, 0.0);  // stable dt 0.01
  const double dt = effective_dt(coarse_stable_dt(fast, g), 30);
  CHECK(dt == doctest::Approx(1.0 / 120.0));
  std::vector<IntroductionEvent> ev{{{100, 100}, 0.0, 1.0}};
  auto traj = solve_homogenized(ev, fast, g, 2.0);
  CHECK(traj.dt == doctest::Approx(1.0 / 120.0));
  for (const auto& f : traj.frames)
    for (double v : f) CHECK(v >= 0.0);
  auto decay = constant_rates(g, 1.0, -100.0);
  CHECK(effective_dt(coarse_stable_dt(decay, g), 30) <= 0.01);
}

TEST_CASE("overflow is reported as a blowup") {
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40);
  auto r = constant_rates(g, 1.0, 2000.0);
  std::vector<IntroductionEvent> ev{{{100, 100}, 0.0, 1.0}};
  try {
    solve_homogenized(ev, r, g, 12.0);
    FAIL("expected a blowup");
  } catch (const NumericalBlowup& e) {
    CHECK(e.step() > 0);
  }
}

TEST_CASE("property: non-negativity and Dirichlet zeros") {
  std::vector<std::uint8_t> mask(400, 1);
  for (int i = 0; i < 400; i += 7) mask[static_cast<std::size_t>(i)] = 0;
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40, mask);
  CovariateRaster cov(g);
  std::vector<double> z(400), w(400);
  for (std::size_t i = 0; i < 400; ++i) {
    z[i] = std::cos(0.3 * static_cast<double>(i));
    w[i] = std::sin(0.2 * static_cast<double>(i));
  }
  cov.add_layer("z", z);
  cov.add_layer("w", w);
  std::vector<std::string> zn{"z"}, wn{"w"};
  for (double a : {-1.0, 0.5, 2.0}) {
    auto r = make_rate_fields(g, diffusion_field(4.0, std::vector<double>{a}, zn, cov),
                              growth_field(-0.05, std::vector<double>{0.3}, wn, cov));
    std::vector<IntroductionEvent> ev{{g.center(g.fine_index(10, 11)), 0.0, 10.0}};
    REQUIRE(g.inside(g.fine_index(10, 11)));
    auto traj = solve_homogenized(ev, r, g, 24.0);
    for (const auto& f : traj.frames) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(f[i] >= 0.0);
        if (!g.inside(i)) CHECK(f[i] == 0.0);
      }
    }
  }
}

TEST_CASE("property: linear in theta") {
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40);
  CovariateRaster cov(g);
  std::vector<double> z(400);
  for (std::size_t i = 0; i < 400; ++i) z[i] = std::cos(0.1 * static_cast<double>(i));
  cov.add_layer("z", z);
  std::vector<std::string> zn{"z"};
  auto r = make_rate_fields(g, diffusion_field(3.0, std::vector<double>{1.0}, zn, cov),
                            growth_field(0.05, std::vector<double>{0.1}, zn, cov));
  std::vector<IntroductionEvent> one{{{75, 125}, 0.0, 1.0}};
  auto base = solve_homogenized(one, r, g, 18.0);
  for (double k : {4.0, 0.125, 3.7, 1e-3}) {
    std::vector<IntroductionEvent> scaled{{{75, 125}, 0.0, k}};
    auto traj = solve_homogenized(scaled, r, g, 18.0);
    for (std::size_t f = 0; f < traj.frames.size(); ++f) {
      for (std::size_t i = 0; i < 400; ++i) {
        const double expected = k * base.frames[f][i];
        if (k == 4.0 || k == 0.125) {
          CHECK(traj.frames[f][i] == expected);
        } else {
          CHECK(traj.frames[f][i] == doctest::Approx(expected).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("property: translation by one coarse cell") {
  auto g = GridSpec::build({0, 0, 800, 800}, 10, 20);
  auto r = constant_rates(g, 50.0, 0.03);
  std::vector<IntroductionEvent> a{{{390, 410}, 0.0, 1.0}};
  std::vector<IntroductionEvent> b{{{410, 410}, 0.0, 1.0}};
  auto ta = solve_homogenized(a, r, g, 3.0);
  auto tb = solve_homogenized(b, r, g, 3.0);
  const int shift = g.ratio();
  for (std::size_t f = 0; f < ta.frames.size(); ++f) {
    const double peak = *std::max_element(ta.frames[f].begin(), ta.frames[f].end());
    for (int row = 0; row < g.fine_rows(); ++row) {
      for (int col = 0; col + shift < g.fine_cols(); ++col) {
        const double va = ta.frames[f][g.fine_index(row, col)];
        const double vb = tb.frames[f][g.fine_index(row, col + shift)];
        CHECK(std::abs(va - vb) <= 1e-12 * peak);
      }
    }
  }
}

TEST_CASE("fine oracle conserves mass and starts from the downscaled state") {
  auto g = GridSpec::build({0, 0, 640, 640}, 10, 80);
  auto r = constant_rates(g, 60.0, 0.0);
  std::vector<IntroductionEvent> ev{{{300, 340}, 0.0, 100.0}};
  auto coarse = solve_homogenized(ev, r, g, 12.0);
  auto fine = solve_fine_oracle(ev, r, g, 12.0);
  REQUIRE(coarse.frames.size() == fine.frames.size());
  CHECK(fine.frames.front() == coarse.frames.front());
  for (const auto& f : fine.frames) CHECK(std::abs(total_mass(f, g) / 100.0 - 1.0) <= 1e-6);
}

TEST_CASE("fine oracle is exact at ratio one for any coefficients") {
  auto g = GridSpec::build({0, 0, 320, 320}, 10, 10);
  CovariateRaster cov(g);
  std::vector<double> z(g.fine_count());
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto p = g.center(i);
    z[i] = std::sin(p.x / 60.0) * std::cos(p.y / 45.0);
  }
  cov.add_layer("z", z);
  std::vector<std::string> zn{"z"};
  auto r = make_rate_fields(g, diffusion_field(3.0, std::vector<double>{1.5}, zn, cov),
                            growth_field(0.02, std::vector<double>{0.05}, zn, cov));
  std::vector<IntroductionEvent> ev{{{155, 165}, 0.0, 10.0}};
  auto coarse = solve_homogenized(ev, r, g, 6.0);
  auto fine = solve_fine_oracle(ev, r, g, 6.0);
  CHECK(relative_l1(coarse.frames.back(), fine.frames.back()) <= 1e-9);
}

TEST_CASE("fine oracle discrepancy shrinks as the coarse cells shrink") {
  std::vector<double> errors;
  for (double coarse_size : {80.0, 40.0, 20.0}) {
    auto g = GridSpec::build({0, 0, 640, 640}, 10, coarse_size);
    CovariateRaster cov(g);
    std::vector<double> z(g.fine_count());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.center(i).x / 640.0;
    cov.add_layer("z", z);
    std::vector<std::string> zn{"z"};
    auto r = make_rate_fields(g, diffusion_field(4.0, std::vector<double>{1.0}, zn, cov),
                              growth_field(0.0, std::vector<double>{0.0}, zn, cov));
    std::vector<IntroductionEvent> ev{{{320, 320}, 0.0, 100.0}};
    auto coarse = solve_homogenized(ev, r, g, 12.0);
    auto fine = solve_fine_oracle(ev, r, g, 12.0);
    errors.push_back(relative_l1(coarse.frames.back(), fine.frames.back()));
  }
  CAPTURE(errors[0]);
  CAPTURE(errors[1]);
  CAPTURE(errors[2]);
  CHECK(errors[0] > errors[1]);
  CHECK(errors[1] > errors[2]);
}

TEST_CASE("fine oracle size limit") {
  auto g = GridSpec::build({0, 0, 1300, 100}, 10, 100);
  auto r = constant_rates(g, 1.0, 0.0);
  std::vector<IntroductionEvent> ev{{{50, 50}, 0.0, 1.0}};
  CHECK_THROWS_AS(solve_fine_oracle(ev, r, g, 1.0), ConfigurationError);
}

TEST_CASE("unit response matches the full solve") {
  auto g = GridSpec::build({0, 0, 400, 400}, 10, 40);
  CovariateRaster cov(g);
  std::vector<double> z(g.fine_count());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::cos(g.center(i).y / 70.0);
  cov.add_layer("z", z);
  std::vector<std::string> zn{"z"};
  auto r = make_rate_fields(g, diffusion_field(4.0, std::vector<double>{-0.5}, zn, cov),
                            growth_field(0.1, std::vector<double>{0.05}, zn, cov));
  const Point omega{215, 185};
  const double theta = 2.5;
  std::vector<IntroductionEvent> ev{{omega, 400.0, theta}};
  auto traj = solve_homogenized(ev, r, g, 430.0);
  UnitResponse unit(g, r, g.coarse_of(*g.locate(omega)), 30);
  unit.extend_to(30);
  CHECK(unit.max_lag() == 30);
  CHECK(unit.dt() == doctest::Approx(traj.dt));
  for (int lag = 0; lag <= 30; ++lag) {
    for (std::size_t k = 0; k < g.coarse_count(); ++k) {
      CHECK(theta * unit.coarse_value(lag, k) ==
            doctest::Approx(traj.coarse_frames[static_cast<std::size_t>(lag)][k]).epsilon(1e-12));
    }
  }
  UnitResponse moved(std::move(unit));
  moved.extend_to(32);
  CHECK(moved.max_lag() == 32);
}

TEST_CASE("trajectory export names frames by month") {
  auto g = GridSpec::build({0, 0, 200, 200}, 10, 40);
  auto r = constant_rates(g, 5.0, 0.0);
  std::vector<IntroductionEvent> ev{{{100, 100}, static_cast<double>(parse_month("2004-06")), 1.0}};
  auto traj = solve_homogenized(ev, r, g, parse_month("2004-08"));
  auto dir = std::filesystem::temp_directory_path() / "invasion_test_export";
  std::filesystem::remove_all(dir);
  export_trajectory(dir, traj);
  for (const char* m : {"2004-06", "2004-07", "2004-08"}) {
    CHECK(std::filesystem::exists(dir / (std::string("u_") + m + ".asc")));
  }
}
