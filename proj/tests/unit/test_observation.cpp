#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>

#include "invasion/calendar.hpp"
#include "invasion/errors.hpp"
#include "invasion/observation.hpp"

using namespace invasion;
namespace fs = std::filesystem;

namespace {

// Independent reference for the standard normal CDF.
double phi(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

double phi_inverse(double p) { return boost::math::quantile(boost::math::normal(), p); }

// Trajectory over months [0, 12] holding the same fine field in every frame.
IntensityTrajectory flat_trajectory(const GridSpec& g, double u) {
  IntensityTrajectory t{g, 0.0, 12.0, 1.0 / 30.0, {}, {}, {}};
  for (int m = 0; m <= 12; ++m) {
    t.frame_times.push_back(m);
    t.frames.emplace_back(g.fine_count(), u);
  }
  return t;
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "invasion_test_observation";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("inverse link") {
  CHECK(inverse_link(1.0) == 0.5);
  CHECK(inverse_link(0.0) == 0.0);
  CHECK(inverse_link(std::exp(1.0)) == doctest::Approx(phi(1.0)).epsilon(1e-14));
  CHECK(inverse_link(std::exp(1.0)) == doctest::Approx(0.8413).epsilon(1e-4));
  CHECK_THROWS_AS(inverse_link(-1e-300), DomainError);
}

TEST_CASE("infection probability") {
  std::vector<double> beta{0.0, 1.0, -2.0};
  std::vector<double> x0{1, 0, 0}, x1{0, 1, 0};
  CHECK(infection_probability(1.0, x0, beta) == 0.5);
  CHECK(infection_probability(0.0, x1, beta) == 0.0);
  CHECK(infection_probability(0.0, 50.0) == 0.0);
  CHECK(infection_probability(1.0, x1, beta) == doctest::Approx(phi(1.0)).epsilon(1e-14));
  CHECK_THROWS_AS(infection_probability(-1.0, 0.0), DomainError);
  CHECK_THROWS_AS(infection_probability(1.0, std::vector<double>{1.0}, beta), ConfigurationError);
}

TEST_CASE("property: link identity over the u and x'beta grid") {
  double worst = 0.0;
  for (int i = 0; i <= 120; ++i) {
    const double u = std::pow(10.0, -6.0 + 12.0 * i / 120.0);
    for (int j = 0; j <= 100; ++j) {
      const double b = -10.0 + 20.0 * j / 100.0;
      worst = std::max(worst, std::abs(inverse_link(u * std::exp(b)) - infection_probability(u, b)));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("property: probability increases with intensity and susceptibility") {
  for (double b : {-5.0, 0.0, 3.0}) {
    double prev = 0.0;
    for (int i = 0; i <= 60; ++i) {
      const double p = infection_probability(std::pow(10.0, -3.0 + 0.1 * i), b);
      if (prev < 1.0) CHECK(p > prev);
      else CHECK(p == 1.0);
      prev = p;
    }
  }
  for (double u : {0.01, 1.0, 10.0}) {
    double prev = 0.0;
    for (int j = 0; j <= 40; ++j) {
      const double p = infection_probability(u, -4.0 + 0.2 * j);
      CHECK(p > prev);
      prev = p;
    }
  }
}

TEST_CASE("species design is one-hot") {
  SusceptibilityDesign d({"mylu", "epfu", "myse", "pesu"});
  CHECK(d.size() == 4);
  for (const auto& sp : d.species()) {
    auto x = d.encode(sp);
    CHECK(std::count(x.begin(), x.end(), 1.0) == 1);
    CHECK(std::count(x.begin(), x.end(), 0.0) == 3);
    CHECK(x[d.index(sp)] == 1.0);
  }
  CHECK_THROWS_AS(d.index("other"), ConfigurationError);
  CHECK_THROWS_AS(SusceptibilityDesign({"a", "b", "a"}), ConfigurationError);
  CHECK_THROWS_AS(SusceptibilityDesign({}), ConfigurationError);
}

TEST_CASE("log likelihood") {
  auto g = GridSpec::build({0, 0, 40, 40}, 10, 20);
  SusceptibilityDesign d({"a", "b"});
  SUBCASE("all p one half") {
    auto t = flat_trajectory(g, 1.0);
    std::vector<SampleRecord> s;
    for (int i = 0; i < 9; ++i) s.push_back({{5.0 + 3 * i, 20}, i, i % 2 ? "a" : "b", i % 3 == 0});
    std::vector<double> beta{0.0, 0.0};
    CHECK(log_likelihood(s, t, beta, d) == doctest::Approx(-9.0 * std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("clamped zero probability") {
    auto t = flat_trajectory(g, 0.0);
    std::vector<SampleRecord> s{{{5, 5}, 3, "a", 1}};
    std::vector<double> beta{0.0, 0.0};
    const double ll = log_likelihood(s, t, beta, d);
    CHECK(std::isfinite(ll));
    CHECK(ll == doctest::Approx(std::log(1e-12)).epsilon(1e-12));
  }
  SUBCASE("hand values") {
    auto t = flat_trajectory(g, 1.0);
    std::vector<SampleRecord> s{{{5, 5}, 2, "a", 1}, {{15, 25}, 7, "b", 0}};
    std::vector<double> beta{phi_inverse(0.8), phi_inverse(0.3)};
    CHECK(log_likelihood(s, t, beta, d) == doctest::Approx(std::log(0.8) + std::log(0.7)).epsilon(1e-12));
  }
  SUBCASE("coverage") {
    auto t = flat_trajectory(g, 1.0);
    std::vector<SampleRecord> s{{{5, 5}, 13, "a", 1}};
    std::vector<double> beta{0.0, 0.0};
    CHECK_THROWS_AS(log_likelihood(s, t, beta, d), CoverageError);
  }
}

TEST_CASE("simulated outcomes") {
  auto g = GridSpec::build({0, 0, 40, 40}, 10, 20);
  SusceptibilityDesign d({"a"});
  std::vector<DesignPoint> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back({{0.5 + (i % 40), 0.5 + (i % 37)}, i % 13, "a"});
  std::mt19937_64 rng(99);
  SUBCASE("no pathogen") {
    auto s = simulate_samples(pts, flat_trajectory(g, 0.0), std::vector<double>{3.0}, d, rng);
    for (const auto& r : s) CHECK(r.y == 0);
  }
  SUBCASE("near-certain infection") {
    auto s = simulate_samples(pts, flat_trajectory(g, 1.0), std::vector<double>{7.1}, d, rng);
    for (const auto& r : s) CHECK(r.y == 1);
  }
  SUBCASE("binomial mean") {
    auto s = simulate_samples(pts, flat_trajectory(g, 1.0), std::vector<double>{phi_inverse(0.25)}, d, rng);
    double mean = 0.0;
    for (const auto& r : s) mean += r.y;
    mean /= static_cast<double>(s.size());
    const double se = std::sqrt(0.25 * 0.75 / 10000.0);
    CHECK(std::abs(mean - 0.25) <= 3.0 * se);
  }
  SUBCASE("reproducible") {
    std::mt19937_64 a(5), b(5);
    auto sa = simulate_samples(pts, flat_trajectory(g, 0.7), std::vector<double>{0.1}, d, a);
    auto sb = simulate_samples(pts, flat_trajectory(g, 0.7), std::vector<double>{0.1}, d, b);
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].y == sb[i].y);
  }
}

TEST_CASE("property: the single-coefficient MLE recovers the truth") {
  auto g = GridSpec::build({0, 0, 40, 40}, 10, 20);
  SusceptibilityDesign d({"a", "b"});
  auto t = flat_trajectory(g, 0.6);
  std::mt19937_64 rng(2024);
  std::vector<DesignPoint> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back({{0.5 + (i % 40), 0.5 + (i % 39)}, i % 12, i % 2 ? "a" : "b"});
  const double truth = 0.7;
  std::vector<double> beta{truth, -0.4};
  auto samples = simulate_samples(pts, t, beta, d, rng);
  auto negative = [&](double b) {
    std::vector<double> trial{b, -0.4};
    return -log_likelihood(samples, t, trial, d);
  };
  const double mle = boost::math::tools::brent_find_minima(negative, -5.0, 5.0, 40).first;
  CHECK(std::abs(mle - truth) < 0.05);
}

TEST_CASE("sample CSV round trip and errors") {
  std::vector<SampleRecord> s{{{12.25, -3.5}, parse_month("2008-03"), "mylu", 1},
                              {{1.0 / 3.0, 400.0}, parse_month("1969-12"), "epfu", 0}};
  auto p = scratch("samples.csv");
  write_samples_csv(p, s);
  auto back = read_samples_csv(p);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].location.x == s[i].location.x);
    CHECK(back[i].location.y == s[i].location.y);
    CHECK(back[i].date == s[i].date);
    CHECK(back[i].species == s[i].species);
    CHECK(back[i].y == s[i].y);
  }
  auto design = read_design_csv(p);
  CHECK(design.size() == 2);

  auto write = [](const fs::path& q, const std::string& text) {
    std::ofstream(q) << text;
    return q;
  };
  CHECK_THROWS_AS(read_samples_csv(write(scratch("h.csv"), "x,y,date,species,y\n")), ParseError);
  CHECK_THROWS_AS(read_samples_csv(write(scratch("y.csv"), "x_km,y_km,date,species,y\n1,2,2008-01,a,2\n")),
                  ParseError);
  CHECK_THROWS_AS(read_samples_csv(write(scratch("d.csv"), "x_km,y_km,date,species,y\n1,2,2008-13,a,1\n")),
                  ParseError);
  CHECK_THROWS_AS(read_samples_csv(write(scratch("n.csv"), "x_km,y_km,date,species,y\n1,zz,2008-01,a,1\n")),
                  ParseError);
  CHECK_THROWS_AS(read_samples_csv(write(scratch("noy.csv"), "x_km,y_km,date,species\n1,2,2008-01,a\n")),
                  ParseError);
  CHECK(read_design_csv(write(scratch("design.csv"), "x_km,y_km,date,species\n1,2,2008-01,a\n")).size() == 1);
}
