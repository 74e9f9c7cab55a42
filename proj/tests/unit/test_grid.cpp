#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "invasion/errors.hpp"
#include "invasion/grid.hpp"

using namespace invasion;

TEST_CASE("grid shapes") {
  SUBCASE("1000 km square at 10/100 km") {
    auto g = GridSpec::build({0, 0, 1000, 1000}, 10, 100);
    CHECK(g.fine_rows() == 100);
    CHECK(g.fine_cols() == 100);
    CHECK(g.coarse_rows() == 10);
    CHECK(g.coarse_cols() == 10);
    CHECK(g.ratio() == 10);
  }
  SUBCASE("ratio one") {
    auto g = GridSpec::build({0, 0, 30, 30}, 10, 10);
    CHECK(g.fine_rows() == 3);
    CHECK(g.coarse_rows() == 3);
    CHECK(g.ratio() == 1);
  }
  SUBCASE("rectangular") {
    auto g = GridSpec::build({0, 0, 200, 100}, 10, 100);
    CHECK(g.fine_cols() == 20);
    CHECK(g.fine_rows() == 10);
    CHECK(g.coarse_cols() == 2);
    CHECK(g.coarse_rows() == 1);
  }
}

TEST_CASE("every coarse cell holds ratio squared fine cells") {
  auto g = GridSpec::build({0, 0, 120, 80}, 10, 40);
  std::vector<int> seen(g.fine_count(), 0);
  for (std::size_t k = 0; k < g.coarse_count(); ++k) {
    auto cells = g.fine_cells_of(k);
    CHECK(cells.size() == 16);
    for (auto c : cells) {
      CHECK(g.coarse_of(c) == k);
      ++seen[c];
    }
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("grid construction errors") {
  CHECK_THROWS_AS(GridSpec::build({0, 0, 100, 100}, 10, 25), ConfigurationError);
  CHECK_THROWS_AS(GridSpec::build({0, 0, 150, 100}, 10, 100), ConfigurationError);
  CHECK_THROWS_AS(GridSpec::build({0, 0, 100, 100}, 0, 100), ConfigurationError);
  std::vector<std::uint8_t> empty(100, 0);
  CHECK_THROWS_AS(GridSpec::build({0, 0, 100, 100}, 10, 50, empty), DomainError);
  std::vector<std::uint8_t> short_mask(99, 1);
  CHECK_THROWS_AS(GridSpec::build({0, 0, 100, 100}, 10, 50, short_mask), ConfigurationError);
}

TEST_CASE("locate and center are consistent; row 0 is north") {
  auto g = GridSpec::build({100, 200, 140, 240}, 10, 20);
  auto nw = g.locate({101, 239});
  REQUIRE(nw);
  CHECK(*nw == 0);
  auto se = g.locate({139, 201});
  REQUIRE(se);
  CHECK(*se == g.fine_count() - 1);
  for (std::size_t i = 0; i < g.fine_count(); ++i) {
    auto back = g.locate(g.center(i));
    REQUIRE(back);
    CHECK(*back == i);
  }
  CHECK_FALSE(g.locate({99, 210}));
  CHECK_FALSE(g.locate({120, 241}));
}

TEST_CASE("masked lookups") {
  std::vector<std::uint8_t> mask(16, 1);
  mask[5] = 0;
  auto g = GridSpec::build({0, 0, 40, 40}, 10, 20, mask);
  CHECK(g.masked_count() == 15);
  CHECK(g.masked_area() == doctest::Approx(1500.0));
  CHECK_FALSE(g.locate_masked(g.center(5)));
  CHECK(g.locate_masked(g.center(6)));
  CHECK(g.coarse_masked_counts()[0] == 3);
}

TEST_CASE("covariate raster rules") {
  std::vector<std::uint8_t> mask(4, 1);
  mask[3] = 0;
  auto g = GridSpec::build({0, 0, 20, 20}, 10, 20, mask);
  CovariateRaster cov(g);
  cov.add_layer("forest", {0.1, 0.2, 0.3, NAN});
  CHECK(cov.has_layer("forest"));
  CHECK_THROWS_AS(cov.add_layer("forest", {0, 0, 0, 0}), ConfigurationError);
  CHECK_THROWS_AS(cov.add_layer("short", {0, 0, 0}), ConfigurationError);
  CHECK_THROWS_AS(cov.add_layer("bad", {0, NAN, 0, 0}), DomainError);
  CHECK_THROWS_AS(cov.layer("missing"), ConfigurationError);
}

namespace {

GridSpec two_cell_grid() {
  // One 2x2 coarse cell with two masked fine cells.
  std::vector<std::uint8_t> mask{1, 1, 0, 0};
  return GridSpec::build({0, 0, 20, 20}, 10, 20, mask);
}

}  // namespace

TEST_CASE("homogenize hand values") {
  auto g = two_cell_grid();
  SUBCASE("harmonic mean") {
    auto h = homogenize(std::vector<double>{1, 4, 0, 0}, std::vector<double>{0, 0, 0, 0}, g);
    CHECK(h.mu_bar[0] == doctest::Approx(2.0 / (1.0 + 0.25)).epsilon(1e-14));
    CHECK(h.mu_bar[0] == doctest::Approx(1.6).epsilon(1e-14));
    CHECK(h.lambda_bar[0] == 0.0);
  }
  SUBCASE("1/mu weighted growth") {
    auto h = homogenize(std::vector<double>{1, 4, 0, 0}, std::vector<double>{1, 4, 0, 0}, g);
    CHECK(h.lambda_bar[0] == doctest::Approx((1.0 / 1.0 + 4.0 / 4.0) / (1.0 / 1.0 + 1.0 / 4.0)).epsilon(1e-14));
    CHECK(h.lambda_bar[0] == doctest::Approx(1.6).epsilon(1e-14));
  }
  SUBCASE("constant fields are fixed points") {
    auto full = GridSpec::build({0, 0, 40, 40}, 10, 20);
    std::vector<double> mu(16, 3.5), lam(16, -0.25);
    auto h = homogenize(mu, lam, full);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(h.mu_bar[k] == doctest::Approx(3.5).epsilon(1e-14));
      CHECK(h.lambda_bar[k] == doctest::Approx(-0.25).epsilon(1e-14));
    }
  }
  SUBCASE("non-positive mu") {
    CHECK_THROWS_AS(homogenize(std::vector<double>{1, 0, 0, 0}, std::vector<double>(4, 0.0), g),
                    DomainError);
    CHECK_THROWS_AS(homogenize(std::vector<double>{-1, 1, 0, 0}, std::vector<double>(4, 0.0), g),
                    DomainError);
  }
}

TEST_CASE("property: harmonic mean bounds and scaling") {
  auto g = GridSpec::build({0, 0, 80, 80}, 10, 40);
  std::mt19937_64 rng(7);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> mu(g.fine_count()), lam(g.fine_count());
    for (auto& v : mu) v = ln(rng);
    for (auto& v : lam) v = nd(rng);
    auto h = homogenize(mu, lam, g);
    const double k = 0.1 + 5.0 * std::abs(nd(rng));
    std::vector<double> kmu(mu);
    for (auto& v : kmu) v *= k;
    auto hk = homogenize(kmu, lam, g);
    for (std::size_t c = 0; c < g.coarse_count(); ++c) {
      double lo = 1e300, sum = 0.0;
      for (auto f : g.fine_cells_of(c)) {
        lo = std::min(lo, mu[f]);
        sum += mu[f];
      }
      const double arith = sum / 16.0;
      CHECK(h.mu_bar[c] > lo);
      CHECK(h.mu_bar[c] < arith);
      CHECK(hk.mu_bar[c] == doctest::Approx(k * h.mu_bar[c]).epsilon(1e-12));
      CHECK(hk.lambda_bar[c] == doctest::Approx(h.lambda_bar[c]).epsilon(1e-12));
    }
  }
}
