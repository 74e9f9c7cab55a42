#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "invasion/mcmc.hpp"

namespace fixtures {

/// Square study area with one smooth diffusion layer and one growth layer,
/// both in [0, 1].
inline invasion::Model small_model(double side_km = 200.0, double fine = 10.0, double coarse = 40.0,
                                   std::vector<std::string> species = {"a", "b"}) {
  using namespace invasion;
  auto g = GridSpec::build({0, 0, side_km, side_km}, fine, coarse);
  CovariateRaster cov(g);
  std::vector<double> z(g.fine_count()), w(g.fine_count());
  for (std::size_t i = 0; i < g.fine_count(); ++i) {
    Point p = g.center(i);
    z[i] = 0.5 + 0.5 * std::sin(p.x / side_km * 3.0);
    w[i] = p.y / side_km;
  }
  cov.add_layer("z", z);
  cov.add_layer("w", w);
  return Model{std::move(cov), {"z"}, {"w"}, SusceptibilityDesign(std::move(species)), 30, 1};
}

inline invasion::ParameterState state_at(const invasion::Model& m, invasion::Point omega, int t0,
                                         double theta = 1.0) {
  invasion::ParameterState s;
  s.alpha0 = 4.0;
  s.alpha.assign(m.diffusion_layers.size(), 0.0);
  s.gamma0 = 0.05;
  s.gamma.assign(m.growth_layers.size(), 0.0);
  s.beta.assign(m.design.size(), 0.0);
  s.sources.push_back({omega, theta});
  s.t0 = t0;
  return s;
}

}  // namespace fixtures
