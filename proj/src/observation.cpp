#include "invasion/observation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "invasion/calendar.hpp"
#include "invasion/errors.hpp"

namespace invasion {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(where + ": bad number '" + s + "'");
  }
  return v;
}

struct CsvRow {
  DesignPoint point;
  int y = -1;
};

std::vector<CsvRow> read_rows(const std::filesystem::path& path, bool need_y) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  auto header = split(line);
  const std::vector<std::string> expected{"x_km", "y_km", "date", "species", "y"};
  bool has_y = header.size() == 5;
  if (header.size() < 4 || header.size() > 5 ||
      !std::equal(header.begin(), header.end(), expected.begin())) {
    throw ParseError(path.string() + ": header must be x_km,y_km,date,species[,y]");
  }
  if (need_y && !has_y) throw ParseError(path.string() + ": missing y column");

  std::vector<CsvRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(line);
    std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != header.size()) throw ParseError(where + ": wrong field count");
    CsvRow row;
    row.point.location = {parse_number(f[0], where), parse_number(f[1], where)};
    try {
      row.point.date = parse_month(f[2]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (f[3].empty()) throw ParseError(where + ": empty species");
    row.point.species = f[3];
    if (has_y) {
      if (f[4] != "0" && f[4] != "1") throw ParseError(where + ": y must be 0 or 1");
      row.y = f[4] == "1" ? 1 : 0;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

SusceptibilityDesign::SusceptibilityDesign(std::vector<std::string> species_order)
    : species_(std::move(species_order)) {
  if (species_.empty()) throw ConfigurationError("at least one species is required");
  for (std::size_t i = 0; i < species_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (species_[i] == species_[j]) {
        throw ConfigurationError("duplicate species '" + species_[i] + "'");
      }
    }
  }
}

std::size_t SusceptibilityDesign::index(const std::string& species) const {
  auto it = std::find(species_.begin(), species_.end(), species);
  if (it == species_.end()) throw ConfigurationError("unknown species '" + species + "'");
  return static_cast<std::size_t>(it - species_.begin());
}

std::vector<double> SusceptibilityDesign::encode(const std::string& species) const {
  std::vector<double> x(species_.size(), 0.0);
  x[index(species)] = 1.0;
  return x;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double inverse_link(double v) {
  if (v < 0.0 || std::isnan(v)) throw DomainError("link argument must be non-negative");
  if (v == 0.0) return 0.0;
  return normal_cdf(std::log(v));
}

double infection_probability(double u, double linear_susceptibility) {
  if (u < 0.0 || std::isnan(u)) throw DomainError("intensity must be non-negative");
  if (u == 0.0) return 0.0;
  return normal_cdf(std::log(u) + linear_susceptibility);
}

double infection_probability(double u, std::span<const double> x, std::span<const double> beta) {
  if (x.size() != beta.size()) throw ConfigurationError("indicator and beta lengths differ");
  double xb = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) xb += x[k] * beta[k];
  return infection_probability(u, xb);
}

double bernoulli_log_density(int y, double p) {
  p = std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
  return y == 1 ? std::log(p) : std::log1p(-p);
}

double log_likelihood(std::span<const SampleRecord> samples, const IntensityTrajectory& trajectory,
                      std::span<const double> beta, const SusceptibilityDesign& design) {
  if (beta.size() != design.size()) throw ConfigurationError("beta length differs from species count");
  double ll = 0.0;
  for (const auto& s : samples) {
    double u = trajectory.intensity_at(s.location, s.date);
    double p = infection_probability(u, beta[design.index(s.species)]);
    ll += bernoulli_log_density(s.y, p);
  }
  return ll;
}

std::vector<SampleRecord> simulate_samples(std::span<const DesignPoint> points,
                                           const IntensityTrajectory& trajectory,
                                           std::span<const double> beta,
                                           const SusceptibilityDesign& design,
                                           std::mt19937_64& rng) {
  if (beta.size() != design.size()) throw ConfigurationError("beta length differs from species count");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SampleRecord> out;
  out.reserve(points.size());
  for (const auto& dp : points) {
    double u = trajectory.intensity_at(dp.location, dp.date);
    double p = infection_probability(u, beta[design.index(dp.species)]);
    int y = unif(rng) < p ? 1 : 0;
    out.push_back({dp.location, dp.date, dp.species, y});
  }
  return out;
}

std::vector<SampleRecord> read_samples_csv(const std::filesystem::path& path) {
  std::vector<SampleRecord> out;
  for (auto& row : read_rows(path, true)) {
    out.push_back({row.point.location, row.point.date, std::move(row.point.species), row.y});
  }
  return out;
}

std::vector<DesignPoint> read_design_csv(const std::filesystem::path& path) {
  std::vector<DesignPoint> out;
  for (auto& row : read_rows(path, false)) out.push_back(std::move(row.point));
  return out;
}

void write_samples_csv(const std::filesystem::path& path, std::span<const SampleRecord> samples) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.string().c_str(), "w"),
                                                    &std::fclose);
  if (!f) throw ConfigurationError("cannot write '" + path.string() + "'");
  std::fputs("x_km,y_km,date,species,y\n", f.get());
  for (const auto& s : samples) {
    std::fprintf(f.get(), "%.17g,%.17g,%s,%s,%d\n", s.location.x, s.location.y,
                 format_month(s.date).c_str(), s.species.c_str(), s.y);
  }
}

}  // namespace invasion
