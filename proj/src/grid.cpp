#include "invasion/grid.hpp"

#include <cmath>

#include "invasion/errors.hpp"

namespace invasion {

namespace {

int whole_count(double length, double size, const char* what) {
  double n = length / size;
  double r = std::round(n);
  if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, r)) {
    throw ConfigurationError(std::string(what) + " is not a whole number of cells");
  }
  return static_cast<int>(r);
}

}  // namespace

GridSpec GridSpec::build(const Extent& extent, double fine_size, double coarse_size,
                         std::span<const std::uint8_t> mask) {
  if (!(fine_size > 0.0) || !(coarse_size > 0.0)) {
    throw ConfigurationError("cell sizes must be positive");
  }
  int ratio = whole_count(coarse_size, fine_size, "coarse cell size / fine cell size");
  int coarse_cols = whole_count(extent.xmax - extent.xmin, coarse_size, "extent width");
  int coarse_rows = whole_count(extent.ymax - extent.ymin, coarse_size, "extent height");

  GridSpec g;
  g.origin_x_ = extent.xmin;
  g.origin_y_ = extent.ymin;
  g.fine_size_ = fine_size;
  g.ratio_ = ratio;
  g.rows_ = coarse_rows * ratio;
  g.cols_ = coarse_cols * ratio;
  if (mask.empty()) {
    g.mask_.assign(g.fine_count(), 1);
  } else {
    if (mask.size() != g.fine_count()) {
      throw ConfigurationError("mask has " + std::to_string(mask.size()) + " cells, grid has " +
                               std::to_string(g.fine_count()));
    }
    g.mask_.assign(mask.begin(), mask.end());
    for (auto& m : g.mask_) m = m ? 1 : 0;
  }
  g.count_masked();
  return g;
}

void GridSpec::count_masked() {
  masked_ = 0;
  coarse_masked_.assign(coarse_count(), 0);
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    if (mask_[i]) {
      ++masked_;
      ++coarse_masked_[coarse_of(i)];
    }
  }
  if (masked_ == 0) throw DomainError("study-area mask is empty");
}

std::size_t GridSpec::coarse_of(std::size_t fine) const {
  int r = fine_row(fine) / ratio_;
  int c = fine_col(fine) / ratio_;
  return static_cast<std::size_t>(r) * coarse_cols() + c;
}

std::vector<std::size_t> GridSpec::fine_cells_of(std::size_t coarse) const {
  int cr = static_cast<int>(coarse / coarse_cols());
  int cc = static_cast<int>(coarse % coarse_cols());
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(ratio_) * ratio_);
  for (int r = cr * ratio_; r < (cr + 1) * ratio_; ++r) {
    for (int c = cc * ratio_; c < (cc + 1) * ratio_; ++c) out.push_back(fine_index(r, c));
  }
  return out;
}

std::optional<std::size_t> GridSpec::locate(const Point& p) const {
  double fx = (p.x - origin_x_) / fine_size_;
  double fy = (p.y - origin_y_) / fine_size_;
  if (!(fx >= 0.0) || !(fy >= 0.0) || fx > cols_ || fy > rows_) return std::nullopt;
  int col = std::min(static_cast<int>(std::floor(fx)), cols_ - 1);
  int row_from_south = std::min(static_cast<int>(std::floor(fy)), rows_ - 1);
  return fine_index(rows_ - 1 - row_from_south, col);
}

std::optional<std::size_t> GridSpec::locate_masked(const Point& p) const {
  auto cell = locate(p);
  if (cell && !inside(*cell)) return std::nullopt;
  return cell;
}

Point GridSpec::center(std::size_t fine) const {
  int row = fine_row(fine);
  int col = fine_col(fine);
  return {origin_x_ + (col + 0.5) * fine_size_, origin_y_ + (rows_ - row - 0.5) * fine_size_};
}

Extent GridSpec::extent() const {
  return {origin_x_, origin_y_, origin_x_ + cols_ * fine_size_, origin_y_ + rows_ * fine_size_};
}

GridSpec GridSpec::restricted(std::span<const std::uint8_t> valid) const {
  if (valid.size() != fine_count()) throw ConfigurationError("validity raster size mismatch");
  GridSpec g = *this;
  for (std::size_t i = 0; i < g.mask_.size(); ++i) g.mask_[i] = (g.mask_[i] && valid[i]) ? 1 : 0;
  g.count_masked();
  return g;
}

void CovariateRaster::add_layer(const std::string& name, std::vector<double> values) {
  if (name.empty()) throw ConfigurationError("covariate layer needs a name");
  if (layers_.count(name)) throw ConfigurationError("duplicate covariate layer '" + name + "'");
  if (values.size() != grid_.fine_count()) {
    throw ConfigurationError("layer '" + name + "' has " + std::to_string(values.size()) +
                             " cells, grid has " + std::to_string(grid_.fine_count()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (grid_.inside(i) && !std::isfinite(values[i])) {
      throw DomainError("layer '" + name + "' is not finite at masked cell " + std::to_string(i));
    }
  }
  layers_.emplace(name, std::move(values));
}

const std::vector<double>& CovariateRaster::layer(const std::string& name) const {
  auto it = layers_.find(name);
  if (it == layers_.end()) throw ConfigurationError("missing covariate layer '" + name + "'");
  return it->second;
}

std::vector<std::string> CovariateRaster::layer_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : layers_) out.push_back(name);
  return out;
}

HomogenizedField homogenize(std::span<const double> mu_fine, std::span<const double> lambda_fine,
                            const GridSpec& grid) {
  if (mu_fine.size() != grid.fine_count() || lambda_fine.size() != grid.fine_count()) {
    throw ConfigurationError("rate field size does not match grid");
  }
  const std::size_t nc = grid.coarse_count();
  std::vector<double> inv_sum(nc, 0.0);
  std::vector<double> weighted(nc, 0.0);
  for (std::size_t i = 0; i < grid.fine_count(); ++i) {
    if (!grid.inside(i)) continue;
    if (!(mu_fine[i] > 0.0)) {
      throw DomainError("diffusion rate must be positive, got " + std::to_string(mu_fine[i]) +
                        " at fine cell " + std::to_string(i));
    }
    std::size_t k = grid.coarse_of(i);
    inv_sum[k] += 1.0 / mu_fine[i];
    weighted[k] += lambda_fine[i] / mu_fine[i];
  }
  HomogenizedField h;
  h.mu_bar.assign(nc, 0.0);
  h.lambda_bar.assign(nc, 0.0);
  const auto& counts = grid.coarse_masked_counts();
  for (std::size_t k = 0; k < nc; ++k) {
    if (counts[k] == 0) continue;
    h.mu_bar[k] = counts[k] / inv_sum[k];
    h.lambda_bar[k] = weighted[k] / inv_sum[k];
  }
  return h;
}

}  // namespace invasion
