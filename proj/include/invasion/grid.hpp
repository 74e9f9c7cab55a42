#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace invasion {

struct Extent {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Two-resolution raster discretization of the study area.
///
/// Fine cells are indexed row-major with row 0 at the north edge, matching
/// the plain-text raster layout. Coarse cells group `ratio() x ratio()` fine
/// cells and are indexed the same way. Cells outside the mask are permanent
/// zeros for every field defined on the grid.
class GridSpec {
 public:
  /// Throws ConfigurationError when the resolutions do not nest or the
  /// extent is not a whole number of coarse cells, DomainError when the mask
  /// is empty. An empty `mask` span means every cell is inside.
  static GridSpec build(const Extent& extent, double fine_size, double coarse_size,
                        std::span<const std::uint8_t> mask = {});

  double origin_x() const { return origin_x_; }
  double origin_y() const { return origin_y_; }
  double fine_size() const { return fine_size_; }
  double coarse_size() const { return fine_size_ * ratio_; }
  int ratio() const { return ratio_; }
  int fine_rows() const { return rows_; }
  int fine_cols() const { return cols_; }
  int coarse_rows() const { return rows_ / ratio_; }
  int coarse_cols() const { return cols_ / ratio_; }
  std::size_t fine_count() const { return static_cast<std::size_t>(rows_) * cols_; }
  std::size_t coarse_count() const {
    return static_cast<std::size_t>(coarse_rows()) * coarse_cols();
  }
  double fine_cell_area() const { return fine_size_ * fine_size_; }
  double coarse_cell_area() const { return coarse_size() * coarse_size(); }

  const std::vector<std::uint8_t>& mask() const { return mask_; }
  bool inside(std::size_t fine) const { return mask_[fine] != 0; }
  std::size_t masked_count() const { return masked_; }
  double masked_area() const { return static_cast<double>(masked_) * fine_cell_area(); }

  std::size_t fine_index(int row, int col) const {
    return static_cast<std::size_t>(row) * cols_ + col;
  }
  int fine_row(std::size_t fine) const { return static_cast<int>(fine / cols_); }
  int fine_col(std::size_t fine) const { return static_cast<int>(fine % cols_); }
  std::size_t coarse_of(std::size_t fine) const;
  std::vector<std::size_t> fine_cells_of(std::size_t coarse) const;
  /// Masked fine cells per coarse cell.
  const std::vector<int>& coarse_masked_counts() const { return coarse_masked_; }

  /// Fine cell holding a planar location, or nullopt outside the extent.
  /// Points on an interior cell edge belong to the cell east/south of it.
  std::optional<std::size_t> locate(const Point& p) const;
  /// Fine cell holding `p` if it is also inside the mask.
  std::optional<std::size_t> locate_masked(const Point& p) const;
  Point center(std::size_t fine) const;
  Extent extent() const;

  /// Same grid with the mask further restricted to `valid` cells.
  GridSpec restricted(std::span<const std::uint8_t> valid) const;

 private:
  GridSpec() = default;
  void count_masked();

  double origin_x_ = 0.0;
  double origin_y_ = 0.0;
  double fine_size_ = 1.0;
  int ratio_ = 1;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> mask_;
  std::vector<int> coarse_masked_;
  std::size_t masked_ = 0;
};

/// Named per-fine-cell covariate layers sharing one grid.
class CovariateRaster {
 public:
  explicit CovariateRaster(GridSpec grid) : grid_(std::move(grid)) {}

  const GridSpec& grid() const { return grid_; }
  /// Throws ConfigurationError on a duplicate name or wrong length and
  /// DomainError when a masked cell is not finite.
  void add_layer(const std::string& name, std::vector<double> values);
  bool has_layer(const std::string& name) const { return layers_.count(name) != 0; }
  /// Throws ConfigurationError when the layer does not exist.
  const std::vector<double>& layer(const std::string& name) const;
  std::vector<std::string> layer_names() const;

 private:
  GridSpec grid_;
  std::map<std::string, std::vector<double>> layers_;
};

/// Coarse-cell coefficients of the upscaled equation.
struct HomogenizedField {
  std::vector<double> mu_bar;      // km^2/month, 0 for coarse cells outside the mask
  std::vector<double> lambda_bar;  // 1/month
};

/// Harmonic-mean diffusion and 1/mu-weighted growth over the masked fine
/// cells of each coarse cell. Throws DomainError if any masked mu <= 0.
HomogenizedField homogenize(std::span<const double> mu_fine, std::span<const double> lambda_fine,
                            const GridSpec& grid);

}  // namespace invasion
