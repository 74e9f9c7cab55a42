#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "invasion/grid.hpp"

namespace invasion {

struct AsciiHeader {
  int ncols = 0;
  int nrows = 0;
  double xllcorner = 0.0;
  double yllcorner = 0.0;
  double cellsize = 0.0;
  double nodata = -9999.0;
};

/// One raster layer aligned to a grid's fine cells.
struct RasterLayer {
  std::vector<double> values;       // NaN where the file holds NODATA
  std::vector<std::uint8_t> valid;  // 0 where the file holds NODATA
};

/// Reads a plain-text grid raster (`ncols`, `nrows`, `xllcorner`,
/// `yllcorner`, `cellsize`, `NODATA_value`, then rows from north to south).
/// Throws AlignmentError when the header disagrees with `expected` and
/// ParseError on malformed content.
RasterLayer read_ascii_raster(const std::filesystem::path& path, const GridSpec& expected);

AsciiHeader read_ascii_header(const std::filesystem::path& path);

/// Writes `values` on the grid's fine cells; out-of-mask and non-finite
/// cells are written as NODATA. Values use round-trip precision.
void write_ascii_raster(const std::filesystem::path& path, const GridSpec& grid,
                        std::span<const double> values, double nodata = -9999.0);

}  // namespace invasion
