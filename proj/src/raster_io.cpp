#include "invasion/raster_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <string>

#include "invasion/errors.hpp"

namespace invasion {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double to_double(const std::string& token, const std::filesystem::path& path) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError(path.string() + ": non-numeric value '" + token + "'");
  }
  return v;
}

// Reads the six header records; leaves the stream at the first cell value.
AsciiHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  AsciiHeader h;
  bool seen[6] = {};
  bool x_center = false;
  bool y_center = false;
  for (int i = 0; i < 6; ++i) {
    std::string key;
    std::string value;
    if (!(in >> key >> value)) throw ParseError(path.string() + ": truncated header");
    key = lower(key);
    double v = to_double(value, path);
    if (key == "ncols") {
      h.ncols = static_cast<int>(v), seen[0] = true;
    } else if (key == "nrows") {
      h.nrows = static_cast<int>(v), seen[1] = true;
    } else if (key == "xllcorner" || key == "xllcenter") {
      h.xllcorner = v, seen[2] = true, x_center = key == "xllcenter";
    } else if (key == "yllcorner" || key == "yllcenter") {
      h.yllcorner = v, seen[3] = true, y_center = key == "yllcenter";
    } else if (key == "cellsize") {
      h.cellsize = v, seen[4] = true;
    } else if (key == "nodata_value") {
      h.nodata = v, seen[5] = true;
    } else {
      throw ParseError(path.string() + ": unknown header key '" + key + "'");
    }
  }
  if (!std::all_of(std::begin(seen), std::end(seen), [](bool b) { return b; })) {
    throw ParseError(path.string() + ": incomplete header");
  }
  if (h.ncols <= 0 || h.nrows <= 0 || !(h.cellsize > 0.0)) {
    throw ParseError(path.string() + ": non-positive raster dimensions");
  }
  if (x_center) h.xllcorner -= 0.5 * h.cellsize;
  if (y_center) h.yllcorner -= 0.5 * h.cellsize;
  return h;
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open raster '" + path.string() + "'");
  return in;
}

}  // namespace

AsciiHeader read_ascii_header(const std::filesystem::path& path) {
  auto in = open(path);
  return parse_header(in, path);
}

RasterLayer read_ascii_raster(const std::filesystem::path& path, const GridSpec& expected) {
  auto in = open(path);
  AsciiHeader h = parse_header(in, path);

  const double tol = 1e-6 * expected.fine_size();
  if (h.ncols != expected.fine_cols() || h.nrows != expected.fine_rows()) {
    throw AlignmentError(path.string() + ": raster is " + std::to_string(h.nrows) + "x" +
                         std::to_string(h.ncols) + ", grid is " +
                         std::to_string(expected.fine_rows()) + "x" +
                         std::to_string(expected.fine_cols()));
  }
  if (std::abs(h.cellsize - expected.fine_size()) > tol ||
      std::abs(h.xllcorner - expected.origin_x()) > tol ||
      std::abs(h.yllcorner - expected.origin_y()) > tol) {
    throw AlignmentError(path.string() + ": origin or cell size differs from grid");
  }

  RasterLayer layer;
  layer.values.resize(expected.fine_count());
  layer.valid.resize(expected.fine_count());
  std::string token;
  for (std::size_t i = 0; i < expected.fine_count(); ++i) {
    if (!(in >> token)) {
      throw ParseError(path.string() + ": expected " + std::to_string(expected.fine_count()) +
                       " cells, found " + std::to_string(i));
    }
    double v = to_double(token, path);
    bool nodata = v == h.nodata || std::isnan(v);
    layer.values[i] = nodata ? std::numeric_limits<double>::quiet_NaN() : v;
    layer.valid[i] = nodata ? 0 : 1;
  }
  if (in >> token) throw ParseError(path.string() + ": trailing data after last row");
  return layer;
}

void write_ascii_raster(const std::filesystem::path& path, const GridSpec& grid,
                        std::span<const double> values, double nodata) {
  if (values.size() != grid.fine_count()) {
    throw ConfigurationError("raster values do not match grid size");
  }
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.string().c_str(), "w"),
                                                    &std::fclose);
  if (!f) throw ConfigurationError("cannot write raster '" + path.string() + "'");
  std::fprintf(f.get(), "ncols %d\nnrows %d\nxllcorner %.17g\nyllcorner %.17g\n",
               grid.fine_cols(), grid.fine_rows(), grid.origin_x(), grid.origin_y());
  std::fprintf(f.get(), "cellsize %.17g\nNODATA_value %.17g\n", grid.fine_size(), nodata);
  for (int r = 0; r < grid.fine_rows(); ++r) {
    for (int c = 0; c < grid.fine_cols(); ++c) {
      std::size_t i = grid.fine_index(r, c);
      double v = (grid.inside(i) && std::isfinite(values[i])) ? values[i] : nodata;
      std::fprintf(f.get(), c == 0 ? "%.17g" : " %.17g", v);
    }
    std::fputc('\n', f.get());
  }
  if (std::ferror(f.get())) throw ConfigurationError("write failed for '" + path.string() + "'");
}

}  // namespace invasion
