#pragma once

// Minimal binary PGM/PPM emitters for looking at rasters and histograms
// without pulling in an image library. Field rows are stored bottom-up
// (matching the mesh's node numbering), so writers flip vertically to the
// usual top-down image orientation.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latopt/field.hpp"

namespace latopt {

namespace detail {

inline std::ofstream open_image(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  return f;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

}  // namespace detail

// grayscale raster; 1.0 (solid material) renders black on white
inline void write_pgm(const std::string& path, const Field2D& x) {
  if (x.w < 1 || x.h < 1) throw std::invalid_argument("write_pgm: empty field");
  std::ofstream f = detail::open_image(path);
  f << "P5\n" << x.w << " " << x.h << "\n255\n";
  for (int y = x.h - 1; y >= 0; --y)
    for (int ix = 0; ix < x.w; ++ix) {
      const std::uint8_t b = detail::to_byte(1.0 - x.v[y * x.w + ix]);
      f.write(reinterpret_cast<const char*>(&b), 1);
    }
  if (!f) throw std::runtime_error("short write to " + path);
}

// Bar chart of histogram counts. The terminal (pooled) bin draws in red,
// everything else in a dark blue; bars scale to the tallest count.
inline void write_histogram_ppm(const std::string& path, const std::vector<int>& counts,
                                int bar_width = 8, int height = 128) {
  if (counts.empty()) throw std::invalid_argument("write_histogram_ppm: no bins");
  if (bar_width < 1 || height < 8)
    throw std::invalid_argument("write_histogram_ppm: degenerate dimensions");
  const int w = static_cast<int>(counts.size()) * bar_width;
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * height * 3, 255);
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const int bar = counts[b] <= 0 ? 0 : std::max(1, counts[b] * (height - 2) / peak);
    const bool pooled = b + 1 == counts.size();
    for (int y = 0; y < bar; ++y)
      for (int dx = 1; dx < bar_width; ++dx) {  // 1-px gap between bars
        const std::size_t at =
            ((static_cast<std::size_t>(height - 1 - y) * w) + b * bar_width + dx) * 3;
        px[at] = pooled ? 200 : 40;
        px[at + 1] = pooled ? 40 : 60;
        px[at + 2] = pooled ? 40 : 160;
      }
  }
  std::ofstream f = detail::open_image(path);
  f << "P6\n" << w << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

}  // namespace latopt
