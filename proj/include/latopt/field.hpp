#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace latopt {

// Dense per-element scalar grid over a rectangular mesh of unit squares.
// ix runs along x (0..w-1), iy along y (0..h-1) with iy=0 at the bottom;
// storage is row-major by iy so a row is contiguous in x.
struct Field2D {
  int w = 0;
  int h = 0;
  std::vector<double> v;

  Field2D() = default;
  Field2D(int w_, int h_, double fill = 0.0) : w(w_), h(h_), v(static_cast<size_t>(w_) * h_, fill) {
    if (w_ <= 0 || h_ <= 0) throw std::invalid_argument("Field2D: non-positive extent");
  }

  double& at(int ix, int iy) { return v[static_cast<size_t>(iy) * w + ix]; }
  double at(int ix, int iy) const { return v[static_cast<size_t>(iy) * w + ix]; }
  size_t size() const { return v.size(); }

  double mean() const {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }

  double max() const {
    double m = v.empty() ? 0.0 : v[0];
    for (double x : v) m = x > m ? x : m;
    return m;
  }

  bool same_shape(const Field2D& o) const { return w == o.w && h == o.h; }
};

}  // namespace latopt
