#pragma once

// Dense n-dimensional arrays used by the autodiff graph. Row-major layout,
// shapes as plain int vectors, templated on the scalar so training runs in
// float while gradient checks run in double.

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latopt/rng.hpp"

namespace latopt {

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct ArrayND {
  std::vector<int> shape;
  std::vector<T> data;

  ArrayND() = default;
  explicit ArrayND(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  T scalar() const {
    if (data.size() != 1)
      throw std::logic_error("scalar() on tensor of shape " + shape_str(shape));
    return data[0];
  }
};

// Row-major strides; size-1 dims get stride 0 when broadcasting against a
// larger shape, handled by the caller.
inline std::vector<std::int64_t> row_major_strides(const std::vector<int>& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * shape[i + 1];
  return s;
}

// numpy-style broadcast of two shapes; throws with both shapes named.
inline std::vector<int> broadcast_shape(const std::vector<int>& a,
                                        const std::vector<int>& b,
                                        const char* op) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = ra > rb ? ra : rb;
  std::vector<int> out(r);
  for (int i = 0; i < r; ++i) {
    const int da = i < r - ra ? 1 : a[i - (r - ra)];
    const int db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) +
                                  " and " + shape_str(b) + " do not broadcast");
    out[i] = da > db ? da : db;
  }
  return out;
}

// Strides for reading an input of shape `in` at the coordinates of the
// broadcast output shape `out`: broadcast dims read with stride 0.
inline std::vector<std::int64_t> broadcast_strides(const std::vector<int>& in,
                                                   const std::vector<int>& out) {
  const int r = static_cast<int>(out.size());
  const int off = r - static_cast<int>(in.size());
  const auto in_str = row_major_strides(in);
  std::vector<std::int64_t> s(r, 0);
  for (int i = 0; i < r; ++i) {
    if (i < off) continue;
    s[i] = in[i - off] == 1 ? 0 : in_str[i - off];
  }
  return s;
}

// Sums `g` down to `target` shape by collapsing the dims that were broadcast
// up; the adjoint of broadcasting.
template <typename T>
ArrayND<T> reduce_to_shape(const ArrayND<T>& g, const std::vector<int>& target) {
  if (g.shape == target) return g;
  ArrayND<T> out(target);
  const auto strides = broadcast_strides(target, g.shape);
  const auto gs = row_major_strides(g.shape);
  const int r = g.rank();
  std::vector<int> idx(r, 0);
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    std::int64_t src = 0;
    for (int d = 0; d < r; ++d) src += idx[d] * strides[d];
    out.data[src] += g.data[i];
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < g.shape[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

// Deterministic fills.
template <typename T>
void fill_uniform(ArrayND<T>& a, Rng& rng, double lo, double hi) {
  for (auto& x : a.data) x = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_normal(ArrayND<T>& a, Rng& rng) {
  for (auto& x : a.data) x = static_cast<T>(rng.normal());
}

}  // namespace latopt
