#pragma once

// Boundary-value problem sampling for square design domains.
//
// A Problem pins everything needed to reproduce one optimization task: which
// catalog supports are active, where the unit point load sits, its direction,
// and the volume budget. Sampling is a pure function of the seed so datasets
// can be regenerated bit-for-bit from their manifests.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "latopt/fea.hpp"
#include "latopt/rng.hpp"

namespace latopt {

// Support catalog. Ids 0..7 are point clamps (both dofs) at the corners and
// edge midpoints; ids 8..15 clamp a half-edge segment between two adjacent
// point-catalog locations. Walking counter-clockwise from the origin:
//
//   points  0:(0,0)  1:(n,0)  2:(n,n)  3:(0,n)
//           4:(n/2,0)  5:(n,n/2)  6:(n/2,n)  7:(0,n/2)
//   edges   8:(0,0)-(n/2,0)   9:(n/2,0)-(n,0)   10:(n,0)-(n,n/2)
//           11:(n,n/2)-(n,n)  12:(n,n)-(n/2,n)  13:(n/2,n)-(0,n)
//           14:(0,n)-(0,n/2)  15:(0,n/2)-(0,0)
//
// Together the half-edges cover every boundary node, so any union of catalog
// entries is a valid clamp set.
inline constexpr int kSupportCatalogSize = 16;

// Load directions are drawn from a six-angle grid; augmentation may move a
// record's angle off this grid, in which case its index is recorded as -1.
inline constexpr int kLoadAngleCount = 6;

inline double load_angle_of(int idx) {
  return idx * (std::numbers::pi / 3.0);
}

namespace detail {

inline void check_grid_side(int n) {
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("support catalog needs an even grid side >= 2");
}

}  // namespace detail

// Nodes clamped by one catalog entry, ascending node ids for grid side n.
inline std::vector<int> catalog_nodes(int id, int n) {
  detail::check_grid_side(n);
  if (id < 0 || id >= kSupportCatalogSize)
    throw std::invalid_argument("catalog_nodes: id out of range");
  const int m = n / 2;
  const auto node = [n](int ix, int iy) { return iy * (n + 1) + ix; };
  if (id < 8) {
    static constexpr int kPos[8][2] = {
        {0, 0}, {2, 0}, {2, 2}, {0, 2}, {1, 0}, {2, 1}, {1, 2}, {0, 1}};
    return {node(kPos[id][0] * m, kPos[id][1] * m)};
  }
  // Half-edges: endpoints in units of m, inclusive of both ends.
  static constexpr int kSeg[8][4] = {
      {0, 0, 1, 0}, {1, 0, 2, 0}, {2, 0, 2, 1}, {2, 1, 2, 2},
      {2, 2, 1, 2}, {1, 2, 0, 2}, {0, 2, 0, 1}, {0, 1, 0, 0}};
  const int* s = kSeg[id - 8];
  std::vector<int> out;
  out.reserve(m + 1);
  const int dx = (s[2] > s[0]) - (s[2] < s[0]);
  const int dy = (s[3] > s[1]) - (s[3] < s[1]);
  int ix = s[0] * m, iy = s[1] * m;
  for (int i = 0; i <= m; ++i, ix += dx, iy += dy) out.push_back(node(ix, iy));
  std::sort(out.begin(), out.end());
  return out;
}

// Catalog id permutations under the square's symmetries. rot90 is a quarter
// turn counter-clockwise; mirror_x flips x -> n-x; mirror_y flips y -> n-y.
inline int catalog_rot90(int id) {
  static constexpr int kMap[16] = {1, 2,  3,  0,  5,  6,  7,  4,
                                   10, 11, 12, 13, 14, 15, 8,  9};
  return kMap[id];
}

inline int catalog_mirror_x(int id) {
  static constexpr int kMap[16] = {1, 0,  3,  2,  4,  7,  6,  5,
                                   9, 8,  15, 14, 13, 12, 11, 10};
  return kMap[id];
}

inline int catalog_mirror_y(int id) {
  static constexpr int kMap[16] = {3,  2,  1,  0,  6,  5,  4,  7,
                                   13, 12, 11, 10, 9,  8,  15, 14};
  return kMap[id];
}

// Geometric index maps matching the catalog permutations. Elements live on an
// n x n raster (id ey*n+ex), nodes on the (n+1)^2 grid (id iy*(n+1)+ix).
inline int rot90_element(int e, int n) {
  const int ex = e % n, ey = e / n;
  return ex * n + (n - 1 - ey);
}

inline int rot90_node(int v, int n) {
  const int ix = v % (n + 1), iy = v / (n + 1);
  return ix * (n + 1) + (n - iy);
}

inline int mirror_x_element(int e, int n) {
  const int ex = e % n, ey = e / n;
  return ey * n + (n - 1 - ex);
}

inline int mirror_x_node(int v, int n) {
  const int ix = v % (n + 1), iy = v / (n + 1);
  return iy * (n + 1) + (n - ix);
}

inline int mirror_y_element(int e, int n) {
  const int ex = e % n, ey = e / n;
  return (n - 1 - ey) * n + ex;
}

inline int mirror_y_node(int v, int n) {
  const int ix = v % (n + 1), iy = v / (n + 1);
  return (n - iy) * (n + 1) + ix;
}

struct Problem {
  int resolution = 64;          // elements per side, square domain
  std::vector<int> bc_ids;      // 1..4 distinct catalog entries, ascending
  int load_element = 0;         // boundary element carrying the load cell
  int load_node = 0;            // node the unit point load is applied to
  double load_angle = 0.0;      // radians from +x
  int angle_index = 0;          // grid index of load_angle, -1 if off-grid
  double target_vf = 0.4;
  std::uint64_t seed = 0;

  bool operator==(const Problem&) const = default;
};

// Elements touching the domain boundary, ascending raster ids.
inline std::vector<int> boundary_elements(int n) {
  std::vector<int> out;
  out.reserve(4 * n - 4);
  for (int ey = 0; ey < n; ++ey)
    for (int ex = 0; ex < n; ++ex)
      if (ex == 0 || ey == 0 || ex == n - 1 || ey == n - 1)
        out.push_back(ey * n + ex);
  return out;
}

// The element's corner nodes that lie on the domain boundary, ascending.
inline std::vector<int> element_boundary_nodes(int e, int n) {
  const int ex = e % n, ey = e / n;
  std::vector<int> out;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const int ix = ex + dx, iy = ey + dy;
      if (ix == 0 || iy == 0 || ix == n || iy == n)
        out.push_back(iy * (n + 1) + ix);
    }
  return out;
}

// All nodes clamped by the problem's support set, ascending and deduplicated.
inline std::vector<int> clamped_nodes(const Problem& p) {
  std::vector<int> out;
  for (int id : p.bc_ids) {
    const auto nodes = catalog_nodes(id, p.resolution);
    out.insert(out.end(), nodes.begin(), nodes.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Where a boundary element's load lands: its lowest-indexed boundary node.
// All four corner nodes are equidistant from the element center, so the tie
// rule is the whole rule.
inline int load_node_for_element(int e, int n) {
  const auto nodes = element_boundary_nodes(e, n);
  if (nodes.empty())
    throw std::invalid_argument("load_node_for_element: interior element");
  return nodes.front();
}

// Draws one problem. The draw order is pinned (support count, support ids,
// angle, volume fraction, then the load element) so that a seed identifies
// the problem forever. A draw whose load node is clamped redraws only the
// load element; redrawing the whole problem would skew the support-count
// distribution away from uniform.
inline Problem sample_problem(std::uint64_t seed, int resolution = 64) {
  detail::check_grid_side(resolution);
  Rng rng(seed);
  Problem p;
  p.resolution = resolution;
  p.seed = seed;

  const int n_bc = 1 + rng.uniform_int(4);
  while (static_cast<int>(p.bc_ids.size()) < n_bc) {
    const int id = rng.uniform_int(kSupportCatalogSize);
    if (std::find(p.bc_ids.begin(), p.bc_ids.end(), id) == p.bc_ids.end())
      p.bc_ids.push_back(id);
  }
  std::sort(p.bc_ids.begin(), p.bc_ids.end());

  p.angle_index = rng.uniform_int(kLoadAngleCount);
  p.load_angle = load_angle_of(p.angle_index);
  p.target_vf = rng.uniform(0.30, 0.50);

  const auto fixed = clamped_nodes(p);
  const auto boundary = boundary_elements(resolution);
  constexpr int kMaxLoadTries = 100;
  for (int attempt = 0; attempt < kMaxLoadTries; ++attempt) {
    const int e = boundary[rng.uniform_int(static_cast<int>(boundary.size()))];
    const int v = load_node_for_element(e, resolution);
    if (!std::binary_search(fixed.begin(), fixed.end(), v)) {
      p.load_element = e;
      p.load_node = v;
      return p;
    }
  }
  throw std::runtime_error("sample_problem: no free load site after 100 draws");
}

// Expands a Problem into the solver's terms: clamped dofs plus a unit load
// split into components at the load node.
inline FeaProblem to_fea_problem(const Problem& p) {
  FeaProblem fp;
  fp.nx = p.resolution;
  fp.ny = p.resolution;
  for (int v : clamped_nodes(p)) {
    fp.fixed_dofs.push_back(2 * v);
    fp.fixed_dofs.push_back(2 * v + 1);
  }
  fp.loads.push_back({2 * p.load_node, std::cos(p.load_angle)});
  fp.loads.push_back({2 * p.load_node + 1, std::sin(p.load_angle)});
  return fp;
}

// Square-symmetry ops used for dataset augmentation. Rot90 is a quarter turn
// counter-clockwise.
enum class AugmentOp { kRot90, kRot180, kRot270, kMirrorX, kMirrorY };

namespace detail {

// Angles reachable from the sampling grid under these ops are multiples of
// pi/6. Doing the bookkeeping on that integer lattice keeps four quarter
// turns (or two mirrors) an exact identity; angles off the lattice fall back
// to float arithmetic.
inline double remap_angle(double angle, AugmentOp op) {
  constexpr double kSixth = std::numbers::pi / 6.0;
  const double steps = angle / kSixth;
  const long lattice = std::lround(steps);
  if (std::fabs(steps - static_cast<double>(lattice)) < 1e-9) {
    long m = lattice;
    switch (op) {
      case AugmentOp::kRot90: m += 3; break;
      case AugmentOp::kRot180: m += 6; break;
      case AugmentOp::kRot270: m += 9; break;
      case AugmentOp::kMirrorX: m = 6 - m; break;
      case AugmentOp::kMirrorY: m = -m; break;
    }
    m %= 12;
    if (m < 0) m += 12;
    return m * kSixth;
  }
  double a = angle;
  switch (op) {
    case AugmentOp::kRot90: a += std::numbers::pi / 2.0; break;
    case AugmentOp::kRot180: a += std::numbers::pi; break;
    case AugmentOp::kRot270: a += 1.5 * std::numbers::pi; break;
    case AugmentOp::kMirrorX: a = std::numbers::pi - a; break;
    case AugmentOp::kMirrorY: a = -a; break;
  }
  a = std::fmod(a, 2.0 * std::numbers::pi);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return a;
}

inline int angle_grid_index(double angle) {
  const double step = std::numbers::pi / 3.0;
  const long k = std::lround(angle / step);
  if (std::fabs(angle - static_cast<double>(k) * step) < 1e-9) {
    long idx = k % kLoadAngleCount;
    if (idx < 0) idx += kLoadAngleCount;
    return static_cast<int>(idx);
  }
  return -1;
}

}  // namespace detail

// Transports a problem across one symmetry op: support ids, load element,
// load node, and angle all move together, so a fresh solve of the transformed
// problem reproduces the original compliance.
inline Problem transform_problem(const Problem& p, AugmentOp op) {
  const int n = p.resolution;
  const auto elem_map = [&](int e) {
    switch (op) {
      case AugmentOp::kRot90: return rot90_element(e, n);
      case AugmentOp::kRot180: return rot90_element(rot90_element(e, n), n);
      case AugmentOp::kRot270:
        return rot90_element(rot90_element(rot90_element(e, n), n), n);
      case AugmentOp::kMirrorX: return mirror_x_element(e, n);
      case AugmentOp::kMirrorY: return mirror_y_element(e, n);
    }
    return e;
  };
  const auto node_map = [&](int v) {
    switch (op) {
      case AugmentOp::kRot90: return rot90_node(v, n);
      case AugmentOp::kRot180: return rot90_node(rot90_node(v, n), n);
      case AugmentOp::kRot270:
        return rot90_node(rot90_node(rot90_node(v, n), n), n);
      case AugmentOp::kMirrorX: return mirror_x_node(v, n);
      case AugmentOp::kMirrorY: return mirror_y_node(v, n);
    }
    return v;
  };
  const auto id_map = [&](int id) {
    switch (op) {
      case AugmentOp::kRot90: return catalog_rot90(id);
      case AugmentOp::kRot180: return catalog_rot90(catalog_rot90(id));
      case AugmentOp::kRot270:
        return catalog_rot90(catalog_rot90(catalog_rot90(id)));
      case AugmentOp::kMirrorX: return catalog_mirror_x(id);
      case AugmentOp::kMirrorY: return catalog_mirror_y(id);
    }
    return id;
  };

  Problem q = p;
  for (auto& id : q.bc_ids) id = id_map(id);
  std::sort(q.bc_ids.begin(), q.bc_ids.end());
  q.load_element = elem_map(p.load_element);
  q.load_node = node_map(p.load_node);
  q.load_angle = detail::remap_angle(p.load_angle, op);
  q.angle_index = detail::angle_grid_index(q.load_angle);
  return q;
}

}  // namespace latopt
