#pragma once

// Independent reference implementations used only by the test suite. These
// deliberately share no code with the library: stiffness comes from numeric
// quadrature instead of the closed form, linear systems are solved densely
// by hand-rolled Gaussian elimination or by conjugate gradients instead of
// a sparse factorization, and labeling uses an explicit flood fill.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracle {

// ---- element stiffness by 2x2 Gauss quadrature -------------------------

// unit-square plane-stress quad, nodes (0,0),(1,0),(1,1),(0,1), E=1
inline std::array<std::array<double, 8>, 8> quad_stiffness(double nu) {
  std::array<std::array<double, 8>, 8> ke{};
  const double g = 1.0 / std::sqrt(3.0);
  const double gp[2] = {-g, g};
  for (double xi : gp) {
    for (double et : gp) {
      // shape function derivatives in natural coords, chain rule to x,y
      const double dxi[4] = {-(1 - et) / 4, (1 - et) / 4, (1 + et) / 4, -(1 + et) / 4};
      const double det[4] = {-(1 - xi) / 4, -(1 + xi) / 4, (1 + xi) / 4, (1 - xi) / 4};
      double dx[4], dy[4];
      for (int i = 0; i < 4; ++i) {
        dx[i] = dxi[i] * 2.0;  // dxi/dx = 2 on a unit square
        dy[i] = det[i] * 2.0;
      }
      double b[3][8] = {};
      for (int i = 0; i < 4; ++i) {
        b[0][2 * i] = dx[i];
        b[1][2 * i + 1] = dy[i];
        b[2][2 * i] = dy[i];
        b[2][2 * i + 1] = dx[i];
      }
      const double c = 1.0 / (1.0 - nu * nu);
      const double d[3][3] = {{c, c * nu, 0}, {c * nu, c, 0}, {0, 0, c * (1 - nu) / 2}};
      const double detj = 0.25;  // weight 1 per point
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
          double s = 0.0;
          for (int a = 0; a < 3; ++a)
            for (int bb = 0; bb < 3; ++bb) s += b[a][i] * d[a][bb] * b[bb][j];
          ke[i][j] += s * detj;
        }
    }
  }
  return ke;
}

// ---- dense linear algebra ----------------------------------------------

// Gaussian elimination with partial pivoting; a is n*n row-major, b length n.
inline std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    if (std::fabs(a[piv * n + col]) < 1e-14) throw std::runtime_error("dense_solve: singular matrix");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double m = a[r * n + col] / a[col * n + col];
      if (m == 0.0) continue;
      for (int c = col; c < n; ++c) a[r * n + c] -= m * a[col * n + c];
      b[r] -= m * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * x[c];
    x[r] = s / a[r * n + r];
  }
  return x;
}

// Assembles the full penalized stiffness densely from quadrature element
// matrices, pins fixed dofs by identity rows, and solves. Mesh conventions
// mirror the library's (unit squares, node-major numbering) because they
// describe the same physical problem, but all code paths are local.
struct DenseFea {
  int nx, ny;
  std::vector<int> fixed;
  std::vector<std::pair<int, double>> loads;

  int node(int ix, int iy) const { return iy * (nx + 1) + ix; }
  int ndof() const { return 2 * (nx + 1) * (ny + 1); }

  // dens is row-major nx*ny (iy*nx+ix); e(x) = emin + x^p (e0-emin)
  std::vector<double> solve(const std::vector<double>& dens, double e0, double emin,
                            double nu, double penal) const {
    const int n = ndof();
    std::vector<double> k(static_cast<size_t>(n) * n, 0.0);
    const auto ke = quad_stiffness(nu);
    for (int ey = 0; ey < ny; ++ey)
      for (int ex = 0; ex < nx; ++ex) {
        const double e = emin + std::pow(dens[static_cast<size_t>(ey) * nx + ex], penal) * (e0 - emin);
        const int nd[4] = {node(ex, ey), node(ex + 1, ey), node(ex + 1, ey + 1), node(ex, ey + 1)};
        int dof[8];
        for (int i = 0; i < 4; ++i) {
          dof[2 * i] = 2 * nd[i];
          dof[2 * i + 1] = 2 * nd[i] + 1;
        }
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) k[static_cast<size_t>(dof[i]) * n + dof[j]] += e * ke[i][j];
      }
    std::vector<double> f(n, 0.0);
    for (auto [d, v] : loads) f[d] += v;
    for (int d : fixed) {
      for (int c = 0; c < n; ++c) {
        k[static_cast<size_t>(d) * n + c] = 0.0;
        k[static_cast<size_t>(c) * n + d] = 0.0;
      }
      k[static_cast<size_t>(d) * n + d] = 1.0;
      f[d] = 0.0;
    }
    return dense_solve(std::move(k), std::move(f));
  }

  double compliance(const std::vector<double>& u) const {
    double c = 0.0;
    for (auto [d, v] : loads) c += v * u[d];
    return c;
  }
};

// ---- centroid stress recovery --------------------------------------------

struct CenterStress {
  double sx, sy, txy;
  double von_mises() const { return std::sqrt(sx * sx + sy * sy - sx * sy + 3.0 * txy * txy); }
};

// Explicit B and D matrix products at the centroid of a unit-square element.
// ue is the element displacement (u0,v0,u1,v1,u2,v2,u3,v3) in the node order
// (0,0),(1,0),(1,1),(0,1); e is the already-penalized modulus. Returns the
// plane-stress components; sed = strain . stress / 2 comes with them.
inline std::pair<CenterStress, double> center_stress(const std::array<double, 8>& ue,
                                                     double e, double nu) {
  // shape gradients of the bilinear quad at (x,y)=(1/2,1/2)
  const double dndx[4] = {-0.5, 0.5, 0.5, -0.5};
  const double dndy[4] = {-0.5, -0.5, 0.5, 0.5};
  double strain[3] = {0.0, 0.0, 0.0};  // ex, ey, gxy
  for (int a = 0; a < 4; ++a) {
    strain[0] += dndx[a] * ue[2 * a];
    strain[1] += dndy[a] * ue[2 * a + 1];
    strain[2] += dndy[a] * ue[2 * a] + dndx[a] * ue[2 * a + 1];
  }
  const double s = e / (1.0 - nu * nu);
  const double d[3][3] = {{s, s * nu, 0.0}, {s * nu, s, 0.0}, {0.0, 0.0, s * (1.0 - nu) / 2.0}};
  double stress[3] = {0.0, 0.0, 0.0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) stress[i] += d[i][j] * strain[j];
  const double sed =
      0.5 * (strain[0] * stress[0] + strain[1] * stress[1] + strain[2] * stress[2]);
  return {CenterStress{stress[0], stress[1], stress[2]}, sed};
}

// ---- connected components by explicit flood fill ------------------------

// 4-connected labeling of a row-major binary image; background stays 0,
// foreground components get labels 1..n in scan order. Returns the number
// of foreground components.
inline int flood_fill_label(const std::vector<uint8_t>& fg, int w, int h,
                            std::vector<int>* labels_out = nullptr) {
  std::vector<int> lab(static_cast<size_t>(w) * h, 0);
  int next = 0;
  std::deque<std::pair<int, int>> q;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!fg[static_cast<size_t>(y) * w + x] || lab[static_cast<size_t>(y) * w + x]) continue;
      ++next;
      q.clear();
      q.emplace_back(x, y);
      lab[static_cast<size_t>(y) * w + x] = next;
      while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop_front();
        const int dx[4] = {1, -1, 0, 0};
        const int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int px = cx + dx[k], py = cy + dy[k];
          if (px < 0 || px >= w || py < 0 || py >= h) continue;
          const size_t idx = static_cast<size_t>(py) * w + px;
          if (fg[idx] && !lab[idx]) {
            lab[idx] = next;
            q.emplace_back(px, py);
          }
        }
      }
    }
  if (labels_out) *labels_out = std::move(lab);
  return next;
}

// ---- central finite differences -----------------------------------------

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// ---- reference compliance minimizer --------------------------------------

// Self-contained SIMP loop used as the behavioral oracle: matrix-free
// Jacobi-preconditioned conjugate gradients instead of a factorization, a
// dense double loop for the density filter, and its own OC bisection.
struct RefSimp {
  int nx = 0, ny = 0;
  std::vector<int> fixed;
  std::vector<std::pair<int, double>> loads;
  double e0 = 1.0, emin = 1e-3, nu = 0.3, penal = 3.0;
  double rmin = 2.0, move = 0.2, damp = 0.5, voltol = 1e-4, changetol = 0.01;
  int maxiter = 200;

  struct Result {
    std::vector<double> phys;  // filtered densities, row-major
    std::vector<double> trace;
    double compliance = 0.0;
  };

  int node(int ix, int iy) const { return iy * (nx + 1) + ix; }

  Result run(double f) const {
    const int ne = nx * ny;
    const int ndof = 2 * (nx + 1) * (ny + 1);
    const auto ke = quad_stiffness(nu);
    std::vector<char> is_fixed(ndof, 0);
    for (int d : fixed) is_fixed[d] = 1;
    std::vector<double> fvec(ndof, 0.0);
    for (auto [d, v] : loads) fvec[d] += v;

    // element dof tables
    std::vector<std::array<int, 8>> edof(ne);
    for (int ey = 0; ey < ny; ++ey)
      for (int ex = 0; ex < nx; ++ex) {
        const int nd[4] = {node(ex, ey), node(ex + 1, ey), node(ex + 1, ey + 1), node(ex, ey + 1)};
        for (int i = 0; i < 4; ++i) {
          edof[ey * nx + ex][2 * i] = 2 * nd[i];
          edof[ey * nx + ex][2 * i + 1] = 2 * nd[i] + 1;
        }
      }

    // filter weights, dense per-element neighbor scan
    const int reach = static_cast<int>(rmin) + 1;
    auto filter = [&](const std::vector<double>& x) {
      std::vector<double> out(ne, 0.0);
      for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
          double num = 0.0, den = 0.0;
          for (int jy = iy - reach; jy <= iy + reach; ++jy)
            for (int jx = ix - reach; jx <= ix + reach; ++jx) {
              if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
              const double w = rmin - std::hypot(double(ix - jx), double(iy - jy));
              if (w < 0.0) continue;
              num += w * x[static_cast<size_t>(jy) * nx + jx];
              den += w;
            }
          out[static_cast<size_t>(iy) * nx + ix] = num / den;
        }
      return out;
    };
    auto filter_t = [&](const std::vector<double>& g) {
      // transpose with the same renormalization
      std::vector<double> wsum(ne, 0.0), out(ne, 0.0);
      for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
          double den = 0.0;
          for (int jy = iy - reach; jy <= iy + reach; ++jy)
            for (int jx = ix - reach; jx <= ix + reach; ++jx) {
              if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
              const double w = rmin - std::hypot(double(ix - jx), double(iy - jy));
              if (w >= 0.0) den += w;
            }
          wsum[static_cast<size_t>(iy) * nx + ix] = den;
        }
      for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
          const int e = iy * nx + ix;
          const double ge = g[e] / wsum[e];
          for (int jy = iy - reach; jy <= iy + reach; ++jy)
            for (int jx = ix - reach; jx <= ix + reach; ++jx) {
              if (jx < 0 || jx >= nx || jy < 0 || jy >= ny) continue;
              const double w = rmin - std::hypot(double(ix - jx), double(iy - jy));
              if (w >= 0.0) out[static_cast<size_t>(jy) * nx + jx] += w * ge;
            }
        }
      return out;
    };

    auto modulus = [&](double x) { return emin + std::pow(x, penal) * (e0 - emin); };

    // matrix-free K*u with fixed dofs projected out
    auto kmul = [&](const std::vector<double>& phys, const std::vector<double>& u,
                    std::vector<double>& out) {
      std::fill(out.begin(), out.end(), 0.0);
      for (int e = 0; e < ne; ++e) {
        const double m = modulus(phys[e]);
        const auto& d = edof[e];
        double ue[8];
        for (int i = 0; i < 8; ++i) ue[i] = is_fixed[d[i]] ? 0.0 : u[d[i]];
        for (int i = 0; i < 8; ++i) {
          if (is_fixed[d[i]]) continue;
          double s = 0.0;
          for (int j = 0; j < 8; ++j) s += ke[i][j] * ue[j];
          out[d[i]] += m * s;
        }
      }
    };

    auto solve = [&](const std::vector<double>& phys) {
      std::vector<double> diag(ndof, 0.0);
      for (int e = 0; e < ne; ++e) {
        const double m = modulus(phys[e]);
        for (int i = 0; i < 8; ++i) diag[edof[e][i]] += m * ke[i][i];
      }
      std::vector<double> u(ndof, 0.0), r(ndof), z(ndof), p(ndof), ap(ndof);
      for (int d = 0; d < ndof; ++d) r[d] = is_fixed[d] ? 0.0 : fvec[d];
      double bnorm = 0.0;
      for (double x : r) bnorm += x * x;
      bnorm = std::sqrt(bnorm);
      if (bnorm == 0.0) return u;
      for (int d = 0; d < ndof; ++d) z[d] = is_fixed[d] ? 0.0 : r[d] / diag[d];
      p = z;
      double rz = 0.0;
      for (int d = 0; d < ndof; ++d) rz += r[d] * z[d];
      for (int it = 0; it < 20000; ++it) {
        kmul(phys, p, ap);
        double pap = 0.0;
        for (int d = 0; d < ndof; ++d) pap += p[d] * ap[d];
        const double alpha = rz / pap;
        double rnorm = 0.0;
        for (int d = 0; d < ndof; ++d) {
          u[d] += alpha * p[d];
          r[d] -= alpha * ap[d];
          rnorm += r[d] * r[d];
        }
        if (std::sqrt(rnorm) <= 1e-11 * bnorm) break;
        for (int d = 0; d < ndof; ++d) z[d] = is_fixed[d] ? 0.0 : r[d] / diag[d];
        double rz_new = 0.0;
        for (int d = 0; d < ndof; ++d) rz_new += r[d] * z[d];
        const double beta = rz_new / rz;
        rz = rz_new;
        for (int d = 0; d < ndof; ++d) p[d] = z[d] + beta * p[d];
      }
      return u;
    };

    Result res;
    std::vector<double> x(ne, f);
    for (int it = 0; it < maxiter; ++it) {
      const auto phys = filter(x);
      const auto u = solve(phys);
      double c = 0.0;
      for (auto [d, v] : loads) c += v * u[d];
      res.trace.push_back(c);
      std::vector<double> dcp(ne);
      for (int e = 0; e < ne; ++e) {
        const auto& d = edof[e];
        double q = 0.0;
        for (int i = 0; i < 8; ++i) {
          double s = 0.0;
          for (int j = 0; j < 8; ++j) s += ke[i][j] * u[d[j]];
          q += u[d[i]] * s;
        }
        dcp[e] = -penal * std::pow(phys[e], penal - 1.0) * (e0 - emin) * q;
      }
      const auto dc = filter_t(dcp);
      // OC step with bisection on the filtered volume
      double lo = 0.0, hi = 1e9;
      std::vector<double> xn(ne);
      for (int b = 0; b < 200; ++b) {
        const double mid = 0.5 * (lo + hi);
        for (int e = 0; e < ne; ++e) {
          const double be = std::max(0.0, -dc[e] / mid);
          double v = x[e] * std::pow(be, damp);
          v = std::clamp(v, x[e] - move, x[e] + move);
          xn[e] = std::clamp(v, 0.0, 1.0);
        }
        const auto pn = filter(xn);
        double vol = 0.0;
        for (double q : pn) vol += q;
        vol /= ne;
        if (std::fabs(vol - f) <= voltol) break;
        (vol > f ? lo : hi) = mid;
      }
      double change = 0.0;
      for (int e = 0; e < ne; ++e) change = std::max(change, std::fabs(xn[e] - x[e]));
      x = xn;
      if (change < changetol) break;
    }
    res.phys = filter(x);
    const auto u = solve(res.phys);
    for (auto [d, v] : loads) res.compliance += v * u[d];
    res.trace.push_back(res.compliance);
    return res;
  }
};

}  // namespace oracle
