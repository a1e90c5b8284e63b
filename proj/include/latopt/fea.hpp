#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latopt/field.hpp"

namespace latopt {

// Isotropic plane-stress material with power-law interpolation between a
// soft void modulus and the solid modulus.
struct MaterialModel {
  double e0 = 1.0;
  double e_min = 1e-3;
  double nu = 0.3;
  double penal = 3.0;
};

inline double penalized_modulus(double x, const MaterialModel& m) {
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("penalized_modulus: density outside [0,1]");
  return m.e_min + std::pow(x, m.penal) * (m.e0 - m.e_min);
}

// Regular nx-by-ny mesh of unit-square bilinear quads. Nodes are numbered
// row-major from the bottom-left corner, two dofs per node (x then y).
// Loads are nodal point forces given as (dof, value) pairs.
struct FeaProblem {
  int nx = 0;
  int ny = 0;
  std::vector<int> fixed_dofs;
  std::vector<std::pair<int, double>> loads;

  int n_nodes() const { return (nx + 1) * (ny + 1); }
  int n_dofs() const { return 2 * n_nodes(); }
  int n_elems() const { return nx * ny; }
  int node_id(int ix, int iy) const { return iy * (nx + 1) + ix; }
};

// dofs of element (ex,ey) in local node order (0,0),(1,0),(1,1),(0,1)
inline std::array<int, 8> element_dofs(const FeaProblem& p, int ex, int ey) {
  const int n00 = p.node_id(ex, ey);
  const int n10 = p.node_id(ex + 1, ey);
  const int n11 = p.node_id(ex + 1, ey + 1);
  const int n01 = p.node_id(ex, ey + 1);
  return {2 * n00, 2 * n00 + 1, 2 * n10, 2 * n10 + 1,
          2 * n11, 2 * n11 + 1, 2 * n01, 2 * n01 + 1};
}

using ElemMatrix = std::array<std::array<double, 8>, 8>;

// Closed-form stiffness of the unit-square plane-stress quad at E=1.
// Eight distinct rational coefficients arranged in a symmetric pattern;
// local node order matches element_dofs. Exact for this geometry (the
// integrand is a biquadratic polynomial), so it doubles as a reference
// for any quadrature scheme of order >= 2.
inline ElemMatrix element_stiffness(double nu) {
  const double k[8] = {
      0.5 - nu / 6.0,    0.125 + nu / 8.0,   -0.25 - nu / 12.0, -0.125 + 3.0 * nu / 8.0,
      -0.25 + nu / 12.0, -0.125 - nu / 8.0,  nu / 6.0,          0.125 - 3.0 * nu / 8.0};
  static const int pat[8][8] = {
      {0, 1, 2, 3, 4, 5, 6, 7}, {1, 0, 7, 6, 5, 4, 3, 2}, {2, 7, 0, 5, 6, 3, 4, 1},
      {3, 6, 5, 0, 7, 2, 1, 4}, {4, 5, 6, 7, 0, 1, 2, 3}, {5, 4, 3, 2, 1, 0, 7, 6},
      {6, 3, 4, 1, 2, 7, 0, 5}, {7, 2, 1, 4, 3, 6, 5, 0}};
  const double scale = 1.0 / (1.0 - nu * nu);
  ElemMatrix ke{};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) ke[i][j] = scale * k[pat[i][j]];
  return ke;
}

struct FeaSolution {
  std::vector<double> u;  // full displacement vector, zeros at fixed dofs
  double compliance = 0.0;
};

namespace detail {

inline void check_problem(const FeaProblem& p, const Field2D& dens) {
  if (p.nx <= 0 || p.ny <= 0) throw std::invalid_argument("fea: empty mesh");
  if (dens.w != p.nx || dens.h != p.ny) throw std::invalid_argument("fea: density shape mismatch");
  for (double x : dens.v)
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("fea: density outside [0,1]");
  std::vector<char> seen(p.n_dofs(), 0);
  int distinct = 0;
  for (int d : p.fixed_dofs) {
    if (d < 0 || d >= p.n_dofs()) throw std::invalid_argument("fea: fixed dof out of range");
    if (!seen[d]) {
      seen[d] = 1;
      ++distinct;
    }
  }
  if (distinct < 3) throw std::invalid_argument("fea: fewer than 3 constrained dofs (rigid-body motion)");
  for (const auto& [d, v] : p.loads) {
    (void)v;
    if (d < 0 || d >= p.n_dofs()) throw std::invalid_argument("fea: load dof out of range");
  }
}

}  // namespace detail

// Assemble the penalized global stiffness, eliminate fixed dofs, and solve
// with a sparse direct factorization. The relative residual on the free
// system is checked against 1e-8; failure indicates a rank-deficient or
// badly conditioned system and raises.
inline FeaSolution assemble_and_solve(const FeaProblem& p, const Field2D& dens,
                                      const MaterialModel& mat) {
  detail::check_problem(p, dens);
  const int ndof = p.n_dofs();

  std::vector<double> f(ndof, 0.0);
  for (const auto& [d, v] : p.loads) f[d] += v;

  FeaSolution sol;
  sol.u.assign(ndof, 0.0);

  double fnorm2 = 0.0;
  for (double x : f) fnorm2 += x * x;
  if (fnorm2 == 0.0) return sol;  // unloaded: exact zero response

  // map full dofs to indices of the free subsystem
  std::vector<int> to_free(ndof, -1);
  for (int d : p.fixed_dofs) to_free[d] = -2;
  int nfree = 0;
  for (int d = 0; d < ndof; ++d)
    if (to_free[d] == -1) to_free[d] = nfree++;
    else to_free[d] = -1;
  if (nfree == 0) return sol;

  const ElemMatrix ke = element_stiffness(mat.nu);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(p.n_elems()) * 64);
  for (int ey = 0; ey < p.ny; ++ey) {
    for (int ex = 0; ex < p.nx; ++ex) {
      const double e = penalized_modulus(dens.at(ex, ey), mat);
      const auto dofs = element_dofs(p, ex, ey);
      for (int i = 0; i < 8; ++i) {
        const int gi = to_free[dofs[i]];
        if (gi < 0) continue;
        for (int j = 0; j < 8; ++j) {
          const int gj = to_free[dofs[j]];
          if (gj < 0) continue;
          trips.emplace_back(gi, gj, e * ke[i][j]);
        }
      }
    }
  }

  Eigen::SparseMatrix<double> kmat(nfree, nfree);
  kmat.setFromTriplets(trips.begin(), trips.end());

  Eigen::VectorXd ff(nfree);
  ff.setZero();
  for (int d = 0; d < ndof; ++d)
    if (to_free[d] >= 0) ff[to_free[d]] = f[d];

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  solver.compute(kmat);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("fea: factorization failed (rank-deficient stiffness)");
  Eigen::VectorXd uf = solver.solve(ff);
  if (solver.info() != Eigen::Success || !uf.allFinite())
    throw std::runtime_error("fea: solve failed (rank-deficient stiffness)");

  const double residual = (kmat * uf - ff).norm() / ff.norm();
  if (!(residual <= 1e-8))
    throw std::runtime_error("fea: residual " + std::to_string(residual) +
                             " exceeds 1e-8 (singular or ill-conditioned system)");

  for (int d = 0; d < ndof; ++d)
    if (to_free[d] >= 0) sol.u[d] = uf[to_free[d]];
  for (const auto& [d, v] : p.loads) sol.compliance += v * sol.u[d];
  return sol;
}

struct ElementFields {
  Field2D von_mises;       // plane-stress equivalent stress at element centers
  Field2D strain_energy;   // strain energy density at element centers
};

// Stress recovery at element centers. Strains come from the bilinear shape
// function gradients evaluated at the centroid; stress uses the element's
// penalized modulus.
inline ElementFields derive_fields(const FeaProblem& p, const FeaSolution& sol,
                                   const Field2D& dens, const MaterialModel& mat) {
  detail::check_problem(p, dens);
  if (static_cast<int>(sol.u.size()) != p.n_dofs())
    throw std::invalid_argument("derive_fields: displacement size mismatch");
  ElementFields out{Field2D(p.nx, p.ny), Field2D(p.nx, p.ny)};
  // dN/dx, dN/dy at the centroid of a unit square, local node order as above
  const double dndx[4] = {-0.5, 0.5, 0.5, -0.5};
  const double dndy[4] = {-0.5, -0.5, 0.5, 0.5};
  for (int ey = 0; ey < p.ny; ++ey) {
    for (int ex = 0; ex < p.nx; ++ex) {
      const auto dofs = element_dofs(p, ex, ey);
      double exx = 0.0, eyy = 0.0, gxy = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double ux = sol.u[dofs[2 * i]];
        const double uy = sol.u[dofs[2 * i + 1]];
        exx += dndx[i] * ux;
        eyy += dndy[i] * uy;
        gxy += dndy[i] * ux + dndx[i] * uy;
      }
      const double e = penalized_modulus(dens.at(ex, ey), mat);
      const double c = e / (1.0 - mat.nu * mat.nu);
      const double sxx = c * (exx + mat.nu * eyy);
      const double syy = c * (mat.nu * exx + eyy);
      const double txy = c * (1.0 - mat.nu) * 0.5 * gxy;
      out.von_mises.at(ex, ey) =
          std::sqrt(sxx * sxx + syy * syy - sxx * syy + 3.0 * txy * txy);
      out.strain_energy.at(ex, ey) = 0.5 * (exx * sxx + eyy * syy + gxy * txy);
    }
  }
  return out;
}

}  // namespace latopt
