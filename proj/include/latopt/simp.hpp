#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "latopt/fea.hpp"
#include "latopt/field.hpp"

namespace latopt {

// Linearly decaying density filter over element centroids. Neighborhoods
// store every element within centroid distance r_min inclusive; entries at
// exactly r_min carry zero weight and are numerically inert, kept so the
// stored neighborhood matches the geometric disc.
struct FilterKernel {
  int w = 0, h = 0;
  double r_min = 0.0;
  std::vector<int> offsets;      // per-element [start,end) into neighbor/weight
  std::vector<int> neighbor;     // flat element ids iy*w+ix
  std::vector<double> weight;    // r_min - centroid distance, >= 0
  std::vector<double> wsum;      // per-element weight total, > 0

  int neighborhood_size(int e) const { return offsets[e + 1] - offsets[e]; }
};

inline FilterKernel build_filter(int w, int h, double r_min) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("build_filter: empty grid");
  if (!(r_min > 0.0)) throw std::invalid_argument("build_filter: radius must be positive");
  FilterKernel k;
  k.w = w;
  k.h = h;
  k.r_min = r_min;
  k.offsets.assign(static_cast<size_t>(w) * h + 1, 0);
  const int reach = static_cast<int>(std::floor(r_min));
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const int e = iy * w + ix;
      double total = 0.0;
      for (int jy = std::max(0, iy - reach); jy <= std::min(h - 1, iy + reach); ++jy) {
        for (int jx = std::max(0, ix - reach); jx <= std::min(w - 1, ix + reach); ++jx) {
          const double dist = std::sqrt(double(ix - jx) * (ix - jx) + double(iy - jy) * (iy - jy));
          if (dist > r_min) continue;
          k.neighbor.push_back(jy * w + jx);
          k.weight.push_back(r_min - dist);
          total += r_min - dist;
        }
      }
      k.offsets[e + 1] = static_cast<int>(k.neighbor.size());
      k.wsum.push_back(total);
    }
  }
  return k;
}

// xphys_e = sum_i w_ei x_i / sum_i w_ei
inline Field2D apply_filter(const FilterKernel& k, const Field2D& x) {
  if (x.w != k.w || x.h != k.h) throw std::invalid_argument("apply_filter: shape mismatch");
  Field2D out(k.w, k.h);
  for (size_t e = 0; e < out.size(); ++e) {
    double s = 0.0;
    for (int j = k.offsets[e]; j < k.offsets[e + 1]; ++j) s += k.weight[j] * x.v[k.neighbor[j]];
    out.v[e] = s / k.wsum[e];
  }
  return out;
}

// Transpose of apply_filter: pulls a gradient w.r.t. filtered densities back
// to the design variables, g_i = sum_e (w_ei / wsum_e) g~_e.
inline Field2D apply_filter_adjoint(const FilterKernel& k, const Field2D& g) {
  if (g.w != k.w || g.h != k.h) throw std::invalid_argument("apply_filter_adjoint: shape mismatch");
  Field2D out(k.w, k.h);
  for (size_t e = 0; e < g.size(); ++e) {
    const double ge = g.v[e] / k.wsum[e];
    for (int j = k.offsets[e]; j < k.offsets[e + 1]; ++j) out.v[k.neighbor[j]] += k.weight[j] * ge;
  }
  return out;
}

// dC/dx~_e = -p x~^(p-1) (E0 - Emin) u_e' k u_e, evaluated on the filtered
// densities the system was solved with. Always non-positive: adding material
// never increases compliance.
inline Field2D compliance_sensitivity(const FeaProblem& p, const FeaSolution& sol,
                                      const Field2D& phys, const MaterialModel& mat) {
  if (phys.w != p.nx || phys.h != p.ny)
    throw std::invalid_argument("compliance_sensitivity: shape mismatch");
  const ElemMatrix ke = element_stiffness(mat.nu);
  Field2D out(p.nx, p.ny);
  for (int ey = 0; ey < p.ny; ++ey) {
    for (int ex = 0; ex < p.nx; ++ex) {
      const auto dofs = element_dofs(p, ex, ey);
      double q = 0.0;
      for (int i = 0; i < 8; ++i) {
        double r = 0.0;
        for (int j = 0; j < 8; ++j) r += ke[i][j] * sol.u[dofs[j]];
        q += sol.u[dofs[i]] * r;
      }
      const double x = phys.at(ex, ey);
      out.at(ex, ey) = -mat.penal * std::pow(x, mat.penal - 1.0) * (mat.e0 - mat.e_min) * q;
    }
  }
  return out;
}

struct OptimizerConfig {
  double move_limit = 0.2;
  double damping = 0.5;
  double vol_tol = 1e-4;    // bisection target on the filtered volume fraction
  int max_bisect = 200;
  double change_tol = 0.01; // stop when max density change drops below this
  int max_iters = 200;
  double r_min = 2.0;
};

// Optimality-criteria update. Candidate densities scale by (-dc/lambda)^damping
// clamped to the move limit and [0,1]; lambda is bisected until the filtered
// volume fraction hits f. Sensitivities are w.r.t. the design variables
// (already pulled back through the filter).
inline Field2D update_densities(const Field2D& x, const Field2D& dc, double f,
                                const OptimizerConfig& cfg, const FilterKernel& k) {
  if (!x.same_shape(dc)) throw std::invalid_argument("update_densities: shape mismatch");
  auto candidate = [&](double lambda) {
    Field2D xn(x.w, x.h);
    for (size_t i = 0; i < x.size(); ++i) {
      const double be = std::max(0.0, -dc.v[i] / lambda);
      double v = x.v[i] * std::pow(be, cfg.damping);
      v = std::min(v, x.v[i] + cfg.move_limit);
      v = std::max(v, x.v[i] - cfg.move_limit);
      xn.v[i] = std::min(1.0, std::max(0.0, v));
    }
    return xn;
  };
  double lo = 0.0, hi = 1e9;
  Field2D xn;
  double vol = 0.0;
  for (int it = 0; it < cfg.max_bisect; ++it) {
    const double mid = 0.5 * (lo + hi);
    xn = candidate(mid);
    vol = apply_filter(k, xn).mean();
    // bisect the bracket all the way down: a sharp multiplier keeps the OC
    // trajectory smooth instead of jittering within the volume tolerance
    if ((hi - lo) <= 1e-12 * hi && std::fabs(vol - f) <= cfg.vol_tol) return xn;
    if (vol > f)
      lo = mid;  // too much material: raise the price of volume
    else
      hi = mid;
  }
  if (std::fabs(vol - f) <= cfg.vol_tol) return xn;
  throw std::runtime_error("update_densities: volume bisection failed to converge");
}

struct OptimizeResult {
  Field2D design;              // raw design variables
  Field2D physical;            // filtered densities actually analyzed
  std::vector<double> trace;   // compliance per iterate, uniform start first
  double compliance = 0.0;     // fresh solve on the final filtered field
  int iterations = 0;
  double final_change = 0.0;
};

// Compliance minimization under a volume constraint: filter, solve, form
// sensitivities, pull them back through the filter, OC-update, repeat until
// the design stops moving or the iteration budget runs out.
inline OptimizeResult optimize(const FeaProblem& p, double f, const MaterialModel& mat,
                               const OptimizerConfig& cfg) {
  if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("optimize: volume fraction outside (0,1)");
  const FilterKernel kern = build_filter(p.nx, p.ny, cfg.r_min);
  OptimizeResult res;
  res.design = Field2D(p.nx, p.ny, f);
  for (int it = 0; it < cfg.max_iters; ++it) {
    res.physical = apply_filter(kern, res.design);
    const FeaSolution sol = assemble_and_solve(p, res.physical, mat);
    res.trace.push_back(sol.compliance);
    const Field2D dc_phys = compliance_sensitivity(p, sol, res.physical, mat);
    const Field2D dc = apply_filter_adjoint(kern, dc_phys);
    Field2D xn = update_densities(res.design, dc, f, cfg, kern);
    double change = 0.0;
    for (size_t i = 0; i < xn.size(); ++i) change = std::max(change, std::fabs(xn.v[i] - res.design.v[i]));
    res.design = std::move(xn);
    res.iterations = it + 1;
    res.final_change = change;
    if (change < cfg.change_tol) break;
  }
  res.physical = apply_filter(kern, res.design);
  res.compliance = assemble_and_solve(p, res.physical, mat).compliance;
  res.trace.push_back(res.compliance);
  return res;
}

}  // namespace latopt
