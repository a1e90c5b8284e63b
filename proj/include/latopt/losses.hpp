#pragma once

// Differentiable design-quality penalties used during generative training,
// plus their plain evaluations used by the metrics code: volume fraction
// mismatch, load-support discrepancy, and floating-material detection built
// on connected-component labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "latopt/autodiff.hpp"
#include "latopt/connectivity.hpp"
#include "latopt/field.hpp"
#include "latopt/tensor.hpp"

namespace latopt {

// Component labels for a thresholded field. `count` includes the background
// label 0, so a void field counts 1 and a single blob counts 2.
struct LabelMap {
  std::vector<int> labels;
  int count = 0;
};

inline LabelMap label_map(const Field2D& x, double threshold = 0.5) {
  LabelMap m;
  m.count = label_components(x, threshold, m.labels) + 1;
  return m;
}

// ---- plain evaluations ---------------------------------------------------

// |f - mean(x)|: how far the realized material budget is from the target.
inline double vf_loss(const Field2D& x, double target_vf) {
  double s = 0.0;
  for (double v : x.v) s += v;
  return std::abs(target_vf - s / static_cast<double>(x.v.size()));
}

// 1 - sum_i |(x_i fx_i, x_i fy_i)|, clamped at zero. For a unit load
// concentrated in one cell this reduces to 1 - density at that cell.
inline double ld_loss(const Field2D& x, const Field2D& fx, const Field2D& fy) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.v.size(); ++i)
    s += std::hypot(x.v[i] * fx.v[i], x.v[i] * fy.v[i]);
  return std::max(0.0, 1.0 - s);
}

// Hard floating-material indicator: 0 when the thresholded field has at most
// one connected region of material, 1 when material is split.
inline double fm_loss_hard(const Field2D& x, double threshold = 0.5) {
  std::vector<int> labels;
  return label_components(x, threshold, labels) > 1 ? 1.0 : 0.0;
}

namespace detail {

// Per-component soft material mass; index 0 is background (unused).
inline std::vector<double> component_masses(const Field2D& x,
                                            const std::vector<int>& labels,
                                            int fg_count) {
  std::vector<double> mass(static_cast<std::size_t>(fg_count) + 1, 0.0);
  for (std::size_t i = 0; i < x.v.size(); ++i)
    if (labels[i] > 0) mass[labels[i]] += x.v[i];
  return mass;
}

// Largest-mass component id, lowest label on ties; 0 when no foreground.
inline int dominant_component(const std::vector<double>& mass) {
  int best = 0;
  for (std::size_t c = 1; c < mass.size(); ++c)
    if (best == 0 || mass[c] > mass[best]) best = static_cast<int>(c);
  return best;
}

}  // namespace detail

// Differentiable stand-in for the hard indicator: the share of soft material
// mass that sits outside the heaviest connected region, measured over
// thresholded-foreground cells only. Zero exactly when the hard loss is zero;
// empty foreground scores 0 (the volume penalty catches that case).
inline double fm_loss_surrogate(const Field2D& x, double threshold = 0.5) {
  std::vector<int> labels;
  const int fg = label_components(x, threshold, labels);
  if (fg <= 1) return 0.0;
  const auto mass = detail::component_masses(x, labels, fg);
  double total = 0.0;
  for (int c = 1; c <= fg; ++c) total += mass[c];
  const int keep = detail::dominant_component(mass);
  return (total - mass[keep]) / total;
}

// ---- graph-building variants ----------------------------------------------
//
// All take densities as a [B,H,W] graph value and return a per-sample [B]
// vector; batch reduction is the trainer's choice.

template <typename T>
Var<T> vf_loss_ad(Var<T> x, const std::vector<double>& targets) {
  Graph<T>& g = *x.g;
  const std::vector<int> xshape = g.val(x.id).shape;
  if (xshape.size() != 3)
    throw std::invalid_argument("vf_loss: densities must be [B,H,W], got " +
                                shape_str(xshape));
  if (static_cast<int>(targets.size()) != xshape[0])
    throw std::invalid_argument("vf_loss: " + std::to_string(targets.size()) +
                                " targets for batch of " + std::to_string(xshape[0]));
  ArrayND<T> t({xshape[0]});
  for (int b = 0; b < xshape[0]; ++b) t.data[b] = static_cast<T>(targets[b]);
  Var<T> tv{&g, g.input(t, false)};
  return abs_op(sub(tv, mean_last(x, 2)));
}

// The load field enters only through its per-cell magnitude: for densities
// in [0,1], sum_i |(x f^x, x f^y)| = sum_i x_i |(f^x_i, f^y_i)|, which keeps
// the graph linear in x and avoids a sqrt kink at the many zero-load cells.
template <typename T>
Var<T> ld_loss_ad(Var<T> x, const ArrayND<T>& load_magnitude) {
  Graph<T>& g = *x.g;
  // copy the shape: adding the magnitude input below may grow the tape and
  // invalidate references into it
  const std::vector<int> xshape = g.val(x.id).shape;
  if (xshape.size() != 3)
    throw std::invalid_argument("ld_loss: densities must be [B,H,W], got " +
                                shape_str(xshape));
  if (load_magnitude.shape != xshape)
    throw std::invalid_argument("ld_loss: magnitude shape " +
                                shape_str(load_magnitude.shape) +
                                " does not match densities " + shape_str(xshape));
  Var<T> mag{&g, g.input(load_magnitude, false)};
  const double hw = static_cast<double>(xshape[1]) * xshape[2];
  Var<T> overlap = affine(mean_last(mul(x, mag), 2), hw);
  return relu(affine(overlap, -1.0, 1.0));
}

template <typename T>
ArrayND<T> load_magnitude_field(const std::vector<const Field2D*>& fx,
                                const std::vector<const Field2D*>& fy) {
  if (fx.empty() || fx.size() != fy.size())
    throw std::invalid_argument("load_magnitude_field: mismatched batch");
  const int h = fx[0]->h, w = fx[0]->w;
  ArrayND<T> out({static_cast<int>(fx.size()), h, w});
  for (std::size_t b = 0; b < fx.size(); ++b)
    for (int i = 0; i < h * w; ++i)
      out.data[b * static_cast<std::size_t>(h) * w + i] =
          static_cast<T>(std::hypot(fx[b]->v[i], fy[b]->v[i]));
  return out;
}

// Stray-mass surrogate on the graph. The component structure is decided from
// the forward values and held fixed; gradients then flow through the soft
// masses, pushing stray material down and (via the denominator) the kept
// region up.
template <typename T>
Var<T> fm_loss_surrogate_ad(Var<T> x, double threshold = 0.5) {
  Graph<T>& g = *x.g;
  const auto& xv = g.val(x.id);
  if (xv.rank() != 3)
    throw std::invalid_argument("fm_loss: densities must be [B,H,W], got " +
                                shape_str(xv.shape));
  const int bsz = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  ArrayND<T> stray_mask({bsz, h, w});
  ArrayND<T> fg_mask({bsz, h, w});
  ArrayND<T> empty_pad({bsz});  // keeps log() defined for void samples
  Field2D sample(w, h);
  std::vector<int> labels;
  for (int b = 0; b < bsz; ++b) {
    for (std::int64_t i = 0; i < hw; ++i)
      sample.v[i] = static_cast<double>(xv.data[b * hw + i]);
    const int fg = label_components(sample, threshold, labels);
    if (fg == 0) {
      empty_pad.data[b] = T(1);
      continue;
    }
    const auto mass = detail::component_masses(sample, labels, fg);
    const int keep = detail::dominant_component(mass);
    for (std::int64_t i = 0; i < hw; ++i) {
      if (labels[i] == 0) continue;
      fg_mask.data[b * hw + i] = T(1);
      if (labels[i] != keep) stray_mask.data[b * hw + i] = T(1);
    }
  }

  Var<T> stray{&g, g.input(stray_mask, false)};
  Var<T> fg{&g, g.input(fg_mask, false)};
  Var<T> pad{&g, g.input(empty_pad, false)};
  const double hwd = static_cast<double>(hw);
  Var<T> num = affine(mean_last(mul(x, stray), 2), hwd);
  Var<T> den = add(affine(mean_last(mul(x, fg), 2), hwd), pad);
  // num / den via exp(-log den); den >= threshold > 0 for nonempty samples
  return mul(num, exp_op(neg(log_op(den))));
}

}  // namespace latopt
