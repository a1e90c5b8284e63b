#pragma once

// Training-sample assembly: one record couples an optimized topology with the
// conditioning fields a generative model sees (volume budget, response of the
// unoptimized domain, load placement) plus bookkeeping for evaluation.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "latopt/connectivity.hpp"
#include "latopt/field.hpp"
#include "latopt/problem.hpp"
#include "latopt/simp.hpp"

namespace latopt {

// Channel layout, in storage order.
enum Channel {
  kChanTopology = 0,     // optimized filtered densities
  kChanVolFrac = 1,      // constant plane holding the volume budget
  kChanVonMises = 2,     // equivalent stress on the uniform-density domain
  kChanStrainEnergy = 3, // strain energy density on the uniform-density domain
  kChanLoadX = 4,        // load x-component, nonzero only at the load cell
  kChanLoadY = 5,
};
inline constexpr int kChannelCount = 6;

struct SampleRecord {
  Problem problem;
  std::array<Field2D, kChannelCount> chan;
  double gt_compliance = 0.0;  // solve of the binarized topology, see below
  bool normalized = false;     // stress/energy channels scaled to [0,1]
};

inline Field2D binarize(const Field2D& x, double threshold = 0.5) {
  Field2D out(x.w, x.h);
  for (std::size_t i = 0; i < x.v.size(); ++i)
    out.v[i] = x.v[i] >= threshold ? 1.0 : 0.0;
  return out;
}

// Compliance of a 0/1 design under the problem's load, using the same
// penalized-modulus solve applied to generated designs at evaluation time.
// Keeping ground truth and evaluation on one code path makes "feed the ground
// truth back through the metrics" come out at exactly zero error.
inline double binary_compliance(const Problem& p, const Field2D& binary,
                                const MaterialModel& mat = {}) {
  return assemble_and_solve(to_fea_problem(p), binary, mat).compliance;
}

// Builds the full record for one problem: a conditioning solve on the uniform
// density f, the optimization itself, and the binarized ground-truth
// compliance. Throws if either solve fails; callers treat that as a rejected
// draw.
inline SampleRecord build_record(const Problem& p, const MaterialModel& mat = {},
                                 const OptimizerConfig& cfg = {},
                                 bool normalize = false) {
  const int n = p.resolution;
  const FeaProblem fp = to_fea_problem(p);

  const Field2D uniform(n, n, p.target_vf);
  const FeaSolution cond = assemble_and_solve(fp, uniform, mat);
  ElementFields fields = derive_fields(fp, cond, uniform, mat);

  const OptimizeResult opt = optimize(fp, p.target_vf, mat, cfg);

  SampleRecord r;
  r.problem = p;
  r.normalized = normalize;
  r.chan[kChanTopology] = opt.physical;
  r.chan[kChanVolFrac] = Field2D(n, n, p.target_vf);
  if (normalize) {
    const double vm_max = fields.von_mises.max();
    const double se_max = fields.strain_energy.max();
    if (vm_max > 0.0)
      for (double& x : fields.von_mises.v) x /= vm_max;
    if (se_max > 0.0)
      for (double& x : fields.strain_energy.v) x /= se_max;
  }
  r.chan[kChanVonMises] = std::move(fields.von_mises);
  r.chan[kChanStrainEnergy] = std::move(fields.strain_energy);
  r.chan[kChanLoadX] = Field2D(n, n);
  r.chan[kChanLoadY] = Field2D(n, n);
  r.chan[kChanLoadX].v[p.load_element] = std::cos(p.load_angle);
  r.chan[kChanLoadY].v[p.load_element] = std::sin(p.load_angle);

  // gt compliance is solved on the float32-quantized topology, the exact
  // values a shard stores, so re-scoring a persisted ground-truth design
  // reproduces this number bit-for-bit
  Field2D quantized = r.chan[kChanTopology];
  for (double& x : quantized.v) x = static_cast<double>(static_cast<float>(x));
  r.gt_compliance = binary_compliance(p, binarize(quantized), mat);
  return r;
}

// Screens out optimizer outputs that would poison the dataset: the binarized
// design must be one connected piece of material that covers the load cell.
inline bool record_quality_ok(const SampleRecord& r) {
  const Field2D b = binarize(r.chan[kChanTopology]);
  if (b.v[r.problem.load_element] < 0.5) return false;
  std::vector<int> labels;
  return label_components(b, 0.5, labels) == 1;
}

// Raster permutation of a scalar channel under one symmetry op.
inline Field2D transform_scalar(const Field2D& x, AugmentOp op) {
  if (x.w != x.h) throw std::invalid_argument("transform_scalar: square fields only");
  const int n = x.w;
  const auto map = [&](int e) {
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
  Field2D out(n, n);
  for (int e = 0; e < n * n; ++e) out.v[map(e)] = x.v[e];
  return out;
}

// Transports a whole record across a symmetry op. Scalar channels permute;
// the load components additionally rotate as a vector, using exact sign flips
// and swaps so that inverse op sequences restore the record bit-for-bit.
// Compliance is invariant, so gt_compliance carries over unchanged.
inline SampleRecord augment(const SampleRecord& r, AugmentOp op) {
  SampleRecord out;
  out.problem = transform_problem(r.problem, op);
  out.normalized = r.normalized;
  out.gt_compliance = r.gt_compliance;
  for (int c = 0; c < kChannelCount; ++c)
    out.chan[c] = transform_scalar(r.chan[c], op);
  auto& lx = out.chan[kChanLoadX].v;
  auto& ly = out.chan[kChanLoadY].v;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double a = lx[i], b = ly[i];
    switch (op) {
      case AugmentOp::kRot90: lx[i] = -b; ly[i] = a; break;
      case AugmentOp::kRot180: lx[i] = -a; ly[i] = -b; break;
      case AugmentOp::kRot270: lx[i] = b; ly[i] = -a; break;
      case AugmentOp::kMirrorX: lx[i] = -a; break;
      case AugmentOp::kMirrorY: ly[i] = -b; break;
    }
  }
  return out;
}

}  // namespace latopt
