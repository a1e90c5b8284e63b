#pragma once

// Scoring of generated designs against the optimizer's ground truth: a fresh
// compliance solve on the binarized raster, manufacturability checks, and
// volume bookkeeping, aggregated into a report plus histogram/table emitters.
// The grid runner at the bottom trains one autoencoder per hyperparameter
// cell and tabulates the resulting losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latopt/losses.hpp"
#include "latopt/record.hpp"
#include "latopt/shard.hpp"
#include "latopt/vae.hpp"

namespace latopt {

struct SampleMetrics {
  double compliance_error_pct = 0.0;  // 100 * (c_gen - c_gt) / c_gt
  bool defective = false;             // empty design or singular solve
  bool floating_material = false;     // more than one binarized component
  bool load_discrepancy = false;      // no material on the loaded cell
  double soft_ld = 0.0;               // graded load-coverage miss in [0,1]
  double vf_gen = 0.0;                // achieved volume fraction, binarized
  double vf_gt = 0.0;                 // same measure on the ground truth
};

// Scores one generated raster against the record it was conditioned on. The
// solve uses the same penalized-modulus path that produced gt_compliance, so
// a byte-identical design scores exactly zero.
inline SampleMetrics evaluate_sample(const Field2D& generated, const SampleRecord& rec,
                                     const MaterialModel& mat = {}) {
  const int n = rec.problem.resolution;
  if (generated.w != n || generated.h != n)
    throw std::invalid_argument("evaluate_sample: raster is " +
                                std::to_string(generated.w) + "x" +
                                std::to_string(generated.h) + ", problem wants " +
                                std::to_string(n));
  SampleMetrics m;
  const Field2D b = binarize(generated);
  m.vf_gen = b.mean();
  m.vf_gt = binarize(rec.chan[kChanTopology]).mean();
  m.load_discrepancy = b.v[rec.problem.load_element] < 0.5;
  m.soft_ld = ld_loss(generated, rec.chan[kChanLoadX], rec.chan[kChanLoadY]);
  m.floating_material = fm_loss_hard(b) > 0.5;

  if (m.vf_gen == 0.0) {
    // an empty design carries no load path; skip the solve
    m.defective = true;
  } else {
    try {
      const double c_gen = binary_compliance(rec.problem, b, mat);
      if (!std::isfinite(c_gen) || !(rec.gt_compliance > 0.0)) {
        m.defective = true;
      } else {
        m.compliance_error_pct =
            100.0 * (c_gen - rec.gt_compliance) / rec.gt_compliance;
      }
    } catch (const std::exception&) {
      m.defective = true;
    }
  }
  if (m.defective) m.floating_material = true;  // counted as a defect either way
  return m;
}

struct MetricsReport {
  int n = 0;
  int defective = 0;
  // headline mean excludes samples above the pruning threshold, following the
  // reporting convention; the unpruned mean is kept alongside
  double mean_compliance_error_pct = 0.0;
  double mean_compliance_error_unpruned_pct = 0.0;
  double median_compliance_error_pct = 0.0;
  double above_threshold_pct = 0.0;
  double fm_rate_pct = 0.0;
  double ld_rate_pct = 0.0;
  double mean_soft_ld = 0.0;
  double vf_error_pct = 0.0;      // relative to the target budget (headline)
  double vf_error_abs_pct = 0.0;  // absolute percentage points
  double vf_error_gt_pct = 0.0;   // relative to the ground truth's achieved vf
  double prune_threshold_pct = 30.0;
};

namespace detail {

// sums in ascending order so the aggregate is independent of batch order
inline double ordered_mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace detail

// Aggregates per-sample metrics. Defective samples count toward the
// above-threshold share and the FM rate; they carry no usable compliance
// number, so the means skip them and the median ranks them as infinite.
inline MetricsReport assemble_report(const std::vector<SampleMetrics>& samples,
                                     const std::vector<double>& target_vfs,
                                     double prune_threshold_pct = 30.0) {
  if (samples.size() != target_vfs.size())
    throw std::invalid_argument("assemble_report: " + std::to_string(samples.size()) +
                                " samples vs " + std::to_string(target_vfs.size()) +
                                " targets");
  MetricsReport r;
  r.n = static_cast<int>(samples.size());
  r.prune_threshold_pct = prune_threshold_pct;
  if (samples.empty()) return r;

  std::vector<double> pruned, finite, ranked, soft, vf_rel, vf_abs, vf_gt;
  int above = 0, fm = 0, ld = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleMetrics& m = samples[i];
    if (m.defective) {
      ++r.defective;
      ++above;
      ranked.push_back(std::numeric_limits<double>::infinity());
    } else {
      finite.push_back(m.compliance_error_pct);
      ranked.push_back(m.compliance_error_pct);
      if (m.compliance_error_pct > prune_threshold_pct)
        ++above;
      else
        pruned.push_back(m.compliance_error_pct);
    }
    fm += m.floating_material ? 1 : 0;
    ld += m.load_discrepancy ? 1 : 0;
    soft.push_back(m.soft_ld);
    const double f = target_vfs[i];
    if (!(f > 0.0))
      throw std::invalid_argument("assemble_report: nonpositive target vf");
    vf_rel.push_back(100.0 * std::abs(m.vf_gen - f) / f);
    vf_abs.push_back(100.0 * std::abs(m.vf_gen - f));
    vf_gt.push_back(m.vf_gt > 0.0
                        ? 100.0 * std::abs(m.vf_gen - m.vf_gt) / m.vf_gt
                        : (m.vf_gen > 0.0 ? 100.0 : 0.0));
  }
  r.mean_compliance_error_pct = detail::ordered_mean(pruned);
  r.mean_compliance_error_unpruned_pct = detail::ordered_mean(finite);
  r.median_compliance_error_pct = detail::median_of(ranked);
  r.above_threshold_pct = 100.0 * above / r.n;
  r.fm_rate_pct = 100.0 * fm / r.n;
  r.ld_rate_pct = 100.0 * ld / r.n;
  r.mean_soft_ld = detail::ordered_mean(soft);
  r.vf_error_pct = detail::ordered_mean(vf_rel);
  r.vf_error_abs_pct = detail::ordered_mean(vf_abs);
  r.vf_error_gt_pct = detail::ordered_mean(vf_gt);
  return r;
}

// Scores generated rasters pairwise against the records they were
// conditioned on.
inline MetricsReport evaluate_batch(const std::vector<Field2D>& generated,
                                    const std::vector<const SampleRecord*>& recs,
                                    const MaterialModel& mat = {},
                                    double prune_threshold_pct = 30.0,
                                    std::vector<SampleMetrics>* per_sample = nullptr) {
  if (generated.size() != recs.size())
    throw std::invalid_argument("evaluate_batch: " + std::to_string(generated.size()) +
                                " rasters vs " + std::to_string(recs.size()) +
                                " records");
  std::vector<SampleMetrics> ms;
  std::vector<double> targets;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    ms.push_back(evaluate_sample(generated[i], *recs[i], mat));
    targets.push_back(recs[i]->problem.target_vf);
  }
  if (per_sample) *per_sample = ms;
  return assemble_report(ms, targets, prune_threshold_pct);
}

// Bin layout: bins-1 equal-width cells spanning [lo, pool_threshold], then a
// terminal cell that pools everything above the threshold. Values below lo
// clamp into the first cell, so counts always conserve N.
inline std::vector<int> histogram(const std::vector<double>& errors, int bins,
                                  double pool_threshold = 30.0, double lo = 0.0) {
  if (bins < 2) throw std::invalid_argument("histogram: need at least 2 bins");
  if (!(pool_threshold > lo))
    throw std::invalid_argument("histogram: pool threshold must exceed the origin");
  std::vector<int> counts(bins, 0);
  const double width = (pool_threshold - lo) / (bins - 1);
  for (double e : errors) {
    int idx;
    if (e > pool_threshold)
      idx = bins - 1;
    else
      idx = std::clamp(static_cast<int>(std::floor((e - lo) / width)), 0, bins - 2);
    ++counts[idx];
  }
  return counts;
}

inline std::string report_text(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "samples:                        " << r.n << "\n"
     << "defective:                      " << r.defective << "\n"
     << "compliance error mean (pruned): " << r.mean_compliance_error_pct << " %\n"
     << "compliance error mean (all):    " << r.mean_compliance_error_unpruned_pct
     << " %\n"
     << "compliance error median:        " << r.median_compliance_error_pct << " %\n"
     << "above " << std::setprecision(0) << r.prune_threshold_pct
     << "% share:                " << std::setprecision(3) << r.above_threshold_pct
     << " %\n"
     << "floating material rate:         " << r.fm_rate_pct << " %\n"
     << "load discrepancy rate:          " << r.ld_rate_pct << " %\n"
     << "load discrepancy mean (soft):   " << r.mean_soft_ld << "\n"
     << "volume error vs budget:         " << r.vf_error_pct << " %\n"
     << "volume error vs budget (abs):   " << r.vf_error_abs_pct << " pts\n"
     << "volume error vs ground truth:   " << r.vf_error_gt_pct << " %\n";
  return os.str();
}

inline std::string report_dsv(const MetricsReport& r) {
  std::ostringstream os;
  os << "n\tdefective\tcompliance_mean_pruned\tcompliance_mean_all\t"
        "compliance_median\tabove_threshold_pct\tfm_rate_pct\tld_rate_pct\t"
        "mean_soft_ld\tvf_error_pct\tvf_error_abs_pct\tvf_error_gt_pct\n";
  os << r.n << '\t' << r.defective << '\t' << detail::fmt_g17(r.mean_compliance_error_pct)
     << '\t' << detail::fmt_g17(r.mean_compliance_error_unpruned_pct) << '\t'
     << detail::fmt_g17(r.median_compliance_error_pct) << '\t'
     << detail::fmt_g17(r.above_threshold_pct) << '\t' << detail::fmt_g17(r.fm_rate_pct) << '\t'
     << detail::fmt_g17(r.ld_rate_pct) << '\t' << detail::fmt_g17(r.mean_soft_ld) << '\t'
     << detail::fmt_g17(r.vf_error_pct) << '\t' << detail::fmt_g17(r.vf_error_abs_pct) << '\t'
     << detail::fmt_g17(r.vf_error_gt_pct) << '\n';
  return os.str();
}

// ---- hyperparameter grid -------------------------------------------------------

struct GridCell {
  int latent_dim = 0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  bool failed = false;
  std::string failure;
  // averages over the trailing window of training steps
  double recon = 0.0;
  double vf = 0.0;
  double ld = 0.0;
  double fm = 0.0;
};

struct GridSpec {
  std::vector<int> latent_dims = {64, 128, 192, 256};
  std::vector<double> beta1s = {0.075, 0.15, 0.3};
  std::vector<double> beta2s = {0.1, 0.3};
  VaeConfig base;         // latent_dim is overridden per cell
  int steps = 40;
  int batch = 8;
  int tail_window = 10;   // steps averaged into the cell's reported losses
  std::uint64_t init_seed = 1;
  std::uint64_t train_seed = 2;
  double lr = 1e-4;
  double weight_decay = 0.05;
};

// Trains one model per (latent dim, beta1, beta2) cell on the given records
// and reports trailing-average losses. A cell that throws is recorded as
// failed and the sweep moves on.
inline std::vector<GridCell> run_grid(const GridSpec& spec,
                                      const std::vector<const SampleRecord*>& data,
                                      void (*progress)(const GridCell&) = nullptr) {
  if (spec.steps < 1 || spec.tail_window < 1 || spec.batch < 1)
    throw std::invalid_argument("run_grid: steps, window, and batch must be positive");
  if (data.empty()) throw std::invalid_argument("run_grid: no records");
  std::vector<GridCell> out;
  for (int d : spec.latent_dims)
    for (double b1 : spec.beta1s)
      for (double b2 : spec.beta2s) {
        GridCell cell;
        cell.latent_dim = d;
        cell.beta1 = b1;
        cell.beta2 = b2;
        try {
          VaeConfig cfg = spec.base;
          cfg.latent_dim = d;
          cfg.validate();
          ParamStore<float> params = init_vae_params<float>(cfg, spec.init_seed);
          VaeTrainOptions opt;
          opt.beta1 = b1;
          opt.beta2 = b2;
          opt.lr = spec.lr;
          opt.weight_decay = spec.weight_decay;
          Rng rng(spec.train_seed);
          const int window = std::min(spec.tail_window, spec.steps);
          double recon = 0, vf = 0, ld = 0, fm = 0;
          for (int s = 0; s < spec.steps; ++s) {
            std::vector<const SampleRecord*> batch;
            for (int b = 0; b < spec.batch; ++b)
              batch.push_back(data[rng.uniform_int(data.size())]);
            const LossBreakdown lb = vae_train_step(params, cfg, batch, opt, rng, s);
            if (s >= spec.steps - window) {
              recon += lb.recon;
              vf += lb.vf;
              ld += lb.ld;
              fm += lb.fm;
            }
          }
          cell.recon = recon / window;
          cell.vf = vf / window;
          cell.ld = ld / window;
          cell.fm = fm / window;
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.failure = e.what();
        }
        if (progress) progress(cell);
        out.push_back(std::move(cell));
      }
  return out;
}

namespace detail {

// indices of the per-column minima among cells that completed
inline std::vector<int> column_minima(const std::vector<GridCell>& cells) {
  std::vector<int> best(4, -1);
  auto field = [](const GridCell& c, int col) {
    switch (col) {
      case 0: return c.recon;
      case 1: return c.vf;
      case 2: return c.ld;
      default: return c.fm;
    }
  };
  for (int col = 0; col < 4; ++col)
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].failed) continue;
      if (best[col] < 0 || field(cells[i], col) < field(cells[best[col]], col))
        best[col] = static_cast<int>(i);
    }
  return best;
}

}  // namespace detail

// Fixed-width table with the best completed cell per loss column starred.
inline std::string grid_table_text(const std::vector<GridCell>& cells) {
  const std::vector<int> best = detail::column_minima(cells);
  std::ostringstream os;
  os << "  D    beta1  beta2       recon          vf          ld          fm\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    os << std::setw(3) << c.latent_dim << "  " << std::setw(7) << c.beta1 << "  "
       << std::setw(5) << c.beta2;
    if (c.failed) {
      os << "  failed: " << c.failure << "\n";
      continue;
    }
    const double vals[4] = {c.recon, c.vf, c.ld, c.fm};
    for (int col = 0; col < 4; ++col) {
      os << "  " << std::setw(10) << std::setprecision(5) << vals[col]
         << (best[col] == static_cast<int>(i) ? '*' : ' ');
    }
    os << "\n";
  }
  return os.str();
}

inline std::string grid_table_dsv(const std::vector<GridCell>& cells) {
  const std::vector<int> best = detail::column_minima(cells);
  std::ostringstream os;
  os << "latent_dim\tbeta1\tbeta2\tstatus\trecon\tvf\tld\tfm\tbest_columns\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    os << c.latent_dim << '\t' << detail::fmt_g17(c.beta1) << '\t' << detail::fmt_g17(c.beta2) << '\t'
       << (c.failed ? "failed" : "ok") << '\t';
    if (c.failed) {
      os << "\t\t\t\t" << c.failure << '\n';
      continue;
    }
    os << detail::fmt_g17(c.recon) << '\t' << detail::fmt_g17(c.vf) << '\t' << detail::fmt_g17(c.ld) << '\t'
       << detail::fmt_g17(c.fm) << '\t';
    std::string marks;
    const char* names[4] = {"recon", "vf", "ld", "fm"};
    for (int col = 0; col < 4; ++col)
      if (best[col] == static_cast<int>(i)) {
        if (!marks.empty()) marks += ',';
        marks += names[col];
      }
    os << marks << '\n';
  }
  return os.str();
}

}  // namespace latopt
