#pragma once

// Dataset assembly: walk a seed stream, build records, and keep the ones that
// pass the quality screens. Acceptance of a seed is a pure function of the
// seed, so the output is identical for any thread count and any run.

#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "latopt/record.hpp"

namespace latopt {

struct DatasetSpec {
  int count = 2000;
  int resolution = 64;
  std::uint64_t base_seed = 1;
  bool normalize = false;
  int threads = 1;
  MaterialModel material;
  OptimizerConfig optimizer;
};

struct DatasetResult {
  std::vector<SampleRecord> records;   // in seed order
  std::uint64_t seeds_tried = 0;
  std::uint64_t rejected_failed = 0;   // sampler or solver threw
  std::uint64_t rejected_quality = 0;  // built fine but failed the screens
};

namespace detail {

enum class SeedOutcome { kAccepted, kFailed, kRejected };

inline SeedOutcome try_seed(std::uint64_t seed, const DatasetSpec& spec,
                            SampleRecord& out) {
  try {
    const Problem p = sample_problem(seed, spec.resolution);
    out = build_record(p, spec.material, spec.optimizer, spec.normalize);
  } catch (const std::exception&) {
    // Under-constrained supports (a single point clamp) or a failed solve.
    // The seed is skipped deterministically; later seeds fill the quota.
    return SeedOutcome::kFailed;
  }
  return record_quality_ok(out) ? SeedOutcome::kAccepted : SeedOutcome::kRejected;
}

}  // namespace detail

// Progress callback: (accepted so far, seeds tried). Return value ignored.
using DatasetProgress = void (*)(int accepted, std::uint64_t tried);

inline DatasetResult generate_dataset(const DatasetSpec& spec,
                                      DatasetProgress progress = nullptr) {
  if (spec.count <= 0) throw std::invalid_argument("generate_dataset: count <= 0");
  if (spec.threads < 1) throw std::invalid_argument("generate_dataset: threads < 1");

  DatasetResult res;
  res.records.reserve(spec.count);

  if (spec.threads == 1) {
    for (std::uint64_t seed = spec.base_seed;
         static_cast<int>(res.records.size()) < spec.count; ++seed) {
      ++res.seeds_tried;
      SampleRecord r;
      switch (detail::try_seed(seed, spec, r)) {
        case detail::SeedOutcome::kAccepted: res.records.push_back(std::move(r)); break;
        case detail::SeedOutcome::kFailed: ++res.rejected_failed; break;
        case detail::SeedOutcome::kRejected: ++res.rejected_quality; break;
      }
      if (progress) progress(static_cast<int>(res.records.size()), res.seeds_tried);
    }
    return res;
  }

  // Parallel path: seeds are processed in fixed-size blocks, each block split
  // across workers, results committed in seed order. Blocks keep the amount
  // of thrown-away surplus work bounded once the quota fills.
  const int block = spec.threads * 8;
  std::uint64_t next = spec.base_seed;
  while (static_cast<int>(res.records.size()) < spec.count) {
    std::vector<SampleRecord> recs(block);
    std::vector<detail::SeedOutcome> outcome(block, detail::SeedOutcome::kFailed);
    std::vector<std::thread> pool;
    pool.reserve(spec.threads);
    for (int t = 0; t < spec.threads; ++t)
      pool.emplace_back([&, t] {
        for (int i = t; i < block; i += spec.threads)
          outcome[i] = detail::try_seed(next + i, spec, recs[i]);
      });
    for (auto& th : pool) th.join();
    for (int i = 0; i < block && static_cast<int>(res.records.size()) < spec.count; ++i) {
      ++res.seeds_tried;
      switch (outcome[i]) {
        case detail::SeedOutcome::kAccepted: res.records.push_back(std::move(recs[i])); break;
        case detail::SeedOutcome::kFailed: ++res.rejected_failed; break;
        case detail::SeedOutcome::kRejected: ++res.rejected_quality; break;
      }
      if (progress) progress(static_cast<int>(res.records.size()), res.seeds_tried);
    }
    next += block;
  }
  return res;
}

}  // namespace latopt
