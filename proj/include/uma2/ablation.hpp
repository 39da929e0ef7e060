#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "uma2/config.hpp"
#include "uma2/eval.hpp"
#include "uma2/manifest.hpp"

namespace uma2 {

// One trained-and-evaluated combination of sampling strategy, weighting mode
// and master seed. A throwing cell is recorded as failed instead of sinking
// the whole sweep.
struct AblationCell {
  Strategy strategy = Strategy::SsAbcFixed;
  bool debias = false;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<RetrievalMetrics> metrics;  // one entry per configured K
};

struct AblationResult {
  std::vector<AblationCell> cells;
  bool any_failed = false;
};

// Runs the full grid in-process: for every seed, simulates one dataset and
// trains all four strategies with weighting off and on against it, then
// scores each model on the held-back test positives (training positives
// excluded from the candidate set). Artifacts land under
// out_dir/seed-<seed>/<cell>/.
AblationResult run_ablation(const Config& cfg, const std::filesystem::path& out_dir,
                            ManifestWriter* manifest, std::ostream* log);

// Median test recall across seeds for one strategy/weighting combination,
// read at k_list[k_index]. Failed cells are left out; returns NaN when no
// cell of that combination succeeded.
double median_recall(const AblationResult& result, Strategy strategy, bool debias,
                     std::size_t k_index = 0);

// Per-cell rows plus a cross-seed median block, ready for printing.
std::string ablation_table(const AblationResult& result);

}  // namespace uma2
