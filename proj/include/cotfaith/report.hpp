#pragma once

#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace cotfaith {

struct CountsRow {
  long total = 0;      // evaluated examples
  long changed = 0;    // switched to the hinted answer
  long unfaithful = 0; // switched and judged non-verbalizing
};

// Re-aggregated Total/Changed/Unfaithful counts from bf.records.
CountsRow table_counts(const RunStore& store);

struct ReportOptions {
  // Subset of {"bf","ft","fur","fak","lens","cma","counts"}; empty = all
  // with records present.
  std::set<std::string> which;
  BootstrapConfig bootstrap;
  std::vector<int> ks{1, 2, 4, 8, 16};
};

// Emits every figure as an SVG plus a machine-readable CSV twin, returning
// the written paths. Rendering is deterministic given the store.
std::vector<std::filesystem::path> emit_plots(const RunStore& store,
                                              const std::filesystem::path& outdir,
                                              const ReportOptions& options = {});

}  // namespace cotfaith
