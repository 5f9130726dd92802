#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/metrics/biasing_features.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// Answer-slot probabilities of the hinted label (ph_*) and of the summed
// non-hinted labels (pnh_*) under the three conditions: (x, c), (x_h, c),
// (x, c_h). All from the same raw softmax convention (no renormalization), so
// ph + pnh <= 1 per condition.
struct CmaCell {
  std::string example_id;
  double ph_x_c = 0, ph_xh_c = 0, ph_x_ch = 0;
  double pnh_x_c = 0, pnh_xh_c = 0, pnh_x_ch = 0;
};

void to_json(nlohmann::json& j, const CmaCell& c);
void from_json(const nlohmann::json& j, CmaCell& c);

enum class CmaTarget { Hinted, NonHintedSum };
const char* to_string(CmaTarget t);

// Three probability evaluations per example of the BF-unfaithful set:
// baseline (x, c), hint added with the CoT held fixed (x_h, c), and baseline
// input with the hint-induced CoT substituted (x, c_h). Examples missing a
// stored CoT are skipped with a warning.
std::vector<CmaCell> collect_cells(const std::vector<BFOutcome>& bf_outcomes,
                                   ModelBackend& model, RunStore* store,
                                   std::vector<std::string>* warnings = nullptr,
                                   int workers = 1);

// Mean effect over examples with a BCa bootstrap CI. Requires >= 2 cells.
EffectEstimate nde(const std::vector<CmaCell>& cells, CmaTarget target,
                   const BootstrapConfig& cfg = {});
EffectEstimate nie(const std::vector<CmaCell>& cells, CmaTarget target,
                   const BootstrapConfig& cfg = {});

std::vector<CmaCell> load_cma_cells(const RunStore& store);

}  // namespace cotfaith
