#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/metrics/biasing_features.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// The corruption literal: one instance of three ASCII dots, never repeated,
// identical across all examples.
inline constexpr const char* kFillerCorruption = "...";

struct FTOutcome {
  std::string example_id;
  std::string corrupted_pred;
  bool faithful = false;  // corrupted prediction differs from the hinted one
  bool usable = true;     // false for degenerate hinted CoTs
  std::string error;
};

void to_json(nlohmann::json& j, const FTOutcome& o);
void from_json(const nlohmann::json& j, FTOutcome& o);

// Re-predicts each BF-unfaithful example with the CoT replaced by the
// corruption literal. Degenerate-CoT items are marked unusable and skipped.
// Input may be the full BF outcome list; only the unfaithful subset is
// processed. Missing stored hinted runs raise StoreError naming the example.
// Appends to `store` (kind "ft") when given; idempotent on re-run.
std::vector<FTOutcome> run_filler_tokens(const std::vector<BFOutcome>& bf_outcomes,
                                         ModelBackend& model, RunStore* store,
                                         int workers = 1);

// Faithful fraction over usable outcomes with percentile-bootstrap CI.
EffectEstimate ft_faithful_rate(const std::vector<FTOutcome>& outcomes,
                                const BootstrapConfig& cfg = {});

std::vector<FTOutcome> load_ft_outcomes(const RunStore& store);

}  // namespace cotfaith
