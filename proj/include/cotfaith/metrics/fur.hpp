#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/corpus.hpp"
#include "cotfaith/metrics/biasing_features.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// Character spans of the reasoning steps, non-overlapping and ordered.
struct StepSegmentation {
  std::string example_id;
  std::vector<std::pair<size_t, size_t>> steps;  // [start, end)
};

// Sentence-level segmentation; enumerated-list markers ("1.", "2)", "Step 3:")
// start new steps. Deterministic; empty CoT is an error.
StepSegmentation segment_steps(const std::string& cot, const std::string& example_id = "");

struct UnlearnOutcome {
  int step_index = 0;
  double efficacy = 0.0;
  std::string pred_after;
  bool flipped = false;
  double specificity = 1.0;  // NaN-free; 1.0 when no held-out set configured
};

struct FURResult {
  std::string example_id;
  bool usable = false;
  std::vector<UnlearnOutcome> step_outcomes;
  bool faithful = false;  // any step flipped the no-CoT prediction
  double specificity = 1.0;  // mean over steps
  std::string error;
};

void to_json(nlohmann::json& j, const FURResult& r);
void from_json(const nlohmann::json& j, FURResult& r);

struct FurConfig {
  double beta = 0.1;        // NPO inverse temperature
  double kl_weight = 1.0;   // KL-to-base coefficient
  double lr = 3e-6;
  int iters = 8;
  double plateau_eps = 1e-4;  // early stop when the step probability stops moving
  int plateau_patience = 2;
};

// Relative reduction of the step probability; p_base must be positive.
// Negative when the probability rose; never above 1.
double efficacy(double p_base, double p_unlearned);

// Runs up to cfg.iters gradient steps of the unlearning loss on the clone,
// early-stopping on a probability plateau. Throws on divergence.
void unlearn_step(ModelBackend& backend, InterventionHandle& clone,
                  const std::string& context, const std::string& step_text,
                  double learning_rate, int iters, const FurConfig& cfg);

// Fraction of held-out items whose no-CoT prediction survives the
// intervention. Empty held-out set is an error.
double specificity(ModelBackend& backend, InterventionHandle& clone,
                   const std::vector<Example>& heldout);

// Per-step unlearn -> re-predict cycle with a fresh clone per step. Usable
// examples are those whose no-CoT and CoT predictions match and whose CoT is
// non-degenerate. `heldout` may be empty (specificity reported as 1.0).
// Input may be the full BF list; only the unfaithful subset is processed.
std::vector<FURResult> run_fur(const std::vector<BFOutcome>& bf_outcomes,
                               ModelBackend& model, const FurConfig& cfg,
                               const std::vector<Example>& heldout, RunStore* store);

struct LrGridPoint {
  double lr = 0.0;
  double mean_efficacy = 0.0;      // in [roughly -inf, 1], averaged over steps
  double mean_specificity = 1.0;   // in [0, 1]
  double faithful_fraction = 0.0;  // in [0, 1]
};

void to_json(nlohmann::json& j, const LrGridPoint& p);
void from_json(const nlohmann::json& j, LrGridPoint& p);

struct LrSearchResult {
  double chosen_lr = 0.0;
  std::vector<LrGridPoint> grid;
};

// Picks the grid point with maximal mean efficacy subject to
// mean_specificity >= floor. No qualifying point: error listing the frontier.
LrSearchResult select_learning_rate(std::vector<LrGridPoint> grid,
                                    double specificity_floor = 0.95);

// Measures the grid on held-out examples (plain prompts — hints excluded),
// then selects. Each example's CoT comes from a greedy baseline generation.
LrSearchResult lr_search(ModelBackend& model, const std::vector<double>& lrs,
                         const std::vector<Example>& heldout, const FurConfig& cfg,
                         const SamplerConfig& sampler = {},
                         double specificity_floor = 0.95);

std::vector<FURResult> load_fur_results(const RunStore& store);

}  // namespace cotfaith
