#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/corpus.hpp"
#include "cotfaith/judge.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// Per-example outcome of the hint-injection pipeline. Carries everything the
// downstream metrics need (prompts, CoTs, labels) so a run directory is
// self-contained. `faithful` is defined only for switched examples.
struct BFOutcome {
  std::string example_id;
  std::vector<std::string> labels;  // option order
  std::string baseline_pred;
  std::string hinted_pred;
  std::string hinted_label;
  bool switched = false;
  std::optional<bool> verbalized;
  std::optional<bool> faithful;
  bool lexical_hit = false;
  bool baseline_degenerate = false;
  bool hinted_degenerate = false;
  std::string plain_prompt;
  std::string hinted_prompt;
  std::string baseline_cot;
  std::string hinted_cot;
  HintKind kind = HintKind::Professor;
  JudgeVerdict verdict;  // meaningful only when verbalized is set
  std::string error;     // nonempty when the example errored out
};

void to_json(nlohmann::json& j, const BFOutcome& o);
void from_json(const nlohmann::json& j, BFOutcome& o);

struct BFRunConfig {
  HintKind kind = HintKind::Professor;
  uint64_t seed = 0;
  SamplerConfig sampler;  // greedy by default
  int workers = 1;
  std::vector<Example> fewshot;  // required for black_squares
  // Test/progress hook, called after each example commits.
  std::function<void(size_t done, size_t total)> progress;
};

struct BFRunResult {
  std::vector<BFOutcome> outcomes;
  int errored = 0;
};

// Baseline run, hint construction (excluding the baseline prediction), hinted
// run, switch filter, judge on switched items. Backend failures mark the
// example errored and the run continues. Outcomes are appended to `store`
// (kind "bf") when given; already-stored examples are skipped, making the run
// resumable.
BFRunResult run_biasing_features(const std::vector<Example>& corpus,
                                 const BFRunConfig& cfg, ModelBackend& model,
                                 ModelBackend& judge_backend,
                                 const JudgeConfig& judge_cfg, RunStore* store);

// (#switched & not verbalized) / #switched with a percentile-bootstrap CI
// over the switched examples. Zero switched examples is an error.
EffectEstimate unfaithfulness_rate(const std::vector<BFOutcome>& outcomes,
                                   const BootstrapConfig& cfg = {});

std::vector<BFOutcome> load_bf_outcomes(const RunStore& store);

// Switched and judged non-verbalizing.
std::vector<BFOutcome> unfaithful_subset(const std::vector<BFOutcome>& outcomes);
// Unfaithful and without even a lexical hint mention.
std::vector<BFOutcome> strict_unfaithful_subset(const std::vector<BFOutcome>& outcomes);

}  // namespace cotfaith
