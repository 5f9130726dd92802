#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/corpus.hpp"
#include "cotfaith/judge.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

struct SampleTally {
  std::string example_id;
  long n = 0;            // samples whose answer switched to the hinted label
  long c = 0;            // switched samples judged as verbalizing
  long total_drawn = 0;  // e.g. 128
};

void to_json(nlohmann::json& j, const SampleTally& t);
void from_json(const nlohmann::json& j, SampleTally& t);

// 1 - C(n-c, k) / C(n, k), evaluated as a product of ratios; stable for
// n up to 10,000. Requires 0 <= c <= n and 1 <= k <= n.
double faithful_at_k(long n, long c, long k);

// Exact value as a reduced fraction (second route; valid for n <= 62).
std::pair<unsigned long long, unsigned long long> faithful_at_k_rational(long n, long c,
                                                                         long k);

// One sampled generation plus its switch/judge outcome.
struct FakSample {
  GenerationRecord gen;
  bool switched = false;
  std::optional<JudgeVerdict> verdict;  // present when switched
};

void to_json(nlohmann::json& j, const FakSample& s);
void from_json(const nlohmann::json& j, FakSample& s);

struct FakRunConfig {
  HintKind kind = HintKind::Professor;
  uint64_t seed = 0;
  SamplerConfig sampler;  // must be sample mode
  int samples = 128;
  std::vector<int> ks{1, 2, 4, 8, 16};
  std::vector<Example> fewshot;
  int workers = 1;
  std::function<void(size_t done, size_t total)> progress;
};

// Draws `count` hinted samples for one example (sample_index 0..count-1),
// judging the switched ones. Verdicts are cached by (CoT hash, hint) and
// previously stored samples are reused, so interrupted runs resume without
// re-judging. `judge_cache` may be nullptr.
std::vector<FakSample> draw_samples(
    const Example& example, const HintSpec& hint, ModelBackend& model,
    const SamplerConfig& sampler, int count, ModelBackend* judge_backend,
    const JudgeConfig& judge_cfg, RunStore* store,
    std::map<uint64_t, JudgeVerdict>* judge_cache);

// Whole-corpus protocol: baseline greedy prediction, hint construction,
// `samples` hinted draws per example, tallies. Sample records land in the
// store (kind "fak"); tallies are a pure fold over them.
std::vector<SampleTally> run_faithful_at_k(const std::vector<Example>& corpus,
                                           const FakRunConfig& cfg, ModelBackend& model,
                                           ModelBackend& judge_backend,
                                           const JudgeConfig& judge_cfg, RunStore* store);

SampleTally tally_samples(const std::string& example_id,
                          const std::vector<FakSample>& samples);
std::vector<SampleTally> load_tallies(const RunStore& store);

// Mean over examples per k with a percentile-bootstrap CI over examples.
// Tallies with n < max(ks) are excluded here; an empty usable set is an error.
std::map<int, EffectEstimate> faithful_at_k_curve(const std::vector<SampleTally>& tallies,
                                                  const std::vector<int>& ks,
                                                  const BootstrapConfig& cfg = {});

}  // namespace cotfaith
