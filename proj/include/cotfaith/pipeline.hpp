#pragma once

#include "cotfaith/analysis/cma.hpp"
#include "cotfaith/analysis/logit_lens.hpp"
#include "cotfaith/backend.hpp"
#include "cotfaith/judge.hpp"
#include "cotfaith/metrics/biasing_features.hpp"
#include "cotfaith/metrics/faithful_at_k.hpp"
#include "cotfaith/metrics/filler_tokens.hpp"
#include "cotfaith/metrics/fur.hpp"
#include "cotfaith/run_store.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// Builds a backend from its JSON config:
//   {"type": "scripted", "table": <path> | inline fields}
//   {"type": "toy", "vocab": [...], "dim": ..., "layers": ..., "seed": ...}
//   {"type": "http", "url": ..., "api_key_env": ..., "model": ...}
std::unique_ptr<ModelBackend> make_backend(const nlohmann::json& cfg,
                                           const std::filesystem::path& base_dir = ".");

struct ToolConfig {
  uint64_t seed = 0;
  int workers = 1;
  BootstrapConfig bootstrap;
  SamplerConfig sampler;
  nlohmann::json backend;        // model backend config
  nlohmann::json judge_backend;  // defaults to `backend` when empty
  JudgeConfig judge;
  FurConfig fur;
  int fak_samples = 128;
  std::vector<int> fak_ks{1, 2, 4, 8, 16};
  std::vector<std::string> fewshot_ids;  // for black_squares runs
  nlohmann::json raw;                    // full config snapshot for the manifest
};

ToolConfig load_tool_config(const std::filesystem::path& path);
ToolConfig tool_config_from_json(const nlohmann::json& j);

// Deterministic run id derived from the config snapshot and seed.
std::string derive_run_id(const nlohmann::json& config_snapshot, uint64_t seed);

// Few-shot examples resolved from ids against the corpus.
std::vector<Example> resolve_fewshot(const std::vector<Example>& corpus,
                                     const std::vector<std::string>& ids);

// The whole battery on one corpus: bf -> ft -> fur -> fak -> cma, all
// persisted under `dir`. Used by the CLI and the determinism/resume tests.
struct PipelineOutcome {
  std::vector<BFOutcome> bf;
  std::vector<FTOutcome> ft;
  std::vector<FURResult> fur;
  std::vector<SampleTally> fak;
  std::vector<CmaCell> cma;
  int bf_errored = 0;
};

PipelineOutcome run_pipeline(const std::vector<Example>& corpus, HintKind kind,
                             const ToolConfig& cfg, ModelBackend& model,
                             ModelBackend& judge_backend,
                             const std::filesystem::path& dir);

}  // namespace cotfaith
