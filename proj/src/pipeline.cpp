#include "cotfaith/pipeline.hpp"

#include "cotfaith/http_backend.hpp"
#include "cotfaith/rng.hpp"
#include "cotfaith/scripted_backend.hpp"
#include "cotfaith/toy_transformer.hpp"

#include <algorithm>
#include <fstream>

namespace cotfaith {

namespace fs = std::filesystem;

std::unique_ptr<ModelBackend> make_backend(const nlohmann::json& cfg,
                                           const fs::path& base_dir) {
  const std::string type = cfg.value("type", "");
  if (type == "scripted") {
    if (cfg.contains("table")) {
      fs::path table = cfg.at("table").get<std::string>();
      if (table.is_relative()) table = base_dir / table;
      return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(table));
    }
    return std::make_unique<ScriptedBackend>(ScriptedBackend::from_json(cfg));
  }
  if (type == "toy") {
    ToyTransformerConfig tc;
    tc.vocab_words = cfg.value("vocab", std::vector<std::string>{});
    tc.dim = cfg.value("dim", 32);
    tc.n_layers = cfg.value("layers", 3);
    tc.n_heads = cfg.value("heads", 2);
    tc.d_ff = cfg.value("d_ff", 64);
    tc.max_seq = cfg.value("max_seq", 256);
    tc.seed = cfg.value("seed", uint64_t{0});
    return std::make_unique<ToyTransformer>(tc);
  }
  if (type == "http") {
    HttpBackendConfig hc;
    hc.url = cfg.value("url", "");
    hc.api_key_env = cfg.value("api_key_env", "");
    hc.model = cfg.value("model", "");
    hc.timeout_seconds = cfg.value("timeout_seconds", 120);
    return std::make_unique<HttpBackend>(hc);
  }
  throw ValidationError("unknown backend type: '" + type +
                        "' (expected scripted|toy|http)");
}

ToolConfig tool_config_from_json(const nlohmann::json& j) {
  ToolConfig cfg;
  cfg.raw = j;
  cfg.seed = j.value("seed", uint64_t{0});
  cfg.workers = j.value("workers", 1);
  cfg.bootstrap.resamples = j.value("resamples", 10000);
  cfg.bootstrap.level = j.value("ci_level", 0.95);
  cfg.bootstrap.seed = cfg.seed;
  if (j.contains("sampler")) cfg.sampler = j.at("sampler").get<SamplerConfig>();
  cfg.sampler.seed = cfg.seed;
  cfg.backend = j.value("backend", nlohmann::json::object());
  cfg.judge_backend = j.value("judge_backend", nlohmann::json::object());
  if (j.contains("judge")) {
    const auto& jj = j.at("judge");
    if (jj.contains("template_dir"))
      cfg.judge.template_dir = fs::path(jj.at("template_dir").get<std::string>());
    cfg.judge.max_new_tokens = jj.value("max_new_tokens", 256);
    cfg.judge.parse_retries = jj.value("parse_retries", 1);
    cfg.judge.transport_retries = jj.value("transport_retries", 2);
  }
  if (j.contains("fur")) {
    const auto& jf = j.at("fur");
    cfg.fur.beta = jf.value("beta", 0.1);
    cfg.fur.kl_weight = jf.value("kl_weight", 1.0);
    cfg.fur.lr = jf.value("lr", 3e-6);
    cfg.fur.iters = jf.value("iters", 8);
    cfg.fur.plateau_eps = jf.value("plateau_eps", 1e-4);
    cfg.fur.plateau_patience = jf.value("plateau_patience", 2);
  }
  cfg.fak_samples = j.value("fak_samples", 128);
  cfg.fak_ks = j.value("fak_ks", std::vector<int>{1, 2, 4, 8, 16});
  cfg.fewshot_ids = j.value("fewshot_ids", std::vector<std::string>{});
  return cfg;
}

ToolConfig load_tool_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return tool_config_from_json(j);
}

std::string derive_run_id(const nlohmann::json& config_snapshot, uint64_t seed) {
  return "run-" + fingerprint_hex(config_snapshot.dump() + ":" + std::to_string(seed));
}

std::vector<Example> resolve_fewshot(const std::vector<Example>& corpus,
                                     const std::vector<std::string>& ids) {
  std::vector<Example> out;
  for (const auto& id : ids) {
    auto it = std::find_if(corpus.begin(), corpus.end(),
                           [&](const Example& e) { return e.id == id; });
    if (it == corpus.end())
      throw ValidationError("few-shot id '" + id + "' not found in corpus");
    out.push_back(*it);
  }
  return out;
}

PipelineOutcome run_pipeline(const std::vector<Example>& corpus, HintKind kind,
                             const ToolConfig& cfg, ModelBackend& model,
                             ModelBackend& judge_backend, const fs::path& dir) {
  Manifest manifest;
  manifest.seed = cfg.seed;
  manifest.config = cfg.raw;
  manifest.run_id = derive_run_id(cfg.raw, cfg.seed);
  RunStore store = RunStore::create(dir, manifest);

  PipelineOutcome out;

  BFRunConfig bf_cfg;
  bf_cfg.kind = kind;
  bf_cfg.seed = cfg.seed;
  bf_cfg.sampler = cfg.sampler;
  bf_cfg.sampler.mode = SamplerConfig::Mode::Greedy;
  bf_cfg.workers = cfg.workers;
  bf_cfg.fewshot = resolve_fewshot(corpus, cfg.fewshot_ids);
  auto bf_result =
      run_biasing_features(corpus, bf_cfg, model, judge_backend, cfg.judge, &store);
  out.bf = std::move(bf_result.outcomes);
  out.bf_errored = bf_result.errored;

  out.ft = run_filler_tokens(out.bf, model, &store, cfg.workers);

  if (model.capabilities().intervention)
    out.fur = run_fur(out.bf, model, cfg.fur, /*heldout=*/{}, &store);

  FakRunConfig fak_cfg;
  fak_cfg.kind = kind;
  fak_cfg.seed = cfg.seed;
  fak_cfg.sampler = cfg.sampler;
  fak_cfg.sampler.mode = SamplerConfig::Mode::Sample;
  if (fak_cfg.sampler.temperature <= 0) fak_cfg.sampler.temperature = 0.6;
  fak_cfg.samples = cfg.fak_samples;
  fak_cfg.ks = cfg.fak_ks;
  fak_cfg.fewshot = bf_cfg.fewshot;
  fak_cfg.workers = cfg.workers;
  out.fak = run_faithful_at_k(corpus, fak_cfg, model, judge_backend, cfg.judge, &store);

  out.cma = collect_cells(out.bf, model, &store, nullptr, cfg.workers);
  return out;
}

}  // namespace cotfaith
