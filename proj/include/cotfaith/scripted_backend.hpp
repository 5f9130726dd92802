#pragma once

#include "cotfaith/backend.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

// One table row: a fixed continuation + answer distribution for an exact
// prompt. Several weighted choices make the entry stochastic under sampled
// generation (chosen deterministically from the sampler seed + sample index).
struct ScriptedChoice {
  double weight = 1.0;
  std::string cot;
  std::map<std::string, double> label_probs;
};

struct ScriptedEntry {
  std::string cot;
  std::map<std::string, double> label_probs;
  std::vector<ScriptedChoice> choices;  // optional; overrides cot/label_probs
};

// Substring-predicate rule, evaluated in order; first match wins. A rule with
// `unless_unlearned` is skipped once that step text has been unlearned on the
// queried clone, which lets fixtures give individual reasoning steps a causal
// role.
struct ScriptedRule {
  std::optional<std::string> prompt_contains;
  std::optional<std::string> cot_contains;
  std::optional<bool> cot_empty;
  std::optional<std::string> unless_unlearned;
  std::optional<std::string> cot_out;
  std::optional<std::map<std::string, double>> probs;
};

class ScriptedBackend;

class ScriptedClone : public InterventionHandle {
public:
  std::set<std::string> unlearned;
};

// Table-driven deterministic backend for tests and offline pipelines.
//
// Resolution order for generations: complete_fn, exact entry (by prompt
// fingerprint), rules with cot_out, default entry. For answer distributions:
// answer_fn, rules with probs, exact entry, default entry. Anything
// unresolved raises a BackendError naming the prompt fingerprint.
class ScriptedBackend : public ModelBackend {
public:
  using CompleteFn = std::function<std::string(const std::string& text, int sample_index)>;
  using AnswerFn = std::function<std::map<std::string, double>(
      const std::string& prompt, const std::string& cot,
      const std::set<std::string>& unlearned)>;

  ScriptedBackend() = default;

  static ScriptedBackend from_file(const std::filesystem::path& table);
  static ScriptedBackend from_json(const nlohmann::json& j);

  // --- scripting surface ----------------------------------------------------
  void set_entry(const std::string& prompt_text, ScriptedEntry entry);
  void set_entry_by_fingerprint(const std::string& fingerprint, ScriptedEntry entry);
  void add_rule(ScriptedRule rule);
  void set_default(ScriptedEntry entry);
  void set_complete_fn(CompleteFn fn) { complete_fn_ = std::move(fn); }
  void set_answer_fn(AnswerFn fn) { answer_fn_ = std::move(fn); }
  void set_step_prob(const std::string& step_text, double p);
  void set_default_step_prob(double p) { default_step_prob_ = p; }

  // --- white-box scripting ---------------------------------------------------
  void set_vocab(std::vector<std::string> tokens);
  void set_activation(int layer, int position, std::vector<double> vec);
  void set_lens_params(LensParams params);
  void set_layer_count(int n) { layer_count_ = n; }

  // --- ModelBackend ----------------------------------------------------------
  std::string name() const override { return "scripted"; }
  Capabilities capabilities() const override;
  std::string complete(const std::string& text, const SamplerConfig& sampler,
                       int sample_index) override;
  std::map<std::string, double> answer_distribution(
      const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels) override;

  int layer_count() const override;
  std::vector<int> tokenize(const std::string& text) override;
  std::string token_text(int id) const override;
  std::vector<ActivationReading> trace(const std::string& text,
                                       const std::vector<int>& layers,
                                       const std::vector<int>& positions,
                                       Stream stream) override;
  LensParams lens_params() const override;

  double sequence_prob(const std::string& context, const std::string& target) override;
  std::shared_ptr<InterventionHandle> clone_for_intervention() override;
  double apply_gradient_step(InterventionHandle& handle, const UnlearnLossSpec& spec,
                             double learning_rate) override;
  std::map<std::string, double> answer_distribution_with(
      InterventionHandle& handle, const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels) override;
  double sequence_prob_with(InterventionHandle& handle, const std::string& context,
                            const std::string& target) override;

private:
  std::map<std::string, double> resolve_answer(const std::string& prompt,
                                               const std::string& cot,
                                               const std::set<std::string>& unlearned) const;
  double step_prob(const std::string& target, const std::set<std::string>& unlearned) const;

  std::map<std::string, ScriptedEntry> entries_;  // fingerprint -> entry
  std::vector<ScriptedRule> rules_;
  std::optional<ScriptedEntry> default_entry_;
  CompleteFn complete_fn_;
  AnswerFn answer_fn_;
  std::map<std::string, double> step_probs_;  // trimmed step text -> probability
  double default_step_prob_ = 0.5;

  std::vector<std::string> vocab_;
  std::map<std::string, int> vocab_index_;
  std::map<std::pair<int, int>, std::vector<double>> activations_;
  std::optional<LensParams> lens_;
  int layer_count_ = 0;
};

}  // namespace cotfaith
