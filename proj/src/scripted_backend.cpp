#include "cotfaith/scripted_backend.hpp"

#include "cotfaith/rng.hpp"
#include "cotfaith/text.hpp"

#include <algorithm>
#include <fstream>

namespace cotfaith {

namespace {

ScriptedEntry entry_from_json(const nlohmann::json& j) {
  ScriptedEntry e;
  e.cot = j.value("cot", "");
  e.label_probs = j.value("label_probs", std::map<std::string, double>{});
  if (j.contains("choices")) {
    for (const auto& c : j.at("choices")) {
      ScriptedChoice ch;
      ch.weight = c.value("weight", 1.0);
      ch.cot = c.value("cot", "");
      ch.label_probs = c.value("label_probs", std::map<std::string, double>{});
      e.choices.push_back(std::move(ch));
    }
  }
  return e;
}

}  // namespace

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& table) {
  std::ifstream in(table);
  if (!in) throw ParseError("cannot open scripted table: " + table.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scripted table " + table.string() + ": " + e.what());
  }
  return from_json(j);
}

ScriptedBackend ScriptedBackend::from_json(const nlohmann::json& j) {
  ScriptedBackend b;
  for (const auto& item : j.value("entries", nlohmann::json::array())) {
    ScriptedEntry e = entry_from_json(item);
    if (item.contains("prompt"))
      b.set_entry(item.at("prompt").get<std::string>(), std::move(e));
    else if (item.contains("fingerprint"))
      b.set_entry_by_fingerprint(item.at("fingerprint").get<std::string>(), std::move(e));
    else
      throw ParseError("scripted table entry needs 'prompt' or 'fingerprint'");
  }
  for (const auto& item : j.value("rules", nlohmann::json::array())) {
    ScriptedRule r;
    if (item.contains("prompt_contains"))
      r.prompt_contains = item.at("prompt_contains").get<std::string>();
    if (item.contains("cot_contains"))
      r.cot_contains = item.at("cot_contains").get<std::string>();
    if (item.contains("cot_empty")) r.cot_empty = item.at("cot_empty").get<bool>();
    if (item.contains("unless_unlearned"))
      r.unless_unlearned = item.at("unless_unlearned").get<std::string>();
    if (item.contains("cot")) r.cot_out = item.at("cot").get<std::string>();
    if (item.contains("label_probs"))
      r.probs = item.at("label_probs").get<std::map<std::string, double>>();
    b.add_rule(std::move(r));
  }
  if (j.contains("default")) b.set_default(entry_from_json(j.at("default")));
  for (const auto& [step, p] : j.value("step_probs", std::map<std::string, double>{}))
    b.set_step_prob(step, p);
  if (j.contains("default_step_prob"))
    b.set_default_step_prob(j.at("default_step_prob").get<double>());
  if (j.contains("vocab")) b.set_vocab(j.at("vocab").get<std::vector<std::string>>());
  return b;
}

void ScriptedBackend::set_entry(const std::string& prompt_text, ScriptedEntry entry) {
  entries_[fingerprint_hex(prompt_text)] = std::move(entry);
}

void ScriptedBackend::set_entry_by_fingerprint(const std::string& fingerprint,
                                               ScriptedEntry entry) {
  entries_[fingerprint] = std::move(entry);
}

void ScriptedBackend::add_rule(ScriptedRule rule) { rules_.push_back(std::move(rule)); }

void ScriptedBackend::set_default(ScriptedEntry entry) { default_entry_ = std::move(entry); }

void ScriptedBackend::set_step_prob(const std::string& step_text, double p) {
  step_probs_[trim(step_text)] = p;
}

void ScriptedBackend::set_vocab(std::vector<std::string> tokens) {
  vocab_ = std::move(tokens);
  vocab_index_.clear();
  for (size_t i = 0; i < vocab_.size(); ++i)
    vocab_index_[vocab_[i]] = static_cast<int>(i);
}

void ScriptedBackend::set_activation(int layer, int position, std::vector<double> vec) {
  activations_[{layer, position}] = std::move(vec);
}

void ScriptedBackend::set_lens_params(LensParams params) { lens_ = std::move(params); }

Capabilities ScriptedBackend::capabilities() const {
  Capabilities c;
  c.white_box = lens_.has_value() || !activations_.empty() || !vocab_.empty();
  c.intervention = true;
  c.sequence_scoring = true;
  return c;
}

namespace {

bool rule_matches(const ScriptedRule& r, const std::string& prompt, const std::string& cot,
                  const std::set<std::string>& unlearned, bool want_cot, bool want_probs) {
  if (want_cot && !r.cot_out) return false;
  if (want_probs && !r.probs) return false;
  if (r.prompt_contains && prompt.find(*r.prompt_contains) == std::string::npos)
    return false;
  if (r.cot_contains && cot.find(*r.cot_contains) == std::string::npos) return false;
  if (r.cot_empty && (trim(cot).empty() != *r.cot_empty)) return false;
  if (r.unless_unlearned && unlearned.count(trim(*r.unless_unlearned))) return false;
  return true;
}

}  // namespace

std::string ScriptedBackend::complete(const std::string& text, const SamplerConfig& sampler,
                                      int sample_index) {
  sampler.validate();
  if (complete_fn_) return complete_fn_(text, sample_index);

  const std::string fp = fingerprint_hex(text);
  auto pick = [&](const ScriptedEntry& e) -> std::string {
    if (e.choices.empty()) return e.cot;
    if (sampler.mode == SamplerConfig::Mode::Greedy) return e.choices.front().cot;
    double total = 0.0;
    for (const auto& c : e.choices) total += c.weight;
    auto rng = DeterministicRng::keyed(sampler.seed, fnv1a64(fp),
                                       static_cast<uint64_t>(sample_index));
    double x = rng.next_double() * total;
    for (const auto& c : e.choices) {
      x -= c.weight;
      if (x < 0) return c.cot;
    }
    return e.choices.back().cot;
  };

  if (auto it = entries_.find(fp); it != entries_.end()) return pick(it->second);
  static const std::set<std::string> kNoUnlearned;
  for (const auto& r : rules_)
    if (rule_matches(r, text, "", kNoUnlearned, /*want_cot=*/true, /*want_probs=*/false))
      return *r.cot_out;
  if (default_entry_) return pick(*default_entry_);
  throw BackendError("scripted backend has no continuation for prompt fingerprint " + fp,
                     false);
}

std::map<std::string, double> ScriptedBackend::resolve_answer(
    const std::string& prompt, const std::string& cot,
    const std::set<std::string>& unlearned) const {
  if (answer_fn_) return answer_fn_(prompt, cot, unlearned);
  for (const auto& r : rules_)
    if (rule_matches(r, prompt, cot, unlearned, /*want_cot=*/false, /*want_probs=*/true))
      return *r.probs;
  const std::string fp = fingerprint_hex(prompt);
  if (auto it = entries_.find(fp); it != entries_.end()) {
    const ScriptedEntry& e = it->second;
    if (!e.choices.empty() && !e.choices.front().label_probs.empty())
      return e.choices.front().label_probs;
    if (!e.label_probs.empty()) return e.label_probs;
  }
  if (default_entry_ && !default_entry_->label_probs.empty())
    return default_entry_->label_probs;
  throw BackendError("scripted backend has no answer distribution for prompt fingerprint " +
                         fp,
                     false);
}

std::map<std::string, double> ScriptedBackend::answer_distribution(
    const std::string& prompt, const std::string& cot,
    const std::vector<std::string>& labels) {
  (void)labels;
  static const std::set<std::string> kNoUnlearned;
  return resolve_answer(prompt, cot, kNoUnlearned);
}

int ScriptedBackend::layer_count() const {
  if (layer_count_ > 0) return layer_count_;
  int max_layer = -1;
  for (const auto& [key, _] : activations_) max_layer = std::max(max_layer, key.first);
  if (max_layer >= 0) return max_layer + 1;
  return ModelBackend::layer_count();
}

std::vector<int> ScriptedBackend::tokenize(const std::string& text) {
  if (vocab_.empty()) return ModelBackend::tokenize(text);
  std::vector<int> ids;
  for (const auto& tok : word_tokenize(text)) {
    auto it = vocab_index_.find(tok);
    ids.push_back(it == vocab_index_.end() ? 0 : it->second);
  }
  return ids;
}

std::string ScriptedBackend::token_text(int id) const {
  if (vocab_.empty()) return ModelBackend::token_text(id);
  if (id < 0 || id >= static_cast<int>(vocab_.size()))
    throw ValidationError("scripted token id out of range: " + std::to_string(id));
  return vocab_[static_cast<size_t>(id)];
}

std::vector<ActivationReading> ScriptedBackend::trace(const std::string& text,
                                                      const std::vector<int>& layers,
                                                      const std::vector<int>& positions,
                                                      Stream stream) {
  if (activations_.empty()) return ModelBackend::trace(text, layers, positions, stream);
  if (stream != Stream::AttnOutput)
    throw CapabilityError("scripted backend only scripts attention-output activations");
  const int n_layers = layer_count();
  std::vector<ActivationReading> out;
  for (int pos : positions) {
    for (int layer : layers) {
      if (layer < 0 || layer >= n_layers)
        throw ValidationError("trace layer " + std::to_string(layer) +
                              " out of range [0," + std::to_string(n_layers) + ")");
      auto it = activations_.find({layer, pos});
      if (it == activations_.end())
        throw ValidationError("scripted backend has no activation for layer " +
                              std::to_string(layer) + " position " + std::to_string(pos));
      out.push_back({layer, pos, it->second});
    }
  }
  return out;
}

LensParams ScriptedBackend::lens_params() const {
  if (!lens_) return ModelBackend::lens_params();
  return *lens_;
}

double ScriptedBackend::step_prob(const std::string& target,
                                  const std::set<std::string>& unlearned) const {
  const std::string key = trim(target);
  if (unlearned.count(key)) return 0.0;
  auto it = step_probs_.find(key);
  return it == step_probs_.end() ? default_step_prob_ : it->second;
}

double ScriptedBackend::sequence_prob(const std::string&, const std::string& target) {
  static const std::set<std::string> kNoUnlearned;
  return step_prob(target, kNoUnlearned);
}

std::shared_ptr<InterventionHandle> ScriptedBackend::clone_for_intervention() {
  return std::make_shared<ScriptedClone>();
}

double ScriptedBackend::apply_gradient_step(InterventionHandle& handle,
                                            const UnlearnLossSpec& spec,
                                            double learning_rate) {
  auto& clone = dynamic_cast<ScriptedClone&>(handle);
  // Simulated unlearning: any positive learning rate zeroes the step's entry.
  if (learning_rate > 0) clone.unlearned.insert(trim(spec.target));
  return 0.0;
}

std::map<std::string, double> ScriptedBackend::answer_distribution_with(
    InterventionHandle& handle, const std::string& prompt, const std::string& cot,
    const std::vector<std::string>& labels) {
  (void)labels;
  auto& clone = dynamic_cast<ScriptedClone&>(handle);
  return resolve_answer(prompt, cot, clone.unlearned);
}

double ScriptedBackend::sequence_prob_with(InterventionHandle& handle, const std::string&,
                                           const std::string& target) {
  auto& clone = dynamic_cast<ScriptedClone&>(handle);
  return step_prob(target, clone.unlearned);
}

}  // namespace cotfaith
