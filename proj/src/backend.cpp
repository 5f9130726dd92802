#include "cotfaith/backend.hpp"

#include "cotfaith/text.hpp"

namespace cotfaith {

void SamplerConfig::validate() const {
  if (temperature < 0) throw ValidationError("sampler temperature must be >= 0");
  if (!(top_p > 0 && top_p <= 1)) throw ValidationError("sampler top_p must be in (0,1]");
  if (top_k && *top_k <= 0) throw ValidationError("sampler top_k must be positive");
  if (max_new_tokens <= 0) throw ValidationError("sampler max_new_tokens must be positive");
  if (mode == Mode::Sample && temperature <= 0)
    throw ValidationError("sampled generation requires temperature > 0");
}

void to_json(nlohmann::json& j, const SamplerConfig& s) {
  j = nlohmann::json{{"mode", s.mode == SamplerConfig::Mode::Greedy ? "greedy" : "sample"},
                     {"temperature", s.temperature},
                     {"top_p", s.top_p},
                     {"max_new_tokens", s.max_new_tokens},
                     {"seed", s.seed}};
  if (s.top_k) j["top_k"] = *s.top_k;
}

void from_json(const nlohmann::json& j, SamplerConfig& s) {
  const std::string mode = j.value("mode", "greedy");
  if (mode == "greedy") s.mode = SamplerConfig::Mode::Greedy;
  else if (mode == "sample") s.mode = SamplerConfig::Mode::Sample;
  else throw ValidationError("unknown sampler mode: " + mode);
  s.temperature = j.value("temperature", 0.6);
  s.top_p = j.value("top_p", 0.95);
  if (j.contains("top_k") && !j.at("top_k").is_null())
    s.top_k = j.at("top_k").get<int>();
  else
    s.top_k.reset();
  s.max_new_tokens = j.value("max_new_tokens", 256);
  s.seed = j.value("seed", uint64_t{0});
}

void to_json(nlohmann::json& j, const GenerationRecord& g) {
  j = nlohmann::json{{"example_id", g.example_id},
                     {"prompt_text", g.prompt_text},
                     {"cot", g.cot},
                     {"prediction", g.prediction},
                     {"label_probs", g.label_probs},
                     {"sampler", g.sampler},
                     {"sample_index", g.sample_index},
                     {"degenerate", g.degenerate}};
  if (g.hint) j["hint"] = *g.hint;
}

void from_json(const nlohmann::json& j, GenerationRecord& g) {
  g.example_id = j.value("example_id", "");
  g.prompt_text = j.value("prompt_text", "");
  g.cot = j.value("cot", "");
  g.prediction = j.value("prediction", "");
  g.label_probs = j.value("label_probs", std::map<std::string, double>{});
  if (j.contains("sampler")) g.sampler = j.at("sampler").get<SamplerConfig>();
  g.sample_index = j.value("sample_index", 0);
  g.degenerate = j.value("degenerate", false);
  if (j.contains("hint") && !j.at("hint").is_null())
    g.hint = j.at("hint").get<HintSpec>();
  else
    g.hint.reset();
}

// ---------------------------------------------------------------------------
// ModelBackend white-box defaults
// ---------------------------------------------------------------------------

static CapabilityError no_white_box(const std::string& name, const char* op) {
  return CapabilityError("backend '" + name + "' has no white-box access (" + op + ")");
}

int ModelBackend::layer_count() const { throw no_white_box(name(), "layer_count"); }

std::vector<int> ModelBackend::tokenize(const std::string&) {
  throw no_white_box(name(), "tokenize");
}

std::string ModelBackend::token_text(int) const {
  throw no_white_box(name(), "token_text");
}

std::vector<ActivationReading> ModelBackend::trace(const std::string&,
                                                   const std::vector<int>&,
                                                   const std::vector<int>&, Stream) {
  throw no_white_box(name(), "trace");
}

LensParams ModelBackend::lens_params() const { throw no_white_box(name(), "lens_params"); }

std::vector<double> ModelBackend::output_logits(const std::string&, int) {
  throw no_white_box(name(), "output_logits");
}

double ModelBackend::sequence_prob(const std::string&, const std::string&) {
  throw CapabilityError("backend '" + name() + "' cannot score sequences");
}

std::shared_ptr<InterventionHandle> ModelBackend::clone_for_intervention() {
  throw CapabilityError("backend '" + name() + "' does not support parameter intervention");
}

double ModelBackend::apply_gradient_step(InterventionHandle&, const UnlearnLossSpec&,
                                         double) {
  throw CapabilityError("backend '" + name() + "' does not support parameter intervention");
}

std::map<std::string, double> ModelBackend::answer_distribution_with(
    InterventionHandle&, const std::string&, const std::string&,
    const std::vector<std::string>&) {
  throw CapabilityError("backend '" + name() + "' does not support parameter intervention");
}

double ModelBackend::sequence_prob_with(InterventionHandle&, const std::string&,
                                        const std::string&) {
  throw CapabilityError("backend '" + name() + "' does not support parameter intervention");
}

// ---------------------------------------------------------------------------
// Gateway operations
// ---------------------------------------------------------------------------

std::string compose_answer_text(const std::string& prompt, const std::string& cot) {
  if (cot.empty()) return prompt + kAnswerSuffix;
  return prompt + "\n" + cot + kAnswerSuffix;
}

bool is_degenerate_cot(const std::string& cot, const std::string& eos_text) {
  std::string rest = trim(cot);
  if (rest.empty()) return true;
  if (eos_text.empty()) return false;
  while (rest.rfind(eos_text, 0) == 0) {
    rest = trim(rest.substr(eos_text.size()));
    if (rest.empty()) return true;
  }
  return false;
}

GenerationRecord generate_cot(ModelBackend& backend, const HintedPrompt& prompt,
                              const SamplerConfig& sampler, int sample_index) {
  sampler.validate();
  GenerationRecord rec;
  rec.example_id = prompt.example_id;
  rec.prompt_text = prompt.text;
  rec.hint = prompt.hint;
  rec.sampler = sampler;
  rec.sample_index = sample_index;
  rec.cot = backend.complete(prompt.text, sampler, sample_index);
  rec.degenerate = is_degenerate_cot(rec.cot, backend.eos_text());
  return rec;
}

Prediction prediction_from_raw(const std::map<std::string, double>& raw,
                               const std::vector<std::string>& labels,
                               const std::string& example_id) {
  if (labels.empty())
    throw ValidationError("prediction for '" + example_id + "': empty label set");
  Prediction pred;
  double total = 0.0;
  bool any = false;
  for (const auto& label : labels) {
    auto it = raw.find(label);
    const double p = it == raw.end() ? 0.0 : it->second;
    if (p < -1e-12 || p > 1.0 + 1e-9)
      throw ValidationError("prediction for '" + example_id + "': probability " +
                            std::to_string(p) + " for label '" + label +
                            "' out of [0,1]");
    pred.raw_probs[label] = p;
    total += p;
    if (p > 0.0) any = true;
  }
  if (!any)
    throw BackendError("prediction for '" + example_id +
                       "': no label token decodable at the answer position",
                       false);
  // Argmax in option order; strict inequality keeps the earliest label on ties.
  const std::string* best = &labels.front();
  for (const auto& label : labels)
    if (pred.raw_probs[label] > pred.raw_probs[*best]) best = &label;
  pred.label = *best;
  for (const auto& label : labels) pred.probs[label] = pred.raw_probs[label] / total;
  return pred;
}

Prediction predict_label(ModelBackend& backend, const HintedPrompt& prompt,
                         const std::string& cot, const std::vector<std::string>& labels) {
  auto raw = backend.answer_distribution(prompt.text, cot, labels);
  return prediction_from_raw(raw, labels, prompt.example_id);
}

std::vector<ActivationReading> trace_activations(ModelBackend& backend,
                                                 const std::string& text,
                                                 const std::vector<int>& layers,
                                                 const std::vector<int>& positions,
                                                 Stream stream) {
  return backend.trace(text, layers, positions, stream);
}

}  // namespace cotfaith
