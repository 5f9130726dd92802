#pragma once

#include "cotfaith/corpus.hpp"
#include "cotfaith/errors.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

struct SamplerConfig {
  enum class Mode { Greedy, Sample };
  Mode mode = Mode::Greedy;
  double temperature = 0.6;
  double top_p = 0.95;
  std::optional<int> top_k = 64;
  int max_new_tokens = 256;
  uint64_t seed = 0;

  void validate() const;  // sample mode requires temperature > 0
};

void to_json(nlohmann::json& j, const SamplerConfig& s);
void from_json(const nlohmann::json& j, SamplerConfig& s);

// One model run. label_probs holds the raw answer-slot values (softmax mass
// of each label's first token over the full vocabulary, not renormalized), so
// they sum to at most 1.
struct GenerationRecord {
  std::string example_id;
  std::string prompt_text;
  std::optional<HintSpec> hint;
  std::string cot;
  std::string prediction;  // empty until predict_label ran
  std::map<std::string, double> label_probs;
  SamplerConfig sampler;
  int sample_index = 0;
  bool degenerate = false;
};

void to_json(nlohmann::json& j, const GenerationRecord& g);
void from_json(const nlohmann::json& j, GenerationRecord& g);

struct Prediction {
  std::string label;
  std::map<std::string, double> probs;      // renormalized over the label set
  std::map<std::string, double> raw_probs;  // unnormalized softmax values
};

enum class Stream { AttnOutput, MlpOutput, FinalResidual };

struct ActivationReading {
  int layer = 0;
  int position = 0;
  std::vector<double> vector;
};

// Final-LayerNorm + unembedding parameters exported by white-box backends so
// intermediate activations can be decoded outside the model.
struct LensParams {
  int vocab = 0;
  int dim = 0;
  std::vector<double> unembed;  // row-major vocab x dim
  std::vector<double> ln_gamma;
  std::vector<double> ln_beta;
  double ln_eps = 1e-5;
};

struct Capabilities {
  bool white_box = false;         // activations, tokenization, lens params
  bool intervention = false;      // parameter clones + gradient steps
  bool sequence_scoring = false;  // length-normalized sequence probability
};

// Opaque mutable model handle. Interventions on a handle never affect the
// backing model; handles are exclusive (one mutator at a time).
class InterventionHandle {
public:
  virtual ~InterventionHandle() = default;
};

// Loss for one unlearning step: push down the probability of `target` given
// `context`, with a KL-to-base regularizer over context+target positions.
struct UnlearnLossSpec {
  std::string context;
  std::string target;
  double beta = 0.1;       // NPO inverse temperature
  double kl_weight = 1.0;  // weight of the KL-to-base term
};

class ModelBackend {
public:
  virtual ~ModelBackend() = default;

  virtual std::string name() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual std::string eos_text() const { return "<eos>"; }

  // Raw continuation for `text`. sample_index selects the reproducible stream
  // for sampled generation; greedy ignores it.
  virtual std::string complete(const std::string& text, const SamplerConfig& sampler,
                               int sample_index) = 0;

  // Raw answer-slot distribution over `labels` for prompt (+ optional CoT).
  virtual std::map<std::string, double> answer_distribution(
      const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels) = 0;

  // --- white-box surface; defaults raise CapabilityError -------------------
  virtual int layer_count() const;
  virtual std::vector<int> tokenize(const std::string& text);
  virtual std::string token_text(int id) const;
  virtual std::vector<ActivationReading> trace(const std::string& text,
                                               const std::vector<int>& layers,
                                               const std::vector<int>& positions,
                                               Stream stream);
  virtual LensParams lens_params() const;
  virtual std::vector<double> output_logits(const std::string& text, int position);

  // --- scoring + intervention; defaults raise CapabilityError --------------
  virtual double sequence_prob(const std::string& context, const std::string& target);
  virtual std::shared_ptr<InterventionHandle> clone_for_intervention();
  // Returns the loss value; throws Error on non-finite loss.
  virtual double apply_gradient_step(InterventionHandle& handle,
                                     const UnlearnLossSpec& spec, double learning_rate);
  virtual std::map<std::string, double> answer_distribution_with(
      InterventionHandle& handle, const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels);
  virtual double sequence_prob_with(InterventionHandle& handle,
                                    const std::string& context,
                                    const std::string& target);
};

// ---------------------------------------------------------------------------
// Gateway operations
// ---------------------------------------------------------------------------

// Fixed answer-eliciting suffix; predictions read the distribution at the
// token right after it.
inline constexpr const char* kAnswerSuffix = "\nAnswer:";

// prompt [+ "\n" + cot] + kAnswerSuffix. Empty CoT gives the no-CoT text.
std::string compose_answer_text(const std::string& prompt, const std::string& cot);

// Empty, whitespace-only, or consisting only of repeated end-of-sequence
// markers.
bool is_degenerate_cot(const std::string& cot, const std::string& eos_text);

GenerationRecord generate_cot(ModelBackend& backend, const HintedPrompt& prompt,
                              const SamplerConfig& sampler, int sample_index = 0);

// Argmax over `labels` of the raw answer-slot distribution; ties break to the
// earliest label in option order. Raw values retained alongside the
// renormalized view.
Prediction predict_label(ModelBackend& backend, const HintedPrompt& prompt,
                         const std::string& cot, const std::vector<std::string>& labels);

Prediction prediction_from_raw(const std::map<std::string, double>& raw,
                               const std::vector<std::string>& labels,
                               const std::string& example_id);

std::vector<ActivationReading> trace_activations(ModelBackend& backend,
                                                 const std::string& text,
                                                 const std::vector<int>& layers,
                                                 const std::vector<int>& positions,
                                                 Stream stream = Stream::AttnOutput);

// Retry `fn` on TransportError up to `attempts` total tries.
template <typename Fn>
auto with_transport_retries(Fn&& fn, int attempts = 2) -> decltype(fn()) {
  for (int i = 1;; ++i) {
    try {
      return fn();
    } catch (const TransportError&) {
      if (i >= attempts) throw;
    }
  }
}

}  // namespace cotfaith
