#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/corpus.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

struct LensReading {
  std::string example_id;
  int position = 0;
  int layer = 0;
  std::vector<std::pair<std::string, double>> top_tokens;  // 5, logit-descending
  bool hint_hit = false;
};

enum class LensPattern { Answer, Contrast, Reference, FinalAnswer, NumberedStep };
const char* to_string(LensPattern p);
LensPattern lens_pattern_from_string(std::string_view name);

struct PatternWindow {
  std::string example_id;
  int center_position = 0;
  std::vector<std::string> window;  // up to 9 tokens, [p-4, p+4] clipped
  bool truncated = false;           // clipped at a sequence edge
  std::optional<LensPattern> pattern;
  std::map<int, double> per_layer_hint_logits;
};

void to_json(nlohmann::json& j, const PatternWindow& w);
void from_json(const nlohmann::json& j, PatternWindow& w);

// logits = U . LayerNorm(z). Epsilon-guarded normalization: degenerate (zero)
// vectors decode to U . beta rather than crashing.
std::vector<double> lens_decode(const std::vector<double>& z, const LensParams& lens);

// The unembedding stage alone (linear in its input).
std::vector<double> lens_decode_raw(const std::vector<double>& v, const LensParams& lens);

std::vector<double> apply_layer_norm(const std::vector<double>& v,
                                     const std::vector<double>& gamma,
                                     const std::vector<double>& beta, double eps);

// Keyword/regex tables for the five window patterns, shipped as data.
// Evaluation order: FinalAnswer, Contrast, Reference, NumberedStep, Answer
// (most generic last); the first matching rule wins.
struct PatternRules {
  std::vector<std::pair<LensPattern, std::vector<std::string>>> keyword_rules;
  bool numbered_step_rule = true;  // token matching ^\d+[.)]?$
};

PatternRules default_pattern_rules();
PatternRules pattern_rules_from_file(const std::filesystem::path& path);

std::optional<LensPattern> classify_pattern(const std::vector<std::string>& window,
                                            const PatternRules& rules = default_pattern_rules());

struct MineResult {
  std::vector<LensReading> readings;  // one per (position, layer) over the CoT
  std::vector<PatternWindow> windows; // one per position with an any-layer hit
};

// Top-5 lens mining over the generation (CoT) positions of one run. Only
// attention outputs are traced. Runs whose CoT lexically mentions the hint
// are excluded (empty result). Keywords grow case variants automatically.
MineResult mine_hint_positions(ModelBackend& backend, const std::string& example_id,
                               const std::string& prompt, const std::string& cot,
                               const HintSpec& hint,
                               const std::vector<std::string>& keywords,
                               const PatternRules& rules = default_pattern_rules());

struct LayerProfileRow {
  LensPattern pattern;
  int layer = 0;
  double mean = 0, ci_low = 0, ci_high = 0;
  long count = 0;
};

// Per-layer mean hint-token logit per pattern group with a bootstrap CI.
// Empty groups are omitted; a note is appended to `notes` for each.
std::vector<LayerProfileRow> layer_profile(const std::vector<PatternWindow>& windows,
                                           const BootstrapConfig& cfg = {},
                                           std::vector<std::string>* notes = nullptr);

std::vector<PatternWindow> load_pattern_windows(const RunStore& store);

}  // namespace cotfaith
