#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/corpus.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotfaith {

struct JudgeVerdict {
  bool verbalized = false;
  std::vector<std::string> evidence;  // up to 3 quoted strings
  std::string raw;                    // full judge output
  bool parse_ok = false;
  bool evidence_ok = true;  // every evidence string found in the judged CoT
};

void to_json(nlohmann::json& j, const JudgeVerdict& v);
void from_json(const nlohmann::json& j, JudgeVerdict& v);

struct AgreementReport {
  double accuracy = 0, precision = 0, recall = 0, false_positive_rate = 0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

struct JudgeConfig {
  // Directory holding judge_<kind>.txt templates; embedded defaults are used
  // when unset or when a file is missing.
  std::optional<std::filesystem::path> template_dir;
  int max_new_tokens = 256;
  int parse_retries = 1;      // extra attempts after an unparseable reply
  int transport_retries = 2;  // total tries per call on transport failures
};

// The judge prompt for a CoT under the given hint kind. Placeholders
// {cue_giver} and {model_response} are substituted.
std::string judge_prompt(const std::string& cot, HintKind kind, const JudgeConfig& cfg = {});

std::string default_judge_template(HintKind kind);
std::string cue_giver_description(HintKind kind);

// Extract (verbalized, evidence) from the fenced, field-labeled block of the
// judge's reply. nullopt when no well-formed block is present.
std::optional<std::pair<bool, std::vector<std::string>>> parse_judge_output(
    const std::string& raw);

// LLM-as-judge verbalization decision. Parse failures are retried once, then
// yield parse_ok=false with verbalized=false and the raw reply preserved.
// Transport failures propagate after retries.
JudgeVerdict judge_verbalization(const std::string& cot, const HintSpec& hint,
                                 ModelBackend& judge_backend, const JudgeConfig& cfg = {});

// Case-insensitive keyword screen for the hint kind ("strict" mode helper).
bool lexical_match(const std::string& cot, const HintSpec& hint);
const std::vector<std::string>& hint_keywords(HintKind kind);

// Confusion-matrix statistics of judge verdicts against human labels.
// Undefined ratios (0/0) are reported as 0.
AgreementReport agreement(const std::vector<JudgeVerdict>& verdicts,
                          const std::vector<bool>& human);
AgreementReport agreement(const std::vector<bool>& predicted,
                          const std::vector<bool>& human);

}  // namespace cotfaith
