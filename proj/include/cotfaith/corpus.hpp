#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cotfaith {

enum class HintKind { Professor, Metadata, BlackSquares };

const char* to_string(HintKind kind);
HintKind hint_kind_from_string(std::string_view name);

// One multiple-choice item. Options are an ordered label -> text map; the
// option order is the canonical label order used for argmax tie-breaking.
struct Example {
  std::string id;
  std::string question;
  std::vector<std::pair<std::string, std::string>> options;
  std::optional<std::string> gold;
  std::string dataset;

  std::vector<std::string> labels() const;
  bool has_label(std::string_view label) const;
  const std::string& option_text(std::string_view label) const;

  // >=2 options, unique labels, gold (if present) among the labels.
  void validate() const;
};

struct HintSpec {
  HintKind kind = HintKind::Professor;
  std::string hinted_label;
  uint64_t seed = 0;
};

struct HintedPrompt {
  std::string text;
  std::optional<HintSpec> hint;
  std::vector<std::string> fewshot_ids;
  std::string example_id;
};

enum class CorpusFormat { Jsonl };

// Line-delimited records, one example per line:
//   {"id": ..., "question": ..., "options": [{"label": ..., "text": ...}],
//    "answer"?: ..., "dataset"?: ...}
// Errors name the offending line / record id. Empty corpus is an error.
std::vector<Example> load_corpus(const std::filesystem::path& path,
                                 CorpusFormat format = CorpusFormat::Jsonl);

// Hinted label drawn uniformly from labels \ {baseline_pred}, generator
// keyed by (seed, example id). Same inputs give the same spec.
HintSpec make_hint(const Example& example, const std::string& baseline_pred,
                   HintKind kind, uint64_t seed);

// Rendered prompt text. Professor / Metadata prepend a hint block, so the
// hinted text is exactly hint-block + unhinted text. Black Squares renders
// few-shot demonstrations with the gold option marked and the hinted option
// marked in the main example; each marked option line ends with the glyph.
HintedPrompt render_prompt(const Example& example,
                           const std::optional<HintSpec>& hint,
                           const std::vector<Example>& fewshot = {});

std::string professor_sentence(std::string_view label);
std::string metadata_block(std::string_view label);

inline constexpr std::string_view kSquareGlyph = "■";  // U+25A0 BLACK SQUARE

void to_json(nlohmann::json& j, const Example& e);
void from_json(const nlohmann::json& j, Example& e);
void to_json(nlohmann::json& j, const HintSpec& h);
void from_json(const nlohmann::json& j, HintSpec& h);
void to_json(nlohmann::json& j, const HintedPrompt& p);
void from_json(const nlohmann::json& j, HintedPrompt& p);

}  // namespace cotfaith
