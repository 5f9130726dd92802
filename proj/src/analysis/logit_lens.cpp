#include "cotfaith/analysis/logit_lens.hpp"

#include "cotfaith/judge.hpp"
#include "cotfaith/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace cotfaith {

const char* to_string(LensPattern p) {
  switch (p) {
    case LensPattern::Answer: return "Answer";
    case LensPattern::Contrast: return "Contrast";
    case LensPattern::Reference: return "Reference";
    case LensPattern::FinalAnswer: return "FinalAnswer";
    case LensPattern::NumberedStep: return "NumberedStep";
  }
  return "Answer";
}

LensPattern lens_pattern_from_string(std::string_view name) {
  if (name == "Answer") return LensPattern::Answer;
  if (name == "Contrast") return LensPattern::Contrast;
  if (name == "Reference") return LensPattern::Reference;
  if (name == "FinalAnswer") return LensPattern::FinalAnswer;
  if (name == "NumberedStep") return LensPattern::NumberedStep;
  throw ValidationError("unknown lens pattern: '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const PatternWindow& w) {
  j = nlohmann::json{{"example_id", w.example_id},
                     {"center_position", w.center_position},
                     {"window", w.window},
                     {"truncated", w.truncated}};
  if (w.pattern) j["pattern"] = to_string(*w.pattern);
  nlohmann::json logits = nlohmann::json::object();
  for (const auto& [layer, v] : w.per_layer_hint_logits)
    logits[std::to_string(layer)] = v;
  j["per_layer_hint_logits"] = logits;
}

void from_json(const nlohmann::json& j, PatternWindow& w) {
  w.example_id = j.value("example_id", "");
  w.center_position = j.value("center_position", 0);
  w.window = j.value("window", std::vector<std::string>{});
  w.truncated = j.value("truncated", false);
  if (j.contains("pattern") && !j.at("pattern").is_null())
    w.pattern = lens_pattern_from_string(j.at("pattern").get<std::string>());
  else
    w.pattern.reset();
  w.per_layer_hint_logits.clear();
  for (const auto& [k, v] : j.value("per_layer_hint_logits", nlohmann::json::object()).items())
    w.per_layer_hint_logits[std::stoi(k)] = v.get<double>();
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

std::vector<double> apply_layer_norm(const std::vector<double>& v,
                                     const std::vector<double>& gamma,
                                     const std::vector<double>& beta, double eps) {
  const size_t d = v.size();
  if (gamma.size() != d || beta.size() != d)
    throw ValidationError("layer norm: parameter length mismatch");
  double mu = 0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(d);
  double var = 0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(d);
  const double s = std::sqrt(var + eps);
  std::vector<double> out(d);
  for (size_t i = 0; i < d; ++i) out[i] = gamma[i] * ((v[i] - mu) / s) + beta[i];
  return out;
}

std::vector<double> lens_decode_raw(const std::vector<double>& v, const LensParams& lens) {
  if (static_cast<int>(v.size()) != lens.dim)
    throw ValidationError("lens decode: vector length " + std::to_string(v.size()) +
                          " != hidden size " + std::to_string(lens.dim));
  if (lens.unembed.size() != static_cast<size_t>(lens.vocab) * static_cast<size_t>(lens.dim))
    throw ValidationError("lens decode: unembedding shape mismatch");
  std::vector<double> logits(static_cast<size_t>(lens.vocab), 0.0);
  for (int r = 0; r < lens.vocab; ++r) {
    double acc = 0;
    const double* row = lens.unembed.data() + static_cast<size_t>(r) * lens.dim;
    for (int c = 0; c < lens.dim; ++c) acc += row[c] * v[static_cast<size_t>(c)];
    logits[static_cast<size_t>(r)] = acc;
  }
  return logits;
}

std::vector<double> lens_decode(const std::vector<double>& z, const LensParams& lens) {
  for (double x : z)
    if (!std::isfinite(x)) throw ValidationError("lens decode: non-finite activation");
  return lens_decode_raw(apply_layer_norm(z, lens.ln_gamma, lens.ln_beta, lens.ln_eps),
                         lens);
}

// ---------------------------------------------------------------------------
// Pattern rules
// ---------------------------------------------------------------------------

PatternRules default_pattern_rules() {
  PatternRules r;
  r.keyword_rules = {
      {LensPattern::FinalAnswer, {"final answer", "answer:", "answer is"}},
      {LensPattern::Contrast, {"however", "on the other hand", "in contrast", "but"}},
      {LensPattern::Reference,
       {"considering these", "given these", "taking these", "based on the above"}},
      {LensPattern::Answer, {"answer"}},
  };
  r.numbered_step_rule = true;
  return r;
}

PatternRules pattern_rules_from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open pattern rules: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("pattern rules " + path.string() + ": " + e.what());
  }
  PatternRules r;
  r.numbered_step_rule = j.value("numbered_step_rule", true);
  for (const auto& rule : j.at("rules")) {
    r.keyword_rules.emplace_back(
        lens_pattern_from_string(rule.at("pattern").get<std::string>()),
        rule.at("keywords").get<std::vector<std::string>>());
  }
  return r;
}

namespace {

bool is_numbered_marker(const std::string& token) {
  size_t i = 0, digits = 0;
  while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ++i, ++digits;
  if (digits == 0) return false;
  if (i == token.size()) return false;  // bare number
  return (token[i] == '.' || token[i] == ')') && i + 1 == token.size();
}

}  // namespace

std::optional<LensPattern> classify_pattern(const std::vector<std::string>& window,
                                            const PatternRules& rules) {
  std::string joined;
  for (size_t i = 0; i < window.size(); ++i) {
    if (i) joined += " ";
    joined += window[i];
  }
  // Token-level punctuation may split "answer:" into "answer :".
  const std::string squashed = replace_all(to_lower(joined), " :", ":");
  for (const auto& [pattern, keywords] : rules.keyword_rules) {
    if (pattern == LensPattern::NumberedStep) continue;
    for (const auto& kw : keywords)
      if (squashed.find(to_lower(kw)) != std::string::npos) return pattern;
    if (pattern == LensPattern::Reference && rules.numbered_step_rule) {
      // NumberedStep sits between Reference and Answer in the rule order.
      for (const auto& tok : window)
        if (is_numbered_marker(tok)) return LensPattern::NumberedStep;
      // "1 ." split by tokenization
      for (size_t i = 0; i + 1 < window.size(); ++i)
        if (!window[i].empty() &&
            std::all_of(window[i].begin(), window[i].end(),
                        [](unsigned char c) { return std::isdigit(c); }) &&
            (window[i + 1] == "." || window[i + 1] == ")"))
          return LensPattern::NumberedStep;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mining
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> with_case_variants(const std::vector<std::string>& keywords) {
  std::set<std::string> out;
  for (const auto& kw : keywords) {
    out.insert(kw);
    out.insert(to_lower(kw));
    if (!kw.empty() && std::isalpha(static_cast<unsigned char>(kw[0]))) {
      std::string cap = to_lower(kw);
      cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
      out.insert(cap);
    }
  }
  return {out.begin(), out.end()};
}

std::vector<std::pair<std::string, double>> top5(const std::vector<double>& logits,
                                                 ModelBackend& backend) {
  std::vector<int> idx(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) idx[i] = static_cast<int>(i);
  const size_t k = std::min<size_t>(5, logits.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                    [&](int a, int b) {
                      if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)])
                        return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
                      return a < b;
                    });
  std::vector<std::pair<std::string, double>> out;
  for (size_t i = 0; i < k; ++i)
    out.emplace_back(backend.token_text(idx[i]), logits[static_cast<size_t>(idx[i])]);
  return out;
}

}  // namespace

MineResult mine_hint_positions(ModelBackend& backend, const std::string& example_id,
                               const std::string& prompt, const std::string& cot,
                               const HintSpec& hint,
                               const std::vector<std::string>& keywords,
                               const PatternRules& rules) {
  MineResult result;
  if (lexical_match(cot, hint)) return result;  // lexical mentions are excluded
  if (keywords.empty()) return result;

  // Hint token ids: tokenizations of the keyword case variants, <unk> excluded.
  std::set<int> hint_ids;
  for (const auto& kw : with_case_variants(keywords))
    for (int id : backend.tokenize(kw))
      if (backend.token_text(id) != "<unk>") hint_ids.insert(id);
  if (hint_ids.empty()) return result;

  const std::string text = prompt + "\n" + cot;
  const auto tokens = backend.tokenize(text);
  const int total = static_cast<int>(tokens.size());
  const int prompt_len = static_cast<int>(backend.tokenize(prompt).size());
  const int n_layers = backend.layer_count();
  const LensParams lens = backend.lens_params();

  std::vector<int> all_layers(static_cast<size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) all_layers[static_cast<size_t>(l)] = l;

  // Only generation positions are mined; the prompt itself contains the hint.
  for (int pos = prompt_len; pos < total; ++pos) {
    const auto readings =
        backend.trace(text, all_layers, {pos}, Stream::AttnOutput);
    std::map<int, double> layer_hint_logit;
    bool any_hit = false;
    for (const auto& reading : readings) {
      const auto logits = lens_decode(reading.vector, lens);
      LensReading lr;
      lr.example_id = example_id;
      lr.position = pos;
      lr.layer = reading.layer;
      lr.top_tokens = top5(logits, backend);
      double best = -std::numeric_limits<double>::infinity();
      for (int id : hint_ids) best = std::max(best, logits[static_cast<size_t>(id)]);
      layer_hint_logit[reading.layer] = best;
      for (const auto& [tok, _] : lr.top_tokens) {
        for (int id : hint_ids)
          if (backend.token_text(id) == tok) lr.hint_hit = true;
      }
      any_hit = any_hit || lr.hint_hit;
      result.readings.push_back(std::move(lr));
    }
    if (!any_hit) continue;

    PatternWindow w;
    w.example_id = example_id;
    w.center_position = pos;
    const int lo = std::max(0, pos - 4);
    const int hi = std::min(total - 1, pos + 4);
    w.truncated = (hi - lo + 1) < 9;
    for (int t = lo; t <= hi; ++t)
      w.window.push_back(backend.token_text(tokens[static_cast<size_t>(t)]));
    w.pattern = classify_pattern(w.window, rules);
    w.per_layer_hint_logits = std::move(layer_hint_logit);
    result.windows.push_back(std::move(w));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Layer profiles
// ---------------------------------------------------------------------------

std::vector<LayerProfileRow> layer_profile(const std::vector<PatternWindow>& windows,
                                           const BootstrapConfig& cfg,
                                           std::vector<std::string>* notes) {
  static const LensPattern kAll[] = {LensPattern::Answer, LensPattern::Contrast,
                                     LensPattern::Reference, LensPattern::FinalAnswer,
                                     LensPattern::NumberedStep};
  std::vector<LayerProfileRow> rows;
  for (LensPattern pattern : kAll) {
    std::map<int, std::vector<double>> per_layer;
    for (const auto& w : windows) {
      if (!w.pattern || *w.pattern != pattern) continue;
      for (const auto& [layer, logit] : w.per_layer_hint_logits)
        per_layer[layer].push_back(logit);
    }
    if (per_layer.empty()) {
      if (notes)
        notes->push_back(std::string("no evidence for pattern ") + to_string(pattern));
      continue;
    }
    for (auto& [layer, values] : per_layer) {
      LayerProfileRow row;
      row.pattern = pattern;
      row.layer = layer;
      row.count = static_cast<long>(values.size());
      row.mean = mean_of(values);
      auto [lo, hi] = percentile_bootstrap_mean(std::move(values), cfg);
      row.ci_low = lo;
      row.ci_high = hi;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<PatternWindow> load_pattern_windows(const RunStore& store) {
  std::vector<PatternWindow> out;
  for (const auto& payload : store.scan("lens"))
    out.push_back(payload.get<PatternWindow>());
  return out;
}

}  // namespace cotfaith
