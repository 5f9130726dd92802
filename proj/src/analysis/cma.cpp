#include "cotfaith/analysis/cma.hpp"

#include "cotfaith/parallel.hpp"

#include <algorithm>
#include <map>
#include <optional>

namespace cotfaith {

void to_json(nlohmann::json& j, const CmaCell& c) {
  j = nlohmann::json{{"example_id", c.example_id}, {"ph_x_c", c.ph_x_c},
                     {"ph_xh_c", c.ph_xh_c},       {"ph_x_ch", c.ph_x_ch},
                     {"pnh_x_c", c.pnh_x_c},       {"pnh_xh_c", c.pnh_xh_c},
                     {"pnh_x_ch", c.pnh_x_ch}};
}

void from_json(const nlohmann::json& j, CmaCell& c) {
  c.example_id = j.value("example_id", "");
  c.ph_x_c = j.at("ph_x_c").get<double>();
  c.ph_xh_c = j.at("ph_xh_c").get<double>();
  c.ph_x_ch = j.at("ph_x_ch").get<double>();
  c.pnh_x_c = j.at("pnh_x_c").get<double>();
  c.pnh_xh_c = j.at("pnh_xh_c").get<double>();
  c.pnh_x_ch = j.at("pnh_x_ch").get<double>();
}

const char* to_string(CmaTarget t) {
  return t == CmaTarget::Hinted ? "hinted" : "non_hinted_sum";
}

namespace {

constexpr double kMassTolerance = 1e-6;

// p_h and the summed non-hinted mass for one (prompt, cot) condition.
std::pair<double, double> probe(ModelBackend& model, const std::string& prompt,
                                const std::string& cot, const BFOutcome& bf) {
  const auto raw = model.answer_distribution(prompt, cot, bf.labels);
  double ph = 0, pnh = 0;
  for (const auto& label : bf.labels) {
    auto it = raw.find(label);
    const double p = it == raw.end() ? 0.0 : it->second;
    if (label == bf.hinted_label) ph = p;
    else pnh += p;
  }
  if (ph + pnh > 1.0 + kMassTolerance)
    throw ValidationError("cma: label mass " + std::to_string(ph + pnh) +
                          " exceeds 1 for example '" + bf.example_id + "'");
  return {ph, pnh};
}

}  // namespace

std::vector<CmaCell> collect_cells(const std::vector<BFOutcome>& bf_outcomes,
                                   ModelBackend& model, RunStore* store,
                                   std::vector<std::string>* warnings, int workers) {
  const std::vector<BFOutcome> inputs = unfaithful_subset(bf_outcomes);

  std::map<std::string, CmaCell> stored;
  if (store)
    for (const auto& payload : store->scan("cma")) {
      auto c = payload.get<CmaCell>();
      stored[c.example_id] = std::move(c);
    }

  std::vector<std::optional<CmaCell>> slots(inputs.size());

  auto compute = [&](size_t i) -> std::optional<CmaCell> {
    const BFOutcome& bf = inputs[i];
    if (stored.count(bf.example_id)) return std::nullopt;  // resolved on commit
    if (bf.baseline_cot.empty() || bf.hinted_cot.empty() || bf.plain_prompt.empty() ||
        bf.hinted_prompt.empty())
      return std::nullopt;  // missing stored CoT; warned on commit
    CmaCell cell;
    cell.example_id = bf.example_id;
    auto [ph_xc, pnh_xc] = probe(model, bf.plain_prompt, bf.baseline_cot, bf);
    auto [ph_xhc, pnh_xhc] = probe(model, bf.hinted_prompt, bf.baseline_cot, bf);
    auto [ph_xch, pnh_xch] = probe(model, bf.plain_prompt, bf.hinted_cot, bf);
    cell.ph_x_c = ph_xc;
    cell.ph_xh_c = ph_xhc;
    cell.ph_x_ch = ph_xch;
    cell.pnh_x_c = pnh_xc;
    cell.pnh_xh_c = pnh_xhc;
    cell.pnh_x_ch = pnh_xch;
    return cell;
  };

  auto commit = [&](size_t i, std::optional<CmaCell>& cell) {
    const BFOutcome& bf = inputs[i];
    if (auto it = stored.find(bf.example_id); it != stored.end()) {
      slots[i] = it->second;
      return;
    }
    if (!cell) {
      if (warnings)
        warnings->push_back("cma: example '" + bf.example_id +
                            "' skipped (missing stored CoT)");
      return;
    }
    if (store) store->append("cma", cell->example_id, 0, nlohmann::json(*cell));
    slots[i] = std::move(*cell);
  };

  ordered_parallel_for<std::optional<CmaCell>>(inputs.size(), workers, compute, commit);

  std::vector<CmaCell> cells;
  for (auto& s : slots)
    if (s) cells.push_back(std::move(*s));
  return cells;
}

namespace {

EffectEstimate effect_estimate(const std::vector<CmaCell>& cells, CmaTarget target,
                               bool direct, const BootstrapConfig& cfg) {
  if (cells.size() < 2)
    throw ValidationError("cma: need >= 2 cells, got " + std::to_string(cells.size()));
  std::vector<double> diffs;
  diffs.reserve(cells.size());
  for (const auto& c : cells) {
    const double base = target == CmaTarget::Hinted ? c.ph_x_c : c.pnh_x_c;
    const double alt = direct ? (target == CmaTarget::Hinted ? c.ph_xh_c : c.pnh_xh_c)
                              : (target == CmaTarget::Hinted ? c.ph_x_ch : c.pnh_x_ch);
    diffs.push_back(alt - base);
  }
  return estimate_mean_bca(std::move(diffs), direct ? "NDE" : "NIE", to_string(target),
                           cfg);
}

}  // namespace

EffectEstimate nde(const std::vector<CmaCell>& cells, CmaTarget target,
                   const BootstrapConfig& cfg) {
  return effect_estimate(cells, target, /*direct=*/true, cfg);
}

EffectEstimate nie(const std::vector<CmaCell>& cells, CmaTarget target,
                   const BootstrapConfig& cfg) {
  return effect_estimate(cells, target, /*direct=*/false, cfg);
}

std::vector<CmaCell> load_cma_cells(const RunStore& store) {
  std::vector<CmaCell> out;
  for (const auto& payload : store.scan("cma")) out.push_back(payload.get<CmaCell>());
  return out;
}

}  // namespace cotfaith
