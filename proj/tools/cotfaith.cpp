// cotfaith — chain-of-thought faithfulness toolkit CLI.
//
// Subcommands mirror the metric battery: bf (biasing features), ft (filler
// tokens), fur (unlearning), fak (faithful@k), lens (logit lens), cma
// (mediation analysis), report (tables + figures).

#include "cotfaith/pipeline.hpp"
#include "cotfaith/report.hpp"
#include "cotfaith/rng.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace cotfaith;

namespace {

struct CommonArgs {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
};

ToolConfig resolve_config(const CommonArgs& args) {
  ToolConfig cfg = args.config_path.empty() ? tool_config_from_json(nlohmann::json::object())
                                            : load_tool_config(args.config_path);
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.sampler.seed = args.seed;
    cfg.bootstrap.seed = args.seed;
    cfg.raw["seed"] = args.seed;
  }
  if (args.workers > 0) cfg.workers = args.workers;
  return cfg;
}

std::unique_ptr<ModelBackend> backend_from(const ToolConfig& cfg,
                                           const std::string& override_path,
                                           const nlohmann::json& fallback) {
  if (!override_path.empty()) {
    std::ifstream in(override_path);
    if (!in) throw ParseError("cannot open backend config: " + override_path);
    nlohmann::json j;
    in >> j;
    return make_backend(j, std::filesystem::path(override_path).parent_path());
  }
  if (!fallback.empty()) return make_backend(fallback);
  throw ValidationError("no backend configured (use --backend or a config file)");
}

RunStore open_or_create_store(const std::string& dir, const ToolConfig& cfg) {
  Manifest manifest;
  manifest.seed = cfg.seed;
  manifest.config = cfg.raw;
  manifest.run_id = derive_run_id(cfg.raw, cfg.seed);
  return RunStore::create(dir, manifest);
}

// Downstream subcommands reuse the backend recorded in the manifest unless
// overridden on the command line.
std::unique_ptr<ModelBackend> backend_from_manifest(const RunStore& store,
                                                    const std::string& override_path,
                                                    const char* key) {
  if (!override_path.empty()) {
    std::ifstream in(override_path);
    if (!in) throw ParseError("cannot open backend config: " + override_path);
    nlohmann::json j;
    in >> j;
    return make_backend(j, std::filesystem::path(override_path).parent_path());
  }
  const auto& config = store.manifest().config;
  if (config.contains(key) && !config.at(key).empty())
    return make_backend(config.at(key));
  if (std::string(key) != "backend" && config.contains("backend"))
    return make_backend(config.at("backend"));
  throw ValidationError(std::string("run manifest has no '") + key +
                        "' config; pass --backend");
}

void print_estimate(const EffectEstimate& e) {
  std::cout << e.effect;
  if (!e.target.empty()) std::cout << " (" << e.target << ")";
  std::cout << ": " << e.point << "  [" << e.ci_low << ", " << e.ci_high << "]  n=" << e.n
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chain-of-thought faithfulness toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "JSON config file");
  app.add_option("--seed", common.seed, "global seed")->each([&](const std::string&) {
    common.seed_set = true;
  });
  app.add_option("--workers", common.workers, "worker threads");

  // ---- bf ------------------------------------------------------------------
  auto* bf_cmd = app.add_subcommand("bf", "biasing-features run");
  std::string bf_corpus, bf_hint = "professor", bf_backend, bf_judge, bf_out;
  bf_cmd->add_option("--corpus", bf_corpus, "corpus jsonl")->required();
  bf_cmd->add_option("--hint", bf_hint, "professor|metadata|black-squares");
  bf_cmd->add_option("--backend", bf_backend, "backend config json");
  bf_cmd->add_option("--judge-backend", bf_judge, "judge backend config json");
  bf_cmd->add_option("--out", bf_out, "run directory")->required();

  // ---- ft ------------------------------------------------------------------
  auto* ft_cmd = app.add_subcommand("ft", "filler-tokens re-evaluation");
  std::string ft_from, ft_backend;
  ft_cmd->add_option("--from", ft_from, "run directory")->required();
  ft_cmd->add_option("--backend", ft_backend, "backend config override");

  // ---- fur -----------------------------------------------------------------
  auto* fur_cmd = app.add_subcommand("fur", "unlearning-based evaluation");
  std::string fur_from, fur_backend, fur_grid, fur_heldout;
  double fur_lr = 0.0;
  fur_cmd->add_option("--from", fur_from, "run directory")->required();
  fur_cmd->add_option("--backend", fur_backend, "backend config override");
  fur_cmd->add_option("--lr", fur_lr, "unlearning learning rate");
  fur_cmd->add_option("--lr-search", fur_grid, "grid json (lrs+heldout or replay grid)");
  fur_cmd->add_option("--heldout", fur_heldout, "held-out corpus jsonl for specificity");

  // ---- fak -----------------------------------------------------------------
  auto* fak_cmd = app.add_subcommand("fak", "faithful@k sampling run");
  std::string fak_corpus, fak_hint = "professor", fak_backend, fak_judge, fak_out,
              fak_ks = "1,2,4,8,16";
  int fak_samples = 128;
  fak_cmd->add_option("--corpus", fak_corpus, "corpus jsonl")->required();
  fak_cmd->add_option("--hint", fak_hint, "professor|metadata|black-squares");
  fak_cmd->add_option("--backend", fak_backend, "backend config json");
  fak_cmd->add_option("--judge-backend", fak_judge, "judge backend config json");
  fak_cmd->add_option("--out", fak_out, "run directory")->required();
  fak_cmd->add_option("--samples", fak_samples, "samples per example");
  fak_cmd->add_option("--ks", fak_ks, "comma-separated k values");

  // ---- lens ----------------------------------------------------------------
  auto* lens_cmd = app.add_subcommand("lens", "logit-lens mining");
  std::string lens_from, lens_backend, lens_patterns;
  lens_cmd->add_option("--from", lens_from, "run directory")->required();
  lens_cmd->add_option("--backend", lens_backend, "backend config override");
  lens_cmd->add_option("--patterns", lens_patterns, "pattern rules json");

  // ---- cma -----------------------------------------------------------------
  auto* cma_cmd = app.add_subcommand("cma", "causal mediation analysis");
  std::string cma_from, cma_backend, cma_target = "hinted";
  cma_cmd->add_option("--from", cma_from, "run directory")->required();
  cma_cmd->add_option("--backend", cma_backend, "backend config override");
  cma_cmd->add_option("--target", cma_target, "hinted|non-hinted");

  // ---- report --------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "emit tables and figures");
  std::string report_from, report_out = "figs", report_which;
  report_cmd->add_option("--from", report_from, "run directory")->required();
  report_cmd->add_option("--out", report_out, "output directory");
  report_cmd->add_option("--which", report_which, "comma-separated figure subset");

  // ---- fingerprint ---------------------------------------------------------
  auto* fp_cmd = app.add_subcommand("fingerprint", "prompt fingerprint for scripted tables");
  std::string fp_file;
  fp_cmd->add_option("--file", fp_file, "file whose contents to fingerprint (default: stdin)");

  CLI11_PARSE(app, argc, argv);

  try {
    ToolConfig cfg = resolve_config(common);

    if (*bf_cmd) {
      const auto corpus = load_corpus(bf_corpus);
      auto model = backend_from(cfg, bf_backend, cfg.backend);
      auto judge = bf_judge.empty() && cfg.judge_backend.empty()
                       ? nullptr
                       : backend_from(cfg, bf_judge, cfg.judge_backend);
      if (!bf_backend.empty()) {
        std::ifstream in(bf_backend);
        in >> cfg.raw["backend"];
        cfg.backend = cfg.raw["backend"];
      }
      RunStore store = open_or_create_store(bf_out, cfg);
      BFRunConfig run_cfg;
      run_cfg.kind = hint_kind_from_string(bf_hint);
      run_cfg.seed = cfg.seed;
      run_cfg.sampler = cfg.sampler;
      run_cfg.workers = cfg.workers;
      if (!cfg.fewshot_ids.empty())
        run_cfg.fewshot = resolve_fewshot(corpus, cfg.fewshot_ids);
      auto result = run_biasing_features(corpus, run_cfg, *model,
                                         judge ? *judge : *model, cfg.judge, &store);
      long switched = 0;
      for (const auto& o : result.outcomes)
        if (o.error.empty() && o.switched) ++switched;
      std::cout << "examples: " << result.outcomes.size() << "  switched: " << switched
                << "  errored: " << result.errored << "\n";
      if (switched > 0) print_estimate(unfaithfulness_rate(result.outcomes, cfg.bootstrap));
      else std::cout << "unfaithfulness: n/a (no switched examples)\n";
      return 0;
    }

    if (*ft_cmd) {
      RunStore store = RunStore::open(ft_from);
      auto model = backend_from_manifest(store, ft_backend, "backend");
      const auto bf = load_bf_outcomes(store);
      const auto outcomes = run_filler_tokens(bf, *model, &store, cfg.workers);
      long usable = 0;
      for (const auto& o : outcomes)
        if (o.usable && o.error.empty()) ++usable;
      std::cout << "unfaithful inputs: " << outcomes.size() << "  usable: " << usable
                << "\n";
      if (usable > 0) print_estimate(ft_faithful_rate(outcomes, cfg.bootstrap));
      else std::cout << "ft_faithful: n/a (no usable outcomes)\n";
      return 0;
    }

    if (*fur_cmd) {
      RunStore store = RunStore::open(fur_from);
      auto model = backend_from_manifest(store, fur_backend, "backend");
      FurConfig fur_cfg = cfg.fur;
      std::vector<Example> heldout;
      if (!fur_heldout.empty()) heldout = load_corpus(fur_heldout);

      if (!fur_grid.empty()) {
        std::ifstream in(fur_grid);
        if (!in) throw ParseError("cannot open grid file: " + fur_grid);
        nlohmann::json j;
        in >> j;
        LrSearchResult search;
        if (j.contains("grid")) {  // replay mode: measured numbers supplied
          search = select_learning_rate(
              j.at("grid").get<std::vector<LrGridPoint>>(),
              j.value("specificity_floor", 0.95));
        } else {
          search = lr_search(*model, j.at("lrs").get<std::vector<double>>(),
                             heldout.empty() ? load_corpus(j.at("heldout").get<std::string>())
                                             : heldout,
                             fur_cfg, cfg.sampler, j.value("specificity_floor", 0.95));
        }
        std::cout << "lr,mean_efficacy,mean_specificity,faithful_fraction\n";
        for (const auto& p : search.grid)
          std::cout << p.lr << "," << p.mean_efficacy << "," << p.mean_specificity << ","
                    << p.faithful_fraction << "\n";
        std::cout << "chosen_lr: " << search.chosen_lr << "\n";
        fur_cfg.lr = search.chosen_lr;
      }
      if (fur_lr > 0) fur_cfg.lr = fur_lr;

      const auto bf = load_bf_outcomes(store);
      const auto results = run_fur(bf, *model, fur_cfg, heldout, &store);
      long usable = 0, faithful = 0;
      double spec = 0;
      for (const auto& r : results) {
        if (!r.error.empty() || !r.usable) continue;
        ++usable;
        spec += r.specificity;
        if (r.faithful) ++faithful;
      }
      std::cout << "unfaithful inputs: " << results.size() << "  usable: " << usable
                << "  faithful: " << faithful;
      if (usable > 0)
        std::cout << "  mean specificity: " << spec / static_cast<double>(usable);
      std::cout << "\n";
      return 0;
    }

    if (*fak_cmd) {
      const auto corpus = load_corpus(fak_corpus);
      auto model = backend_from(cfg, fak_backend, cfg.backend);
      auto judge = fak_judge.empty() && cfg.judge_backend.empty()
                       ? nullptr
                       : backend_from(cfg, fak_judge, cfg.judge_backend);
      if (!fak_backend.empty()) {
        std::ifstream in(fak_backend);
        in >> cfg.raw["backend"];
        cfg.backend = cfg.raw["backend"];
      }
      RunStore store = open_or_create_store(fak_out, cfg);
      FakRunConfig run_cfg;
      run_cfg.kind = hint_kind_from_string(fak_hint);
      run_cfg.seed = cfg.seed;
      run_cfg.sampler = cfg.sampler;
      run_cfg.sampler.mode = SamplerConfig::Mode::Sample;
      if (run_cfg.sampler.temperature <= 0) run_cfg.sampler.temperature = 0.6;
      run_cfg.samples = fak_samples;
      run_cfg.workers = cfg.workers;
      run_cfg.ks.clear();
      for (const auto& part : CLI::detail::split(fak_ks, ','))
        run_cfg.ks.push_back(std::stoi(part));
      if (!cfg.fewshot_ids.empty())
        run_cfg.fewshot = resolve_fewshot(corpus, cfg.fewshot_ids);
      const auto tallies = run_faithful_at_k(corpus, run_cfg, *model,
                                             judge ? *judge : *model, cfg.judge, &store);
      std::ofstream tally_out(store.dir() / "fak_tallies.jsonl");
      for (const auto& t : tallies) tally_out << nlohmann::json(t).dump() << "\n";
      const long max_k = *std::max_element(run_cfg.ks.begin(), run_cfg.ks.end());
      long usable = 0;
      for (const auto& t : tallies)
        if (t.n >= max_k) ++usable;
      std::cout << "examples: " << tallies.size() << "  usable (n >= " << max_k
                << "): " << usable << "\n";
      if (usable > 0)
        for (const auto& [k, est] : faithful_at_k_curve(tallies, run_cfg.ks, cfg.bootstrap))
          print_estimate(est);
      return 0;
    }

    if (*lens_cmd) {
      RunStore store = RunStore::open(lens_from);
      auto model = backend_from_manifest(store, lens_backend, "backend");
      if (!model->capabilities().white_box)
        throw CapabilityError("lens mining needs a white-box backend");
      PatternRules rules = lens_patterns.empty() ? default_pattern_rules()
                                                 : pattern_rules_from_file(lens_patterns);
      const auto bf = load_bf_outcomes(store);
      long mined = 0, windows_total = 0;
      for (const auto& o : unfaithful_subset(bf)) {
        if (store.has("lens", o.example_id, 0)) continue;
        const auto mined_result =
            mine_hint_positions(*model, o.example_id, o.hinted_prompt, o.hinted_cot,
                                HintSpec{o.kind, o.hinted_label, 0},
                                hint_keywords(o.kind), rules);
        // One record per window; sample_index distinguishes windows.
        int idx = 0;
        for (const auto& w : mined_result.windows)
          store.append("lens", o.example_id, idx++, nlohmann::json(w));
        if (mined_result.windows.empty())
          store.append("lens", o.example_id, 0,
                       nlohmann::json(PatternWindow{o.example_id, -1, {}, false,
                                                    std::nullopt, {}}));
        ++mined;
        windows_total += static_cast<long>(mined_result.windows.size());
      }
      std::cout << "examples mined: " << mined << "  windows: " << windows_total << "\n";
      std::vector<std::string> notes;
      const auto profile = layer_profile(load_pattern_windows(store), cfg.bootstrap, &notes);
      std::cout << "profile rows: " << profile.size() << "\n";
      for (const auto& n : notes) std::cout << "note: " << n << "\n";
      return 0;
    }

    if (*cma_cmd) {
      RunStore store = RunStore::open(cma_from);
      auto model = backend_from_manifest(store, cma_backend, "backend");
      const auto bf = load_bf_outcomes(store);
      std::vector<std::string> warnings;
      const auto cells = collect_cells(bf, *model, &store, &warnings, cfg.workers);
      for (const auto& w : warnings) std::cout << "warning: " << w << "\n";
      std::cout << "cells: " << cells.size() << "\n";
      const CmaTarget target = (cma_target == "non-hinted" || cma_target == "non_hinted_sum")
                                   ? CmaTarget::NonHintedSum
                                   : CmaTarget::Hinted;
      if (cells.size() >= 2) {
        const auto d = nde(cells, target, cfg.bootstrap);
        const auto i = nie(cells, target, cfg.bootstrap);
        print_estimate(d);
        print_estimate(i);
        std::ofstream effects_out(store.dir() / "cma_effects.jsonl");
        effects_out << nlohmann::json(d).dump() << "\n" << nlohmann::json(i).dump() << "\n";
      }
      return 0;
    }

    if (*report_cmd) {
      RunStore store = RunStore::open(report_from);
      ReportOptions opts;
      opts.bootstrap = cfg.bootstrap;
      if (!report_which.empty())
        for (const auto& part : CLI::detail::split(report_which, ','))
          opts.which.insert(part);
      const auto files = emit_plots(store, report_out, opts);
      for (const auto& f : files) std::cout << f.string() << "\n";
      if (store.resume_point("bf").size() > 0) {
        const auto row = table_counts(store);
        std::cout << "counts (unfaithful/changed/total): " << row.unfaithful << " "
                  << row.changed << " " << row.total << "\n";
      }
      return 0;
    }

    if (*fp_cmd) {
      std::string text;
      if (fp_file.empty()) {
        std::ostringstream os;
        os << std::cin.rdbuf();
        text = os.str();
      } else {
        std::ifstream in(fp_file);
        if (!in) throw ParseError("cannot open: " + fp_file);
        std::ostringstream os;
        os << in.rdbuf();
        text = os.str();
      }
      std::cout << fingerprint_hex(text) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
