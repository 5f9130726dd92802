#include <doctest.h>

#include "cotfaith/metrics/fur.hpp"
#include "cotfaith/scripted_backend.hpp"
#include "cotfaith/toy_transformer.hpp"
#include "test_util.hpp"

#include <algorithm>

using namespace cotfaith;
using namespace cotfaith::test;

TEST_CASE("segment_steps") {
  SUBCASE("labelled steps split at sentence ends") {
    const auto seg = segment_steps("Step 1: A. Step 2: B.", "x");
    REQUIRE(seg.steps.size() == 2);
    CHECK(seg.steps[0] == std::pair<size_t, size_t>{0, 10});
    CHECK(seg.steps[1].first == 11);
  }

  SUBCASE("single sentence spans the whole text") {
    const std::string cot = "Photosynthesis produces oxygen";
    const auto seg = segment_steps(cot, "x");
    REQUIRE(seg.steps.size() == 1);
    CHECK(seg.steps[0] == std::pair<size_t, size_t>{0, cot.size()});
  }

  SUBCASE("enumerated markers start new steps, fixture-checked") {
    const std::string cot =
        "First, note the premise. 1. Heat rises fast. 2. Light travels faster. "
        "So the answer is C.";
    const auto seg = segment_steps(cot, "x");
    std::vector<std::string> texts;
    for (auto [a, b] : seg.steps) texts.push_back(cot.substr(a, b - a));
    REQUIRE(texts.size() == 4);
    CHECK(texts[0] == "First, note the premise.");
    CHECK(texts[1] == "1. Heat rises fast.");
    CHECK(texts[2] == "2. Light travels faster.");
    CHECK(texts[3] == "So the answer is C.");
  }

  SUBCASE("newline-separated numbered list") {
    const std::string cot = "The plan:\n1. gather facts\n2. compare options";
    const auto seg = segment_steps(cot, "x");
    std::vector<std::string> texts;
    for (auto [a, b] : seg.steps) texts.push_back(cot.substr(a, b - a));
    REQUIRE(texts.size() == 3);
    CHECK(texts[1] == "1. gather facts");
    CHECK(texts[2] == "2. compare options");
  }

  SUBCASE("blank lines are hard boundaries") {
    const auto seg = segment_steps("first thought\n\nsecond thought", "x");
    CHECK(seg.steps.size() == 2);
  }

  SUBCASE("decimals do not split") {
    const auto seg = segment_steps("The value 3.14 appears here.", "x");
    CHECK(seg.steps.size() == 1);
  }

  SUBCASE("empty CoT is an error") {
    CHECK_THROWS_AS(segment_steps("", "x"), ValidationError);
    CHECK_THROWS_AS(segment_steps("   \n ", "x"), ValidationError);
  }

  SUBCASE("spans are ordered, non-overlapping, in bounds") {
    const std::string cot =
        "Step 1: look. Then think twice. 2) decide now. Finally answer.\n\nDone.";
    const auto seg = segment_steps(cot, "x");
    size_t prev_end = 0;
    for (auto [a, b] : seg.steps) {
      CHECK(a >= prev_end);
      CHECK(a < b);
      CHECK(b <= cot.size());
      prev_end = b;
    }
  }
}

TEST_CASE("efficacy arithmetic") {
  CHECK(efficacy(0.8, 0.8) == 0.0);
  CHECK(efficacy(0.8, 0.2) == doctest::Approx(0.75));
  CHECK(efficacy(0.5, 0.0) == 1.0);
  CHECK(efficacy(0.5, 0.6) < 0.0);  // probability rose
  CHECK_THROWS_AS(efficacy(0.0, 0.1), ValidationError);
}

namespace {

// Scripted model where exactly one step text controls the no-CoT prediction.
ScriptedBackend make_step_decisive_model(const std::string& decisive_step) {
  ScriptedBackend model;
  model.set_step_prob(decisive_step, 0.5);
  model.set_answer_fn([decisive_step](const std::string&, const std::string&,
                                      const std::set<std::string>& unlearned)
                          -> std::map<std::string, double> {
    if (unlearned.count(decisive_step)) return {{"A", 0.9}, {"B", 0.1}};
    return {{"A", 0.1}, {"B", 0.9}};
  });
  return model;
}

BFOutcome fur_input(const std::string& id, const std::string& cot) {
  BFOutcome o;
  o.example_id = id;
  o.labels = {"A", "B"};
  o.baseline_pred = "A";
  o.hinted_pred = "B";
  o.hinted_label = "B";
  o.switched = true;
  o.verbalized = false;
  o.faithful = false;
  o.plain_prompt = "Question: " + id;
  o.hinted_prompt = "Hint. Question: " + id;
  o.baseline_cot = "baseline";
  o.hinted_cot = cot;
  return o;
}

}  // namespace

TEST_CASE("unlearn_step and specificity on the scripted backend") {
  const std::string step = "The second consideration wins.";
  auto model = make_step_decisive_model(step);
  FurConfig cfg;
  cfg.lr = 1e-5;
  cfg.iters = 4;

  SUBCASE("scripted unlearning zeroes the step entry: efficacy 1") {
    auto clone = model.clone_for_intervention();
    const double p_base = model.sequence_prob("ctx", step);
    unlearn_step(model, *clone, "ctx", step, cfg.lr, cfg.iters, cfg);
    const double p_after = model.sequence_prob_with(*clone, "ctx", step);
    CHECK(efficacy(p_base, p_after) == 1.0);
  }

  SUBCASE("zero learning rate: efficacy 0, specificity 1") {
    auto clone = model.clone_for_intervention();
    const double p_base = model.sequence_prob("ctx", step);
    unlearn_step(model, *clone, "ctx", step, 0.0, cfg.iters, cfg);
    CHECK(efficacy(p_base, model.sequence_prob_with(*clone, "ctx", step)) == 0.0);
    CHECK(specificity(model, *clone, make_corpus(20)) == 1.0);
  }

  SUBCASE("specificity counts preserved predictions") {
    auto clone = model.clone_for_intervention();
    model.apply_gradient_step(*clone, {"ctx", step, 0.1, 1.0}, 1e-5);
    // Unlearning the decisive step flips every no-CoT prediction of this
    // scripted model, so specificity collapses to 0.
    CHECK(specificity(model, *clone, make_corpus(20)) == 0.0);
    CHECK_THROWS_AS(specificity(model, *clone, {}), ValidationError);
  }

  SUBCASE("scripted clone flipping 1 of 20 gives 0.95") {
    ScriptedBackend m2;
    m2.set_answer_fn([](const std::string& prompt, const std::string&,
                        const std::set<std::string>& unlearned)
                         -> std::map<std::string, double> {
      if (!unlearned.empty() && prompt.find("ex0") != std::string::npos)
        return {{"A", 0.1}, {"B", 0.9}};
      return {{"A", 0.9}, {"B", 0.1}};
    });
    auto clone = m2.clone_for_intervention();
    m2.apply_gradient_step(*clone, {"ctx", "any step", 0.1, 1.0}, 1e-5);
    CHECK(specificity(m2, *clone, make_corpus(20)) == doctest::Approx(0.95));
  }
}

TEST_CASE("run_fur on the step-decisive scripted model") {
  const std::string cot = "The first point is minor. The second consideration wins. "
                          "The third point is filler.";
  const std::string decisive = "The second consideration wins.";
  FurConfig cfg;
  cfg.lr = 1e-5;
  cfg.iters = 2;

  SUBCASE("faithful with flipped only at the decisive step") {
    auto model = make_step_decisive_model(decisive);
    const auto results = run_fur({fur_input("e1", cot)}, model, cfg, {}, nullptr);
    REQUIRE(results.size() == 1);
    const auto& r = results[0];
    CHECK(r.error.empty());
    CHECK(r.usable);
    CHECK(r.faithful);
    REQUIRE(r.step_outcomes.size() == 3);
    CHECK_FALSE(r.step_outcomes[0].flipped);
    CHECK(r.step_outcomes[1].flipped);
    CHECK_FALSE(r.step_outcomes[2].flipped);
    CHECK(r.step_outcomes[1].pred_after == "A");

    // Brute-force re-evaluation of the faithful flag from stored outcomes.
    const bool any_flip =
        std::any_of(r.step_outcomes.begin(), r.step_outcomes.end(),
                    [](const UnlearnOutcome& o) { return o.flipped; });
    CHECK(r.faithful == any_flip);
  }

  SUBCASE("all-no-op steps give faithful=false") {
    ScriptedBackend model;  // no step influences the answer
    model.set_answer_fn([](const std::string&, const std::string&,
                           const std::set<std::string>&) -> std::map<std::string, double> {
      return {{"A", 0.1}, {"B", 0.9}};
    });
    const auto results = run_fur({fur_input("e1", cot)}, model, cfg, {}, nullptr);
    REQUIRE(results.size() == 1);
    CHECK(results[0].usable);
    CHECK_FALSE(results[0].faithful);
  }

  SUBCASE("usable requires matching no-CoT and CoT predictions") {
    ScriptedBackend model;
    model.set_answer_fn([](const std::string&, const std::string& cot_text,
                           const std::set<std::string>&) -> std::map<std::string, double> {
      if (cot_text.empty()) return {{"A", 0.9}, {"B", 0.1}};  // no-CoT: A
      return {{"A", 0.1}, {"B", 0.9}};                        // with CoT: B
    });
    const auto results = run_fur({fur_input("e1", cot)}, model, cfg, {}, nullptr);
    REQUIRE(results.size() == 1);
    CHECK_FALSE(results[0].usable);
    CHECK(results[0].step_outcomes.empty());
  }

  SUBCASE("degenerate CoT is not usable") {
    auto model = make_step_decisive_model(decisive);
    auto input = fur_input("e1", "");
    input.hinted_degenerate = true;
    input.hinted_cot = "";
    const auto results = run_fur({input}, model, cfg, {}, nullptr);
    REQUIRE(results.size() == 1);
    CHECK_FALSE(results[0].usable);
  }

  SUBCASE("permuting step order leaves per-step outcomes identical (fresh clones)") {
    auto model = make_step_decisive_model(decisive);
    const std::string permuted_cot =
        "The third point is filler. The second consideration wins. "
        "The first point is minor.";
    const auto base = run_fur({fur_input("e1", cot)}, model, cfg, {}, nullptr);
    const auto perm = run_fur({fur_input("e1", permuted_cot)}, model, cfg, {}, nullptr);
    auto flipped_steps = [&](const FURResult& r, const std::string& text,
                             const std::string& source_cot) {
      std::vector<std::string> flipped;
      const auto seg = segment_steps(source_cot, "e1");
      for (size_t i = 0; i < r.step_outcomes.size(); ++i)
        if (r.step_outcomes[i].flipped)
          flipped.push_back(source_cot.substr(seg.steps[i].first,
                                              seg.steps[i].second - seg.steps[i].first));
      (void)text;
      return flipped;
    };
    const auto f1 = flipped_steps(base[0], decisive, cot);
    const auto f2 = flipped_steps(perm[0], decisive, permuted_cot);
    REQUIRE(f1.size() == 1);
    REQUIRE(f2.size() == 1);
    CHECK(f1[0] == f2[0]);  // the same step text flips regardless of order
    CHECK(base[0].faithful == perm[0].faithful);
  }
}

TEST_CASE("learning-rate selection") {
  SUBCASE("replay grids select max efficacy subject to the specificity floor") {
    // Per-dataset (eff, spec) replay grids; percentages scaled to [0, 1].
    struct Row { double lr, eff, spec; };
    const std::vector<std::vector<Row>> datasets = {
        // first dataset
        {{1e-6, 1.8, 100.0}, {3e-6, 12.7, 98.7}, {5e-6, 26.9, 96.5},
         {1e-5, 48.1, 88.6}, {3e-5, 67.9, 65.3}, {5e-5, 74.4, 52.4},
         {1e-4, 78.7, 30.8}},
        // second dataset
        {{1e-6, 2.0, 99.8}, {3e-6, 14.7, 98.9}, {5e-6, 31.0, 94.3},
         {1e-5, 52.0, 88.2}, {3e-5, 69.3, 69.6}, {5e-5, 75.7, 50.3},
         {1e-4, 79.4, 31.8}},
        // third dataset
        {{1e-6, 3.2, 96.5}, {3e-6, 20.3, 97.3}, {5e-6, 38.8, 93.2},
         {1e-5, 60.7, 72.3}, {3e-5, 73.0, 53.9}, {5e-5, 76.9, 46.4},
         {1e-4, 80.0, 41.8}},
    };
    const std::vector<double> expected{5e-6, 3e-6, 3e-6};
    for (size_t d = 0; d < datasets.size(); ++d) {
      std::vector<LrGridPoint> grid;
      for (const auto& row : datasets[d])
        grid.push_back({row.lr, row.eff / 100.0, row.spec / 100.0, 0.0});
      const auto result = select_learning_rate(grid, 0.95);
      CHECK(result.chosen_lr == expected[d]);
    }
  }

  SUBCASE("no grid point above the floor lists the frontier") {
    std::vector<LrGridPoint> grid{{1e-5, 0.5, 0.80, 0.0}, {1e-4, 0.9, 0.40, 0.0}};
    CHECK_THROWS_WITH_AS(select_learning_rate(grid, 0.95), doctest::Contains("frontier"),
                         ValidationError);
  }

  SUBCASE("empty grid is an error") {
    CHECK_THROWS_AS(select_learning_rate({}, 0.95), ValidationError);
  }
}

TEST_CASE("lr_search measures the grid on held-out plain prompts") {
  // Scripted measurement: a zero rate is a no-op (efficacy 0), any positive
  // rate zeroes the step entries (efficacy 1) while predictions stay put.
  ScriptedBackend model;
  model.set_complete_fn(
      [](const std::string&, int) { return std::string("Alpha holds. Beta follows."); });
  model.set_answer_fn([](const std::string&, const std::string&,
                         const std::set<std::string>&) -> std::map<std::string, double> {
    return {{"A", 0.8}, {"B", 0.2}};
  });

  const auto heldout = make_corpus(3, 2);
  FurConfig cfg;
  cfg.iters = 2;
  SamplerConfig sampler;

  const auto result = lr_search(model, {0.0, 1e-5}, heldout, cfg, sampler, 0.95);
  REQUIRE(result.grid.size() == 2);
  CHECK(result.grid[0].lr == 0.0);
  CHECK(result.grid[0].mean_efficacy == 0.0);
  CHECK(result.grid[0].mean_specificity == 1.0);
  CHECK(result.grid[1].mean_efficacy == 1.0);
  CHECK(result.grid[1].mean_specificity == 1.0);
  CHECK(result.chosen_lr == 1e-5);

  SUBCASE("hint prefixes are excluded from the search prompts") {
    // The scripted model would throw on an unmatched professor-prefixed
    // prompt only if rules required it; here we just assert the plain render
    // was used by checking a professor-sensitive model sees no hint.
    ScriptedBackend sensitive;
    sensitive.set_complete_fn([](const std::string& prompt, int) -> std::string {
      REQUIRE(prompt.find("professor") == std::string::npos);
      return "Alpha holds.";
    });
    sensitive.set_answer_fn([](const std::string& prompt, const std::string&,
                               const std::set<std::string>&)
                                -> std::map<std::string, double> {
      REQUIRE(prompt.find("professor") == std::string::npos);
      return {{"A", 0.8}, {"B", 0.2}};
    });
    const auto r2 = lr_search(sensitive, {1e-5}, heldout, cfg, sampler, 0.95);
    CHECK(r2.chosen_lr == 1e-5);
  }
}
