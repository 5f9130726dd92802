#include <doctest.h>

#include "cotfaith/backend.hpp"
#include "cotfaith/corpus.hpp"
#include "cotfaith/errors.hpp"
#include "cotfaith/scripted_backend.hpp"
#include "test_util.hpp"

#include <set>

using namespace cotfaith;
using cotfaith::test::make_example;

namespace {

HintedPrompt plain_prompt(const Example& ex) { return render_prompt(ex, std::nullopt); }

}  // namespace

TEST_CASE("scripted generation") {
  const auto ex = make_example("gen", 4);
  const auto prompt = plain_prompt(ex);
  ScriptedBackend backend;
  ScriptedEntry entry;
  entry.cot = "The answer follows from the first option.";
  entry.label_probs = {{"A", 0.7}, {"B", 0.3}};
  backend.set_entry(prompt.text, entry);

  SamplerConfig greedy;

  SUBCASE("prompt-table lookup returns the exact CoT") {
    const auto rec = generate_cot(backend, prompt, greedy);
    CHECK(rec.cot == entry.cot);
    CHECK_FALSE(rec.degenerate);
  }

  SUBCASE("empty continuation is degenerate") {
    ScriptedBackend b2;
    b2.set_default(ScriptedEntry{"", {{"A", 1.0}}, {}});
    const auto rec = generate_cot(b2, prompt, greedy);
    CHECK(rec.degenerate);
  }

  SUBCASE("eos-only continuation is degenerate") {
    ScriptedBackend b2;
    b2.set_default(ScriptedEntry{"<eos><eos> <eos>", {{"A", 1.0}}, {}});
    CHECK(generate_cot(b2, prompt, greedy).degenerate);
  }

  SUBCASE("greedy generation is byte-identical across calls") {
    CHECK(generate_cot(backend, prompt, greedy).cot ==
          generate_cot(backend, prompt, greedy).cot);
  }

  SUBCASE("sampled generation reproducible for fixed (seed, sample_index)") {
    ScriptedBackend b2;
    ScriptedEntry stoch;
    stoch.choices = {{1.0, "path one", {{"A", 1.0}}}, {1.0, "path two", {{"B", 1.0}}}};
    b2.set_entry(prompt.text, stoch);
    SamplerConfig sampler;
    sampler.mode = SamplerConfig::Mode::Sample;
    sampler.seed = 9;
    std::set<std::string> seen;
    for (int idx = 0; idx < 16; ++idx) {
      const auto a = generate_cot(b2, prompt, sampler, idx);
      const auto b = generate_cot(b2, prompt, sampler, idx);
      CHECK(a.cot == b.cot);
      seen.insert(a.cot);
    }
    CHECK(seen.size() == 2);  // both branches are reachable
  }

  SUBCASE("unknown prompt without default errors") {
    ScriptedBackend b2;
    CHECK_THROWS_AS(generate_cot(b2, prompt, greedy), BackendError);
  }
}

TEST_CASE("predict_label") {
  const auto ex = make_example("pred", 2);
  const auto prompt = plain_prompt(ex);
  const auto labels = ex.labels();

  SUBCASE("argmax") {
    ScriptedBackend backend;
    backend.set_default(ScriptedEntry{"cot", {{"A", 0.7}, {"B", 0.3}}, {}});
    const auto pred = predict_label(backend, prompt, "cot", labels);
    CHECK(pred.label == "A");
    CHECK(pred.raw_probs.at("A") == 0.7);
    CHECK(pred.probs.at("A") == doctest::Approx(0.7));
  }

  SUBCASE("uniform tie breaks to the first label in option order") {
    ScriptedBackend backend;
    backend.set_default(ScriptedEntry{"cot", {{"A", 0.5}, {"B", 0.5}}, {}});
    CHECK(predict_label(backend, prompt, "cot", labels).label == "A");
  }

  SUBCASE("renormalized probs sum to one, raw kept unnormalized") {
    ScriptedBackend backend;
    backend.set_default(ScriptedEntry{"cot", {{"A", 0.2}, {"B", 0.2}}, {}});
    const auto pred = predict_label(backend, prompt, "cot", labels);
    CHECK(pred.probs.at("A") + pred.probs.at("B") == doctest::Approx(1.0));
    CHECK(pred.raw_probs.at("A") + pred.raw_probs.at("B") == doctest::Approx(0.4));
  }

  SUBCASE("hint-presence-dependent scripted model predicts the hinted label") {
    ScriptedBackend backend;
    backend.set_answer_fn([](const std::string& prompt_text, const std::string&,
                             const std::set<std::string>&) -> std::map<std::string, double> {
      if (prompt_text.find("A Stanford professor thinks the answer is") !=
          std::string::npos)
        return {{"A", 0.1}, {"B", 0.9}};
      return {{"A", 0.9}, {"B", 0.1}};
    });
    const HintSpec hint{HintKind::Professor, "B", 0};
    const auto hinted = render_prompt(ex, hint);
    CHECK(predict_label(backend, hinted, "cot", labels).label == "B");
    CHECK(predict_label(backend, prompt, "cot", labels).label == "A");
  }

  SUBCASE("no decodable label token errors") {
    ScriptedBackend backend;
    backend.set_default(ScriptedEntry{"cot", {{"A", 0.0}, {"B", 0.0}}, {}});
    CHECK_THROWS_AS(predict_label(backend, prompt, "cot", labels), BackendError);
  }
}

TEST_CASE("scripted white-box trace") {
  ScriptedBackend backend;
  backend.set_layer_count(2);
  backend.set_activation(0, 3, {1.0, 2.0});
  backend.set_activation(1, 3, {3.0, 4.0});

  SUBCASE("known constant vectors round-trip") {
    const auto readings = backend.trace("text", {0, 1}, {3}, Stream::AttnOutput);
    REQUIRE(readings.size() == 2);
    CHECK(readings[0].vector == std::vector<double>{1.0, 2.0});
    CHECK(readings[1].vector == std::vector<double>{3.0, 4.0});
  }

  SUBCASE("out-of-range layer is a bounds error") {
    CHECK_THROWS_AS(backend.trace("text", {7}, {3}, Stream::AttnOutput), ValidationError);
  }

  SUBCASE("black-box backends raise a capability error distinct from transport") {
    ScriptedBackend plain;
    CHECK_THROWS_AS(plain.trace("text", {0}, {0}, Stream::AttnOutput), CapabilityError);
    try {
      plain.trace("text", {0}, {0}, Stream::AttnOutput);
    } catch (const BackendError& e) {
      CHECK_FALSE(e.retryable());
    }
  }
}

TEST_CASE("scripted intervention clones") {
  const auto ex = make_example("clone", 2);
  const auto prompt = plain_prompt(ex);
  const auto labels = ex.labels();
  const std::string step = "the decisive step";

  ScriptedBackend backend;
  backend.set_step_prob(step, 0.5);
  backend.set_answer_fn([&](const std::string&, const std::string&,
                            const std::set<std::string>& unlearned)
                            -> std::map<std::string, double> {
    if (unlearned.count(step)) return {{"A", 0.9}, {"B", 0.1}};
    return {{"A", 0.1}, {"B", 0.9}};
  });

  SUBCASE("mutating a clone leaves the base model unchanged") {
    auto clone = backend.clone_for_intervention();
    backend.apply_gradient_step(*clone, {prompt.text, step, 0.1, 1.0}, 1e-4);
    CHECK(predict_label(backend, prompt, "", labels).label == "B");  // base intact
    const auto raw = backend.answer_distribution_with(*clone, prompt.text, "", labels);
    CHECK(prediction_from_raw(raw, labels, ex.id).label == "A");  // clone flipped
    CHECK(backend.sequence_prob_with(*clone, prompt.text, step) == 0.0);
    CHECK(backend.sequence_prob(prompt.text, step) == 0.5);
  }

  SUBCASE("two clones diverge independently") {
    auto c1 = backend.clone_for_intervention();
    auto c2 = backend.clone_for_intervention();
    backend.apply_gradient_step(*c1, {prompt.text, step, 0.1, 1.0}, 1e-4);
    backend.apply_gradient_step(*c2, {prompt.text, "another step", 0.1, 1.0}, 1e-4);
    const auto r1 = backend.answer_distribution_with(*c1, prompt.text, "", labels);
    const auto r2 = backend.answer_distribution_with(*c2, prompt.text, "", labels);
    CHECK(prediction_from_raw(r1, labels, ex.id).label == "A");
    CHECK(prediction_from_raw(r2, labels, ex.id).label == "B");
    CHECK(predict_label(backend, prompt, "", labels).label == "B");
  }

  SUBCASE("zero learning rate leaves the clone identical to base") {
    auto clone = backend.clone_for_intervention();
    backend.apply_gradient_step(*clone, {prompt.text, step, 0.1, 1.0}, 0.0);
    CHECK(backend.sequence_prob_with(*clone, prompt.text, step) == 0.5);
  }
}

TEST_CASE("scripted table files") {
  cotfaith::test::TempDir tmp("table");
  const auto ex = make_example("file", 2);
  const auto prompt = plain_prompt(ex);
  nlohmann::json table{
      {"entries", nlohmann::json::array({{{"prompt", prompt.text},
                                          {"cot", "scripted continuation"},
                                          {"label_probs", {{"A", 0.8}, {"B", 0.2}}}}})},
      {"rules", nlohmann::json::array(
                    {{{"prompt_contains", "professor"}, {"label_probs", {{"A", 0.0}, {"B", 1.0}}}}})},
      {"default", {{"cot", "fallback"}, {"label_probs", {{"A", 0.6}, {"B", 0.4}}}}},
  };
  const auto path = cotfaith::test::write_file(tmp.path(), "table.json", table.dump());
  auto backend = ScriptedBackend::from_file(path);

  CHECK(generate_cot(backend, prompt, SamplerConfig{}).cot == "scripted continuation");
  CHECK(predict_label(backend, prompt, "x", ex.labels()).label == "A");
  HintedPrompt other;
  other.text = "something about a professor";
  other.example_id = "other";
  CHECK(generate_cot(backend, other, SamplerConfig{}).cot == "fallback");
  CHECK(predict_label(backend, other, "x", ex.labels()).label == "B");
}

TEST_CASE("compose_answer_text and degenerate checks") {
  CHECK(compose_answer_text("P", "C") == "P\nC\nAnswer:");
  CHECK(compose_answer_text("P", "") == "P\nAnswer:");
  CHECK(is_degenerate_cot("", "<eos>"));
  CHECK(is_degenerate_cot("   \n ", "<eos>"));
  CHECK(is_degenerate_cot("<eos><eos>", "<eos>"));
  CHECK_FALSE(is_degenerate_cot("real text", "<eos>"));
  CHECK_FALSE(is_degenerate_cot("<eos> trailing words", "<eos>"));
}

TEST_CASE("sampler validation") {
  SamplerConfig s;
  s.mode = SamplerConfig::Mode::Sample;
  s.temperature = 0.0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s.temperature = 0.6;
  CHECK_NOTHROW(s.validate());
  s.max_new_tokens = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}
