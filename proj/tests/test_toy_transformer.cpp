#include <doctest.h>

#include "cotfaith/analysis/logit_lens.hpp"
#include "cotfaith/errors.hpp"
#include "cotfaith/toy_transformer.hpp"

#include <cmath>

using namespace cotfaith;

namespace {

ToyTransformerConfig small_config(uint64_t seed = 3) {
  ToyTransformerConfig cfg;
  cfg.vocab_words = {"Question", ":",    "Options", "Answer", "A",     "B",    "C",
                     "D",        ".",    "the",     "is",     "sky",   "blue", "water",
                     "wet",      "fire", "hot",     "so",     "first", "then", "step",
                     "1",        "2",    "because", "option", "correct"};
  cfg.dim = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.max_seq = 64;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("toy transformer basics") {
  ToyTransformer model(small_config());

  SUBCASE("tokenizer round-trips known words and maps unknowns to <unk>") {
    const auto ids = model.tokenize("the sky is blue zzz");
    REQUIRE(ids.size() == 5);
    CHECK(model.token_text(ids[0]) == "the");
    CHECK(model.token_text(ids[4]) == "<unk>");
    CHECK_THROWS_AS(model.token_text(-1), ValidationError);
  }

  SUBCASE("greedy generation is deterministic") {
    SamplerConfig greedy;
    greedy.max_new_tokens = 8;
    CHECK(model.complete("the sky is", greedy, 0) == model.complete("the sky is", greedy, 0));
  }

  SUBCASE("sampled generation reproducible per (seed, sample_index)") {
    SamplerConfig sampler;
    sampler.mode = SamplerConfig::Mode::Sample;
    sampler.temperature = 1.2;
    sampler.seed = 4;
    sampler.max_new_tokens = 8;
    CHECK(model.complete("the sky is", sampler, 2) == model.complete("the sky is", sampler, 2));
  }

  SUBCASE("context overflow is a non-retryable error") {
    std::string longtext;
    for (int i = 0; i < 200; ++i) longtext += "the ";
    SamplerConfig greedy;
    CHECK_THROWS_AS(model.complete(longtext, greedy, 0), ContextOverflowError);
  }

  SUBCASE("answer distribution lands on label tokens") {
    const auto raw = model.answer_distribution("the sky is blue", "because water is wet",
                                               {"A", "B"});
    CHECK(raw.at("A") > 0.0);
    CHECK(raw.at("B") > 0.0);
    CHECK(raw.at("A") + raw.at("B") <= 1.0);
  }
}

TEST_CASE("toy transformer trace shapes and bounds") {
  ToyTransformer model(small_config());
  const std::string text = "the sky is blue so water is wet";  // 8 tokens

  SUBCASE("2 layers x 5 positions gives 10 readings of hidden size") {
    const auto readings =
        model.trace(text, {0, 1}, {0, 1, 2, 3, 4}, Stream::AttnOutput);
    REQUIRE(readings.size() == 10);
    for (const auto& r : readings) CHECK(r.vector.size() == 16);
  }

  SUBCASE("layer and position bounds are enforced") {
    CHECK_THROWS_AS(model.trace(text, {2}, {0}, Stream::AttnOutput), ValidationError);
    CHECK_THROWS_AS(model.trace(text, {0}, {99}, Stream::AttnOutput), ValidationError);
  }

  SUBCASE("stream audit counts attention and mlp queries separately") {
    ToyTransformer fresh(small_config());
    fresh.trace(text, {0}, {0}, Stream::AttnOutput);
    fresh.trace(text, {0}, {0}, Stream::AttnOutput);
    CHECK(fresh.attn_trace_queries() == 2);
    CHECK(fresh.mlp_trace_queries() == 0);
    fresh.trace(text, {0}, {0}, Stream::MlpOutput);
    CHECK(fresh.mlp_trace_queries() == 1);
  }
}

TEST_CASE("lens consistency: final residual decodes to the output logits") {
  ToyTransformer model(small_config(11));
  const std::string text = "the fire is hot because the sky is blue";
  const auto tokens = model.tokenize(text);
  const auto lens = model.lens_params();
  for (int pos = 0; pos < static_cast<int>(tokens.size()); ++pos) {
    const auto residual = model.trace(text, {}, {pos}, Stream::FinalResidual);
    REQUIRE(residual.size() == 1);
    const auto decoded = lens_decode(residual[0].vector, lens);
    const auto direct = model.output_logits(text, pos);
    REQUIRE(decoded.size() == direct.size());
    for (size_t v = 0; v < decoded.size(); ++v)
      CHECK(std::abs(decoded[v] - direct[v]) < 1e-4);
  }
}

TEST_CASE("unlearning gradients match finite differences") {
  ToyTransformer model(small_config(7));
  UnlearnLossSpec spec;
  spec.context = "the sky is";
  spec.target = " blue because water is wet";
  spec.beta = 0.2;
  spec.kl_weight = 0.7;

  // Perturbed evaluation point: at the reference weights the NPO delta is
  // exactly zero, which would hide asymmetries.
  auto handle = model.clone_for_intervention();
  auto& clone = dynamic_cast<ToyClone&>(*handle);
  model.apply_gradient_step(*handle, spec, 1e-3);

  toy::Weights grads = clone.weights;  // same shapes
  grads.add_scaled(grads, -1.0);       // zero it
  const double loss0 = model.unlearn_loss(clone.weights, spec, &grads);
  CHECK(std::isfinite(loss0));

  auto check_fd = [&](double& theta_ref, double grad) {
    const double h = 1e-5;
    const double saved = theta_ref;
    theta_ref = saved + h;
    const double up = model.unlearn_loss(clone.weights, spec, nullptr);
    theta_ref = saved - h;
    const double down = model.unlearn_loss(clone.weights, spec, nullptr);
    theta_ref = saved;
    const double fd = (up - down) / (2 * h);
    CHECK(grad == doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
  };

  // Spot-check representative parameters from every block.
  const int sky = model.tokenize("sky")[0];
  check_fd(clone.weights.wemb(sky, 3), grads.wemb(sky, 3));
  check_fd(clone.weights.wpos(1, 2), grads.wpos(1, 2));
  check_fd(clone.weights.layers[0].wq(0, 5), grads.layers[0].wq(0, 5));
  check_fd(clone.weights.layers[0].wk(3, 1), grads.layers[0].wk(3, 1));
  check_fd(clone.weights.layers[0].wv(2, 7), grads.layers[0].wv(2, 7));
  check_fd(clone.weights.layers[0].wo(4, 4), grads.layers[0].wo(4, 4));
  check_fd(clone.weights.layers[0].bq(0), grads.layers[0].bq(0));
  check_fd(clone.weights.layers[0].ln1_g(2), grads.layers[0].ln1_g(2));
  check_fd(clone.weights.layers[0].ln1_b(5), grads.layers[0].ln1_b(5));
  check_fd(clone.weights.layers[1].w1(1, 3), grads.layers[1].w1(1, 3));
  check_fd(clone.weights.layers[1].w2(2, 2), grads.layers[1].w2(2, 2));
  check_fd(clone.weights.layers[1].b2(6), grads.layers[1].b2(6));
  check_fd(clone.weights.layers[1].ln2_g(1), grads.layers[1].ln2_g(1));
  check_fd(clone.weights.lnf_g(0), grads.lnf_g(0));
  check_fd(clone.weights.lnf_b(3), grads.lnf_b(3));
  check_fd(clone.weights.wu(2, 9), grads.wu(2, 9));
}

TEST_CASE("toy clones are isolated and unlearning reduces the step probability") {
  ToyTransformer model(small_config(5));
  const std::string context = "the sky is";
  const std::string target = " blue because water is wet";
  const double base_p = model.sequence_prob(context, target);
  REQUIRE(base_p > 0.0);

  SUBCASE("gradient steps on a clone never touch the base model") {
    auto clone = model.clone_for_intervention();
    for (int i = 0; i < 3; ++i)
      model.apply_gradient_step(*clone, {context, target, 0.1, 1.0}, 0.05);
    CHECK(model.sequence_prob(context, target) == base_p);
    CHECK(model.sequence_prob_with(*clone, context, target) < base_p);
  }

  SUBCASE("zero learning rate leaves the clone at the base probability") {
    auto clone = model.clone_for_intervention();
    model.apply_gradient_step(*clone, {context, target, 0.1, 1.0}, 0.0);
    CHECK(model.sequence_prob_with(*clone, context, target) == base_p);
  }

  SUBCASE("step probability drops monotonically with iteration count") {
    std::vector<double> probs;
    for (int iters : {1, 2, 4, 8}) {
      auto clone = model.clone_for_intervention();
      for (int i = 0; i < iters; ++i)
        model.apply_gradient_step(*clone, {context, target, 0.1, 1.0}, 0.05);
      probs.push_back(model.sequence_prob_with(*clone, context, target));
    }
    for (size_t i = 1; i < probs.size(); ++i) CHECK(probs[i] < probs[i - 1]);
  }
}
