#pragma once

#include "cotfaith/backend.hpp"
#include "cotfaith/rng.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace cotfaith {

// Bundled white-box backend: a small decoder-only transformer (pre-LN, causal
// MHA, GELU MLP, learned positions, untied unembedding) with deterministic
// seeded weights, word-level tokenization, activation capture, and analytic
// gradients for the unlearning loss.
struct ToyTransformerConfig {
  std::vector<std::string> vocab_words;  // <unk>, <eos> are prepended automatically
  int dim = 32;
  int n_layers = 3;
  int n_heads = 2;
  int d_ff = 64;
  int max_seq = 256;
  double ln_eps = 1e-5;
  double init_scale = 0.5;
  uint64_t seed = 0;
};

namespace toy {

struct LayerWeights {
  Eigen::VectorXd ln1_g, ln1_b, ln2_g, ln2_b;
  Eigen::MatrixXd wq, wk, wv, wo;  // dim x dim
  Eigen::VectorXd bq, bk, bv, bo;
  Eigen::MatrixXd w1;  // dim x d_ff
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // d_ff x dim
  Eigen::VectorXd b2;
};

struct Weights {
  Eigen::MatrixXd wemb;  // vocab x dim
  Eigen::MatrixXd wpos;  // max_seq x dim
  std::vector<LayerWeights> layers;
  Eigen::VectorXd lnf_g, lnf_b;
  Eigen::MatrixXd wu;  // vocab x dim

  void add_scaled(const Weights& grad, double factor);  // in-place axpy
};

struct LayerTape {
  Eigen::MatrixXd x_in, n1, q, k, v;
  std::vector<Eigen::MatrixXd> attn;  // per head, T x T
  Eigen::MatrixXd heads;              // concatenated head outputs, pre-projection
  Eigen::MatrixXd z;                  // attention output, post-projection, pre-residual
  Eigen::MatrixXd x_mid, n2, ff_pre, ff_act;
  Eigen::MatrixXd m;  // MLP output, pre-residual
};

struct Tape {
  std::vector<int> tokens;
  Eigen::MatrixXd x0;
  std::vector<LayerTape> layers;
  Eigen::MatrixXd residual;  // final stream, pre-LN_f
  Eigen::MatrixXd logits;    // T x vocab
};

}  // namespace toy

class ToyClone : public InterventionHandle {
public:
  explicit ToyClone(toy::Weights w) : weights(std::move(w)) {}
  toy::Weights weights;
};

class ToyTransformer : public ModelBackend {
public:
  explicit ToyTransformer(ToyTransformerConfig config);

  std::string name() const override { return "toy"; }
  Capabilities capabilities() const override;
  std::string eos_text() const override { return "<eos>"; }

  std::string complete(const std::string& text, const SamplerConfig& sampler,
                       int sample_index) override;
  std::map<std::string, double> answer_distribution(
      const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels) override;

  int layer_count() const override { return cfg_.n_layers; }
  std::vector<int> tokenize(const std::string& text) override;
  std::string token_text(int id) const override;
  // FinalResidual readings ignore `layers` and carry layer = layer_count().
  std::vector<ActivationReading> trace(const std::string& text,
                                       const std::vector<int>& layers,
                                       const std::vector<int>& positions,
                                       Stream stream) override;
  LensParams lens_params() const override;
  std::vector<double> output_logits(const std::string& text, int position) override;

  double sequence_prob(const std::string& context, const std::string& target) override;
  std::shared_ptr<InterventionHandle> clone_for_intervention() override;
  double apply_gradient_step(InterventionHandle& handle, const UnlearnLossSpec& spec,
                             double learning_rate) override;
  std::map<std::string, double> answer_distribution_with(
      InterventionHandle& handle, const std::string& prompt, const std::string& cot,
      const std::vector<std::string>& labels) override;
  double sequence_prob_with(InterventionHandle& handle, const std::string& context,
                            const std::string& target) override;

  // Stream-query audit, used by tests to assert which activations were read.
  long attn_trace_queries() const { return attn_queries_.load(); }
  long mlp_trace_queries() const { return mlp_queries_.load(); }

  const ToyTransformerConfig& config() const { return cfg_; }
  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const toy::Weights& weights() const { return weights_; }

  // Loss + gradient of the unlearning objective at `theta` against the base
  // weights as reference. Exposed for gradient checking.
  double unlearn_loss(const toy::Weights& theta, const UnlearnLossSpec& spec,
                      toy::Weights* grads) const;

private:
  toy::Tape forward(const std::vector<int>& tokens, const toy::Weights& w) const;
  void backward(const toy::Tape& tape, const Eigen::MatrixXd& dlogits,
                const toy::Weights& w, toy::Weights& grads) const;
  std::vector<int> tokenize_checked(const std::string& text) const;
  double sequence_logprob(const std::vector<int>& full, size_t boundary,
                          const toy::Weights& w) const;
  std::map<std::string, double> answer_probs(const std::string& prompt,
                                             const std::string& cot,
                                             const std::vector<std::string>& labels,
                                             const toy::Weights& w) const;
  double seq_prob_impl(const std::string& context, const std::string& target,
                       const toy::Weights& w) const;
  int next_token(const Eigen::VectorXd& logits, const SamplerConfig& sampler,
                 DeterministicRng& rng) const;

  ToyTransformerConfig cfg_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> vocab_index_;
  toy::Weights weights_;
  mutable std::atomic<long> attn_queries_{0};
  mutable std::atomic<long> mlp_queries_{0};
};

}  // namespace cotfaith
