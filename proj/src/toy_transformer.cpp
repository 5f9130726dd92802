#include "cotfaith/toy_transformer.hpp"

#include "cotfaith/text.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cotfaith {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNegInf = -1e30;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

VectorXd softmax(const VectorXd& z) {
  const double m = z.maxCoeff();
  VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

double log_softmax_at(const VectorXd& z, int idx) {
  const double m = z.maxCoeff();
  const double lse = std::log((z.array() - m).exp().sum()) + m;
  return z(idx) - lse;
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

MatrixXd layer_norm_rows(const MatrixXd& x, const VectorXd& g, const VectorXd& b,
                         double eps) {
  MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double s = std::sqrt(var + eps);
    y.row(r) = (((x.row(r).array() - mu) / s) * g.transpose().array()) +
               b.transpose().array();
  }
  return y;
}

// dy -> dx for y = g * xhat + b; accumulates dg, db.
MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& x, const VectorXd& g,
                             double eps, VectorXd& dg, VectorXd& db) {
  MatrixXd dx(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double s = std::sqrt(var + eps);
    Eigen::ArrayXd xhat = (x.row(r).transpose().array() - mu) / s;
    Eigen::ArrayXd dxhat = dy.row(r).transpose().array() * g.array();
    dg.array() += dy.row(r).transpose().array() * xhat;
    db.array() += dy.row(r).transpose().array();
    const double m1 = dxhat.sum() / d;
    const double m2 = (dxhat * xhat).sum() / d;
    dx.row(r) = ((dxhat - m1 - xhat * m2) / s).matrix().transpose();
  }
  return dx;
}

MatrixXd init_matrix(Eigen::Index rows, Eigen::Index cols, double scale,
                     DeterministicRng& rng) {
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = (2.0 * rng.next_double() - 1.0) * scale;
  return m;
}

size_t common_prefix(const std::vector<int>& a, const std::vector<int>& b) {
  size_t n = std::min(a.size(), b.size());
  size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

}  // namespace

namespace toy {

void Weights::add_scaled(const Weights& grad, double factor) {
  wemb += factor * grad.wemb;
  wpos += factor * grad.wpos;
  for (size_t l = 0; l < layers.size(); ++l) {
    LayerWeights& w = layers[l];
    const LayerWeights& g = grad.layers[l];
    w.ln1_g += factor * g.ln1_g;
    w.ln1_b += factor * g.ln1_b;
    w.ln2_g += factor * g.ln2_g;
    w.ln2_b += factor * g.ln2_b;
    w.wq += factor * g.wq;
    w.wk += factor * g.wk;
    w.wv += factor * g.wv;
    w.wo += factor * g.wo;
    w.bq += factor * g.bq;
    w.bk += factor * g.bk;
    w.bv += factor * g.bv;
    w.bo += factor * g.bo;
    w.w1 += factor * g.w1;
    w.b1 += factor * g.b1;
    w.w2 += factor * g.w2;
    w.b2 += factor * g.b2;
  }
  lnf_g += factor * grad.lnf_g;
  lnf_b += factor * grad.lnf_b;
  wu += factor * grad.wu;
}

}  // namespace toy

ToyTransformer::ToyTransformer(ToyTransformerConfig config) : cfg_(std::move(config)) {
  if (cfg_.dim % cfg_.n_heads != 0)
    throw ValidationError("toy transformer: dim must be divisible by n_heads");
  if (cfg_.n_layers < 1) throw ValidationError("toy transformer: n_layers must be >= 1");

  vocab_ = {"<unk>", "<eos>"};
  for (const auto& w : cfg_.vocab_words)
    if (!vocab_index_.count(w) && w != "<unk>" && w != "<eos>") {
      vocab_index_[w] = static_cast<int>(vocab_.size());
      vocab_.push_back(w);
    }
  vocab_index_["<unk>"] = 0;
  vocab_index_["<eos>"] = 1;

  const auto V = static_cast<Eigen::Index>(vocab_.size());
  const Eigen::Index D = cfg_.dim, F = cfg_.d_ff, P = cfg_.max_seq;
  const double scale = cfg_.init_scale / std::sqrt(static_cast<double>(cfg_.dim));
  auto rng = DeterministicRng::keyed(cfg_.seed, 0x746f79ull);  // "toy"

  weights_.wemb = init_matrix(V, D, scale, rng);
  weights_.wpos = init_matrix(P, D, scale, rng);
  weights_.layers.resize(static_cast<size_t>(cfg_.n_layers));
  for (auto& l : weights_.layers) {
    l.ln1_g = VectorXd::Ones(D);
    l.ln1_b = VectorXd::Zero(D);
    l.ln2_g = VectorXd::Ones(D);
    l.ln2_b = VectorXd::Zero(D);
    l.wq = init_matrix(D, D, scale, rng);
    l.wk = init_matrix(D, D, scale, rng);
    l.wv = init_matrix(D, D, scale, rng);
    l.wo = init_matrix(D, D, scale, rng);
    l.bq = VectorXd::Zero(D);
    l.bk = VectorXd::Zero(D);
    l.bv = VectorXd::Zero(D);
    l.bo = VectorXd::Zero(D);
    l.w1 = init_matrix(D, F, scale, rng);
    l.b1 = VectorXd::Zero(F);
    l.w2 = init_matrix(F, D, scale, rng);
    l.b2 = VectorXd::Zero(D);
  }
  weights_.lnf_g = VectorXd::Ones(D);
  weights_.lnf_b = VectorXd::Zero(D);
  weights_.wu = init_matrix(V, D, scale, rng);
}

Capabilities ToyTransformer::capabilities() const {
  Capabilities c;
  c.white_box = true;
  c.intervention = true;
  c.sequence_scoring = true;
  return c;
}

std::vector<int> ToyTransformer::tokenize(const std::string& text) {
  return tokenize_checked(text);
}

std::vector<int> ToyTransformer::tokenize_checked(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& tok : word_tokenize(text)) {
    auto it = vocab_index_.find(tok);
    ids.push_back(it == vocab_index_.end() ? 0 : it->second);
  }
  if (ids.empty()) throw ValidationError("toy transformer: cannot tokenize empty text");
  if (static_cast<int>(ids.size()) > cfg_.max_seq)
    throw ContextOverflowError("toy transformer: " + std::to_string(ids.size()) +
                               " tokens exceed max_seq " + std::to_string(cfg_.max_seq));
  return ids;
}

std::string ToyTransformer::token_text(int id) const {
  if (id < 0 || id >= static_cast<int>(vocab_.size()))
    throw ValidationError("toy transformer: token id out of range: " + std::to_string(id));
  return vocab_[static_cast<size_t>(id)];
}

toy::Tape ToyTransformer::forward(const std::vector<int>& tokens,
                                  const toy::Weights& w) const {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index D = cfg_.dim;
  const int H = cfg_.n_heads;
  const Eigen::Index dh = D / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  toy::Tape tape;
  tape.tokens = tokens;
  tape.x0.resize(T, D);
  for (Eigen::Index t = 0; t < T; ++t)
    tape.x0.row(t) = w.wemb.row(tokens[static_cast<size_t>(t)]) + w.wpos.row(t);

  MatrixXd x = tape.x0;
  tape.layers.resize(w.layers.size());
  for (size_t li = 0; li < w.layers.size(); ++li) {
    const toy::LayerWeights& lw = w.layers[li];
    toy::LayerTape& lt = tape.layers[li];
    lt.x_in = x;
    lt.n1 = layer_norm_rows(x, lw.ln1_g, lw.ln1_b, cfg_.ln_eps);
    lt.q = (lt.n1 * lw.wq).rowwise() + lw.bq.transpose();
    lt.k = (lt.n1 * lw.wk).rowwise() + lw.bk.transpose();
    lt.v = (lt.n1 * lw.wv).rowwise() + lw.bv.transpose();

    lt.heads.resize(T, D);
    lt.attn.resize(static_cast<size_t>(H));
    for (int h = 0; h < H; ++h) {
      auto qh = lt.q.middleCols(h * dh, dh);
      auto kh = lt.k.middleCols(h * dh, dh);
      auto vh = lt.v.middleCols(h * dh, dh);
      MatrixXd scores = qh * kh.transpose() * inv_sqrt_dh;
      for (Eigen::Index i = 0; i < T; ++i)
        for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = kNegInf;
      MatrixXd& a = lt.attn[static_cast<size_t>(h)];
      a.resize(T, T);
      for (Eigen::Index i = 0; i < T; ++i)
        a.row(i) = softmax(scores.row(i).transpose()).transpose();
      lt.heads.middleCols(h * dh, dh) = a * vh;
    }
    lt.z = (lt.heads * lw.wo).rowwise() + lw.bo.transpose();
    lt.x_mid = lt.x_in + lt.z;
    lt.n2 = layer_norm_rows(lt.x_mid, lw.ln2_g, lw.ln2_b, cfg_.ln_eps);
    lt.ff_pre = (lt.n2 * lw.w1).rowwise() + lw.b1.transpose();
    lt.ff_act = lt.ff_pre.unaryExpr([](double v) { return gelu(v); });
    lt.m = (lt.ff_act * lw.w2).rowwise() + lw.b2.transpose();
    x = lt.x_mid + lt.m;
  }
  tape.residual = x;
  MatrixXd nf = layer_norm_rows(x, w.lnf_g, w.lnf_b, cfg_.ln_eps);
  tape.logits = nf * w.wu.transpose();
  return tape;
}

void ToyTransformer::backward(const toy::Tape& tape, const MatrixXd& dlogits,
                              const toy::Weights& w, toy::Weights& g) const {
  const auto T = tape.x0.rows();
  const Eigen::Index D = cfg_.dim;
  const int H = cfg_.n_heads;
  const Eigen::Index dh = D / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd nf = layer_norm_rows(tape.residual, w.lnf_g, w.lnf_b, cfg_.ln_eps);
  g.wu += dlogits.transpose() * nf;
  MatrixXd dnf = dlogits * w.wu;
  MatrixXd dx = layer_norm_backward(dnf, tape.residual, w.lnf_g, cfg_.ln_eps, g.lnf_g,
                                    g.lnf_b);

  for (size_t li = w.layers.size(); li-- > 0;) {
    const toy::LayerWeights& lw = w.layers[li];
    const toy::LayerTape& lt = tape.layers[li];
    toy::LayerWeights& gl = g.layers[li];

    // x = x_mid + m
    MatrixXd dm = dx;
    MatrixXd dx_mid = dx;

    // m = ff_act * w2 + b2
    gl.w2 += lt.ff_act.transpose() * dm;
    gl.b2 += dm.colwise().sum().transpose();
    MatrixXd dff_act = dm * lw.w2.transpose();
    MatrixXd dff_pre =
        dff_act.array() * lt.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    gl.w1 += lt.n2.transpose() * dff_pre;
    gl.b1 += dff_pre.colwise().sum().transpose();
    MatrixXd dn2 = dff_pre * lw.w1.transpose();
    dx_mid += layer_norm_backward(dn2, lt.x_mid, lw.ln2_g, cfg_.ln_eps, gl.ln2_g, gl.ln2_b);

    // x_mid = x_in + z
    MatrixXd dz = dx_mid;
    MatrixXd dx_in = dx_mid;

    // z = heads * wo + bo
    gl.wo += lt.heads.transpose() * dz;
    gl.bo += dz.colwise().sum().transpose();
    MatrixXd dheads = dz * lw.wo.transpose();

    MatrixXd dq = MatrixXd::Zero(T, D), dk = MatrixXd::Zero(T, D), dv = MatrixXd::Zero(T, D);
    for (int h = 0; h < H; ++h) {
      auto qh = lt.q.middleCols(h * dh, dh);
      auto kh = lt.k.middleCols(h * dh, dh);
      auto vh = lt.v.middleCols(h * dh, dh);
      const MatrixXd& a = lt.attn[static_cast<size_t>(h)];
      MatrixXd doh = dheads.middleCols(h * dh, dh);

      MatrixXd da = doh * vh.transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * doh;
      MatrixXd ds(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double dot = da.row(i).cwiseProduct(a.row(i)).sum();
        ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
      }
      dq.middleCols(h * dh, dh) = ds * kh * inv_sqrt_dh;
      dk.middleCols(h * dh, dh) = ds.transpose() * qh * inv_sqrt_dh;
    }

    gl.wq += lt.n1.transpose() * dq;
    gl.wk += lt.n1.transpose() * dk;
    gl.wv += lt.n1.transpose() * dv;
    gl.bq += dq.colwise().sum().transpose();
    gl.bk += dk.colwise().sum().transpose();
    gl.bv += dv.colwise().sum().transpose();
    MatrixXd dn1 = dq * lw.wq.transpose() + dk * lw.wk.transpose() + dv * lw.wv.transpose();
    dx_in += layer_norm_backward(dn1, lt.x_in, lw.ln1_g, cfg_.ln_eps, gl.ln1_g, gl.ln1_b);

    dx = dx_in;
  }

  for (Eigen::Index t = 0; t < T; ++t) {
    g.wemb.row(tape.tokens[static_cast<size_t>(t)]) += dx.row(t);
    g.wpos.row(t) += dx.row(t);
  }
}

int ToyTransformer::next_token(const VectorXd& logits, const SamplerConfig& sampler,
                               DeterministicRng& rng) const {
  if (sampler.mode == SamplerConfig::Mode::Greedy) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits(i) > logits(best)) best = i;
    return static_cast<int>(best);
  }
  VectorXd scaled = logits / sampler.temperature;
  std::vector<int> order(static_cast<size_t>(scaled.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scaled(a) > scaled(b); });
  size_t keep = order.size();
  if (sampler.top_k) keep = std::min(keep, static_cast<size_t>(*sampler.top_k));

  VectorXd probs = softmax(scaled);
  double cum = 0.0;
  size_t nucleus = 0;
  while (nucleus < keep && cum < sampler.top_p) {
    cum += probs(order[nucleus]);
    ++nucleus;
  }
  keep = std::max<size_t>(1, nucleus);

  double total = 0.0;
  for (size_t i = 0; i < keep; ++i) total += probs(order[i]);
  double x = rng.next_double() * total;
  for (size_t i = 0; i < keep; ++i) {
    x -= probs(order[i]);
    if (x < 0) return order[i];
  }
  return order[keep - 1];
}

std::string ToyTransformer::complete(const std::string& text, const SamplerConfig& sampler,
                                     int sample_index) {
  sampler.validate();
  std::vector<int> tokens = tokenize_checked(text);
  auto rng = DeterministicRng::keyed(sampler.seed, 0x746f7967656eull,
                                     static_cast<uint64_t>(sample_index));
  std::vector<std::string> out;
  for (int step = 0; step < sampler.max_new_tokens; ++step) {
    if (static_cast<int>(tokens.size()) >= cfg_.max_seq) break;
    toy::Tape tape = forward(tokens, weights_);
    const int next =
        next_token(tape.logits.row(tape.logits.rows() - 1).transpose(), sampler, rng);
    if (next == 1) break;  // <eos>
    tokens.push_back(next);
    out.push_back(vocab_[static_cast<size_t>(next)]);
  }
  std::string joined;
  for (size_t i = 0; i < out.size(); ++i) {
    if (i) joined += " ";
    joined += out[i];
  }
  return joined;
}

std::map<std::string, double> ToyTransformer::answer_probs(
    const std::string& prompt, const std::string& cot,
    const std::vector<std::string>& labels, const toy::Weights& w) const {
  const std::string text = compose_answer_text(prompt, cot);
  std::vector<int> tokens = tokenize_checked(text);
  toy::Tape tape = forward(tokens, w);
  VectorXd probs = softmax(tape.logits.row(tape.logits.rows() - 1).transpose());
  std::map<std::string, double> out;
  for (const auto& label : labels) {
    auto words = word_tokenize(label);
    auto it = words.empty() ? vocab_index_.end() : vocab_index_.find(words.front());
    out[label] = it == vocab_index_.end() ? 0.0 : probs(it->second);
  }
  return out;
}

std::map<std::string, double> ToyTransformer::answer_distribution(
    const std::string& prompt, const std::string& cot,
    const std::vector<std::string>& labels) {
  return answer_probs(prompt, cot, labels, weights_);
}

std::vector<ActivationReading> ToyTransformer::trace(const std::string& text,
                                                     const std::vector<int>& layers,
                                                     const std::vector<int>& positions,
                                                     Stream stream) {
  std::vector<int> tokens = tokenize_checked(text);
  toy::Tape tape = forward(tokens, weights_);
  const auto T = static_cast<int>(tokens.size());

  if (stream == Stream::AttnOutput) attn_queries_.fetch_add(1);
  if (stream == Stream::MlpOutput) mlp_queries_.fetch_add(1);

  auto check_pos = [&](int p) {
    if (p < 0 || p >= T)
      throw ValidationError("trace position " + std::to_string(p) + " out of range [0," +
                            std::to_string(T) + ")");
  };

  std::vector<ActivationReading> out;
  if (stream == Stream::FinalResidual) {
    for (int p : positions) {
      check_pos(p);
      ActivationReading r;
      r.layer = cfg_.n_layers;
      r.position = p;
      r.vector.resize(static_cast<size_t>(cfg_.dim));
      for (Eigen::Index i = 0; i < cfg_.dim; ++i)
        r.vector[static_cast<size_t>(i)] = tape.residual(p, i);
      out.push_back(std::move(r));
    }
    return out;
  }

  for (int p : positions) {
    check_pos(p);
    for (int layer : layers) {
      if (layer < 0 || layer >= cfg_.n_layers)
        throw ValidationError("trace layer " + std::to_string(layer) +
                              " out of range [0," + std::to_string(cfg_.n_layers) + ")");
      const MatrixXd& src = stream == Stream::AttnOutput
                                ? tape.layers[static_cast<size_t>(layer)].z
                                : tape.layers[static_cast<size_t>(layer)].m;
      ActivationReading r;
      r.layer = layer;
      r.position = p;
      r.vector.resize(static_cast<size_t>(cfg_.dim));
      for (Eigen::Index i = 0; i < cfg_.dim; ++i)
        r.vector[static_cast<size_t>(i)] = src(p, i);
      out.push_back(std::move(r));
    }
  }
  return out;
}

LensParams ToyTransformer::lens_params() const {
  LensParams p;
  p.vocab = static_cast<int>(vocab_.size());
  p.dim = cfg_.dim;
  p.ln_eps = cfg_.ln_eps;
  p.unembed.resize(static_cast<size_t>(p.vocab) * static_cast<size_t>(p.dim));
  for (int r = 0; r < p.vocab; ++r)
    for (int c = 0; c < p.dim; ++c)
      p.unembed[static_cast<size_t>(r) * p.dim + c] = weights_.wu(r, c);
  p.ln_gamma.assign(weights_.lnf_g.data(), weights_.lnf_g.data() + cfg_.dim);
  p.ln_beta.assign(weights_.lnf_b.data(), weights_.lnf_b.data() + cfg_.dim);
  return p;
}

std::vector<double> ToyTransformer::output_logits(const std::string& text, int position) {
  std::vector<int> tokens = tokenize_checked(text);
  if (position < 0 || position >= static_cast<int>(tokens.size()))
    throw ValidationError("output_logits position out of range");
  toy::Tape tape = forward(tokens, weights_);
  const auto row = tape.logits.row(position);
  std::vector<double> out(static_cast<size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i) out[static_cast<size_t>(i)] = row(i);
  return out;
}

double ToyTransformer::sequence_logprob(const std::vector<int>& full, size_t boundary,
                                        const toy::Weights& w) const {
  toy::Tape tape = forward(full, w);
  double lp = 0.0;
  for (size_t i = boundary; i < full.size(); ++i)
    lp += log_softmax_at(tape.logits.row(static_cast<Eigen::Index>(i - 1)).transpose(),
                         full[i]);
  return lp;
}

double ToyTransformer::seq_prob_impl(const std::string& context, const std::string& target,
                                     const toy::Weights& w) const {
  std::vector<int> ctx = tokenize_checked(context);
  std::vector<int> full = tokenize_checked(context + target);
  size_t boundary = std::min(common_prefix(ctx, full), full.size() - 1);
  boundary = std::max<size_t>(boundary, 1);
  const auto n_target = static_cast<double>(full.size() - boundary);
  if (n_target <= 0) throw ValidationError("sequence target tokenizes to nothing");
  const double lp = sequence_logprob(full, boundary, w);
  return std::exp(lp / n_target);  // geometric mean of per-token probabilities
}

double ToyTransformer::sequence_prob(const std::string& context, const std::string& target) {
  return seq_prob_impl(context, target, weights_);
}

std::shared_ptr<InterventionHandle> ToyTransformer::clone_for_intervention() {
  return std::make_shared<ToyClone>(weights_);
}

namespace {

toy::Weights zeros_like(const toy::Weights& w) {
  toy::Weights g;
  g.wemb = MatrixXd::Zero(w.wemb.rows(), w.wemb.cols());
  g.wpos = MatrixXd::Zero(w.wpos.rows(), w.wpos.cols());
  g.layers.resize(w.layers.size());
  for (size_t i = 0; i < w.layers.size(); ++i) {
    const toy::LayerWeights& l = w.layers[i];
    toy::LayerWeights& o = g.layers[i];
    o.ln1_g = VectorXd::Zero(l.ln1_g.size());
    o.ln1_b = VectorXd::Zero(l.ln1_b.size());
    o.ln2_g = VectorXd::Zero(l.ln2_g.size());
    o.ln2_b = VectorXd::Zero(l.ln2_b.size());
    o.wq = MatrixXd::Zero(l.wq.rows(), l.wq.cols());
    o.wk = MatrixXd::Zero(l.wk.rows(), l.wk.cols());
    o.wv = MatrixXd::Zero(l.wv.rows(), l.wv.cols());
    o.wo = MatrixXd::Zero(l.wo.rows(), l.wo.cols());
    o.bq = VectorXd::Zero(l.bq.size());
    o.bk = VectorXd::Zero(l.bk.size());
    o.bv = VectorXd::Zero(l.bv.size());
    o.bo = VectorXd::Zero(l.bo.size());
    o.w1 = MatrixXd::Zero(l.w1.rows(), l.w1.cols());
    o.b1 = VectorXd::Zero(l.b1.size());
    o.w2 = MatrixXd::Zero(l.w2.rows(), l.w2.cols());
    o.b2 = VectorXd::Zero(l.b2.size());
  }
  g.lnf_g = VectorXd::Zero(w.lnf_g.size());
  g.lnf_b = VectorXd::Zero(w.lnf_b.size());
  g.wu = MatrixXd::Zero(w.wu.rows(), w.wu.cols());
  return g;
}

}  // namespace

double ToyTransformer::unlearn_loss(const toy::Weights& theta, const UnlearnLossSpec& spec,
                                    toy::Weights* grads) const {
  std::vector<int> ctx = tokenize_checked(spec.context);
  std::vector<int> full = tokenize_checked(spec.context + spec.target);
  size_t boundary = std::min(common_prefix(ctx, full), full.size() - 1);
  boundary = std::max<size_t>(boundary, 1);
  if (boundary >= full.size())
    throw ValidationError("unlearn target tokenizes to nothing");

  toy::Tape tape = forward(full, theta);
  toy::Tape ref_tape = forward(full, weights_);
  const auto T = tape.logits.rows();
  const auto V = tape.logits.cols();

  double logp_theta = 0.0, logp_ref = 0.0;
  for (size_t i = boundary; i < full.size(); ++i) {
    logp_theta +=
        log_softmax_at(tape.logits.row(static_cast<Eigen::Index>(i - 1)).transpose(), full[i]);
    logp_ref += log_softmax_at(
        ref_tape.logits.row(static_cast<Eigen::Index>(i - 1)).transpose(), full[i]);
  }
  const double delta = logp_theta - logp_ref;
  const double npo = (2.0 / spec.beta) * softplus(spec.beta * delta);
  const double npo_w = 2.0 * sigmoid(spec.beta * delta);

  // KL(theta || base) averaged over all predictive positions.
  const auto n_pred = static_cast<double>(T - 1);
  double kl_total = 0.0;
  MatrixXd dlogits = MatrixXd::Zero(T, V);
  for (Eigen::Index r = 0; r + 1 < T; ++r) {
    VectorXd p = softmax(tape.logits.row(r).transpose());
    VectorXd lp = p.array().max(1e-300).log();
    VectorXd q = softmax(ref_tape.logits.row(r).transpose());
    VectorXd lq = q.array().max(1e-300).log();
    const double kl = (p.array() * (lp - lq).array()).sum();
    kl_total += kl;
    if (grads) {
      dlogits.row(r) += (spec.kl_weight / n_pred) *
                        (p.array() * ((lp - lq).array() - kl)).matrix().transpose();
    }
  }
  const double loss = npo + spec.kl_weight * kl_total / n_pred;

  if (grads) {
    for (size_t i = boundary; i < full.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i - 1);
      VectorXd p = softmax(tape.logits.row(r).transpose());
      VectorXd onehot = VectorXd::Zero(V);
      onehot(full[i]) = 1.0;
      dlogits.row(r) += npo_w * (onehot - p).transpose();
    }
    backward(tape, dlogits, theta, *grads);
  }
  return loss;
}

double ToyTransformer::apply_gradient_step(InterventionHandle& handle,
                                           const UnlearnLossSpec& spec,
                                           double learning_rate) {
  auto& clone = dynamic_cast<ToyClone&>(handle);
  toy::Weights grads = zeros_like(clone.weights);
  const double loss = unlearn_loss(clone.weights, spec, &grads);
  if (!std::isfinite(loss))
    throw Error("unlearning diverged: non-finite loss " + std::to_string(loss) +
                " (context fp " + fingerprint_hex(spec.context) + ", lr " +
                std::to_string(learning_rate) + ")");
  clone.weights.add_scaled(grads, -learning_rate);
  return loss;
}

std::map<std::string, double> ToyTransformer::answer_distribution_with(
    InterventionHandle& handle, const std::string& prompt, const std::string& cot,
    const std::vector<std::string>& labels) {
  auto& clone = dynamic_cast<ToyClone&>(handle);
  return answer_probs(prompt, cot, labels, clone.weights);
}

double ToyTransformer::sequence_prob_with(InterventionHandle& handle,
                                          const std::string& context,
                                          const std::string& target) {
  auto& clone = dynamic_cast<ToyClone&>(handle);
  return seq_prob_impl(context, target, clone.weights);
}

}  // namespace cotfaith
