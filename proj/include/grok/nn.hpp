#pragma once

// GrokFormer network: embedding MLP, pre-LN layers combining efficient
// multi-head attention with the learnable Fourier spectral filter, a linear
// classifier, and full-graph training with Adam and early stopping.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grok/autograd.hpp"
#include "grok/filter.hpp"
#include "grok/graph.hpp"
#include "grok/rng.hpp"
#include "grok/spectral.hpp"

namespace grok {

using ad::Tensor;

/// x·W + b with W: in×out, b: 1×out.
struct Linear {
  Tensor weight;
  Tensor bias;

  /// U(−1/√in, 1/√in) for weights and bias.
  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(in, out), b(1, out);
    for (double& v : w.values()) v = rng.uniform(-s, s);
    for (double& v : b.values()) v = rng.uniform(-s, s);
    return {ad::parameter(std::move(w)), ad::parameter(std::move(b))};
  }

  Tensor operator()(const Tensor& x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

struct AttentionParams {
  Linear query, key, value, output;
  std::size_t heads = 1;
};

/// Trainable view of FourierFilterParams; alpha is stored as a K×1 column.
struct FilterTensors {
  Tensor a, b, alpha;

  static FilterTensors from(const FourierFilterParams& p) {
    Matrix al(p.K, 1);
    for (std::size_t k = 0; k < p.K; ++k) al[k] = p.alpha[k];
    return {ad::parameter(p.a), ad::parameter(p.b), ad::parameter(std::move(al))};
  }

  FourierFilterParams params() const {
    FourierFilterParams p;
    p.K = a.rows();
    p.M = a.cols() - 1;
    p.a = a.value();
    p.b = b.value();
    p.alpha = alpha.value().values();
    return p;
  }
};

struct LayerParams {
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  AttentionParams attention;
  Linear ffn_in, ffn_out;
  FilterTensors filter;
};

struct ModelConfig {
  std::size_t in_features = 1;
  std::size_t d_model = 16;
  std::size_t num_classes = 2;
  std::size_t heads = 1;
  std::size_t layers = 1;
  std::size_t K = 1;
  std::size_t M = 16;
  double dropout = 0.0;
};

/// Everything the network needs from one graph's spectrum, shared across
/// forward passes.
struct SpectralContext {
  Tensor eigenvectors;             // N × n, constant
  Tensor eigenvectors_transposed;  // n × N, constant
  std::vector<double> eigenvalues;
  std::shared_ptr<const FourierBasisTable> basis;

  SpectralContext(const SpectralDecomposition& d, std::size_t K, std::size_t M)
      : eigenvectors(ad::constant(d.eigenvectors)),
        eigenvectors_transposed(ad::constant(d.eigenvectors.transposed())),
        eigenvalues(d.eigenvalues),
        basis(std::make_shared<FourierBasisTable>(d.eigenvalues, K, M)) {}

  std::size_t full_size() const { return eigenvectors.rows(); }
};

/// U·(h(λ) ⊙ (Uᵀ·X)) with gradients into X and the filter coefficients.
inline Tensor spectral_convolve(const SpectralContext& ctx, const FilterTensors& f, const Tensor& x) {
  if (x.rows() != ctx.full_size())
    throw PreconditionError("spectral_convolve: signal rows != graph size");
  const Tensor h = ad::fourier_response(ctx.basis, f.a, f.b, f.alpha);
  const Tensor xhat = ad::matmul(ctx.eigenvectors_transposed, x);
  return ad::matmul(ctx.eigenvectors, ad::scale_rows(h, xhat));
}

/// Per head: softmax_rows(Q_h)·(softmax_cols(K_h)ᵀ·V_h). Queries are
/// normalized over their features, keys over the nodes, so the product can
/// be taken right to left at O(N·d²). Heads are concatenated and projected.
inline Tensor efficient_attention(const Tensor& x, const AttentionParams& p,
                                  double dropout = 0.0, Rng* rng = nullptr) {
  const std::size_t d_model = p.query.weight.cols();
  if (p.heads == 0 || d_model % p.heads != 0)
    throw PreconditionError("efficient_attention: heads must divide d_model");
  if (x.cols() != p.query.weight.rows())
    throw PreconditionError("efficient_attention: input width mismatch");
  const Tensor q = p.query(x), k = p.key(x), v = p.value(x);
  const std::size_t width = d_model / p.heads;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = ad::softmax_rows(ad::slice_cols(q, h * width, width));
    const Tensor kh = ad::softmax_cols(ad::slice_cols(k, h * width, width));
    const Tensor vh = ad::slice_cols(v, h * width, width);
    heads.push_back(ad::matmul(qh, ad::matmul(ad::transpose(kh), vh)));
  }
  Tensor merged = p.heads == 1 ? heads.front() : ad::concat_cols(heads);
  if (rng) merged = ad::dropout(merged, dropout, *rng);
  return p.output(merged);
}

/// X' = EMHA(LN(X)) + X + X_F;  X_out = FFN(LN(X')) + X'.
/// X_F filters the raw layer input.
inline Tensor grokformer_layer(const Tensor& x, const SpectralContext& ctx, const LayerParams& p,
                               double dropout = 0.0, Rng* rng = nullptr) {
  const Tensor filtered = spectral_convolve(ctx, p.filter, x);
  const Tensor attended =
      efficient_attention(ad::layer_norm(x, p.ln1_gamma, p.ln1_beta), p.attention, dropout, rng);
  const Tensor mid = ad::add(ad::add(attended, x), filtered);
  const Tensor ffn = p.ffn_out(ad::gelu(p.ffn_in(ad::layer_norm(mid, p.ln2_gamma, p.ln2_beta))));
  return ad::add(ffn, mid);
}

struct GrokFormerModel {
  ModelConfig config;
  Linear embed_in, embed_out;
  std::vector<LayerParams> layers;
  Linear classifier;

  static GrokFormerModel init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0)
      throw PreconditionError("GrokFormerModel: heads must divide d_model");
    if (cfg.num_classes == 0 || cfg.in_features == 0 || cfg.K == 0)
      throw PreconditionError("GrokFormerModel: in_features, num_classes and K must be positive");
    GrokFormerModel m;
    m.config = cfg;
    const std::size_t d = cfg.d_model;
    m.embed_in = Linear::init(cfg.in_features, d, rng);
    m.embed_out = Linear::init(d, d, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LayerParams lp;
      lp.ln1_gamma = ad::parameter(Matrix(1, d, 1.0));
      lp.ln1_beta = ad::parameter(Matrix(1, d, 0.0));
      lp.ln2_gamma = ad::parameter(Matrix(1, d, 1.0));
      lp.ln2_beta = ad::parameter(Matrix(1, d, 0.0));
      lp.attention = {Linear::init(d, d, rng), Linear::init(d, d, rng), Linear::init(d, d, rng),
                      Linear::init(d, d, rng), cfg.heads};
      lp.ffn_in = Linear::init(d, 2 * d, rng);
      lp.ffn_out = Linear::init(2 * d, d, rng);
      lp.filter = FilterTensors::from(FourierFilterParams::random(cfg.K, cfg.M, rng));
      m.layers.push_back(std::move(lp));
    }
    m.classifier = Linear::init(d, cfg.num_classes, rng);
    return m;
  }

  /// All trainable tensors in checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto lin = [&out](const std::string& name, const Linear& l) {
      out.emplace_back(name + ".weight", l.weight);
      out.emplace_back(name + ".bias", l.bias);
    };
    lin("embed_in", embed_in);
    lin("embed_out", embed_out);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& lp = layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      out.emplace_back(pre + "ln1.gamma", lp.ln1_gamma);
      out.emplace_back(pre + "ln1.beta", lp.ln1_beta);
      lin(pre + "attn.query", lp.attention.query);
      lin(pre + "attn.key", lp.attention.key);
      lin(pre + "attn.value", lp.attention.value);
      lin(pre + "attn.output", lp.attention.output);
      out.emplace_back(pre + "ln2.gamma", lp.ln2_gamma);
      out.emplace_back(pre + "ln2.beta", lp.ln2_beta);
      lin(pre + "ffn.in", lp.ffn_in);
      lin(pre + "ffn.out", lp.ffn_out);
      out.emplace_back(pre + "filter.a", lp.filter.a);
      out.emplace_back(pre + "filter.b", lp.filter.b);
      out.emplace_back(pre + "filter.alpha", lp.filter.alpha);
    }
    lin("classifier", classifier);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  /// Deep copy with fresh parameter nodes.
  GrokFormerModel clone() const {
    GrokFormerModel m = *this;
    auto fresh = [](Tensor& t) { t = ad::parameter(t.value()); };
    auto lin = [&](Linear& l) { fresh(l.weight); fresh(l.bias); };
    lin(m.embed_in);
    lin(m.embed_out);
    for (auto& lp : m.layers) {
      for (Tensor* t : {&lp.ln1_gamma, &lp.ln1_beta, &lp.ln2_gamma, &lp.ln2_beta}) fresh(*t);
      for (Linear* l : {&lp.attention.query, &lp.attention.key, &lp.attention.value,
                        &lp.attention.output, &lp.ffn_in, &lp.ffn_out})
        lin(*l);
      for (Tensor* t : {&lp.filter.a, &lp.filter.b, &lp.filter.alpha}) fresh(*t);
    }
    lin(m.classifier);
    return m;
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }
};

/// Class logits for every node. Pass an rng to enable dropout (training).
inline Tensor forward_logits(const GrokFormerModel& model, const Matrix& features,
                             const SpectralContext& ctx, Rng* rng = nullptr) {
  if (features.cols() != model.config.in_features)
    throw PreconditionError("forward: feature width " + std::to_string(features.cols()) +
                            " != model in_features " + std::to_string(model.config.in_features));
  const double p = model.config.dropout;
  Tensor x = model.embed_out(ad::gelu(model.embed_in(ad::constant(features))));
  if (rng) x = ad::dropout(x, p, *rng);
  for (const auto& layer : model.layers) x = grokformer_layer(x, ctx, layer, p, rng);
  return model.classifier(x);
}

inline Tensor forward_probs(const GrokFormerModel& model, const Matrix& features,
                            const SpectralContext& ctx, Rng* rng = nullptr) {
  return ad::softmax_rows(forward_logits(model, features, ctx, rng));
}

/// Class probabilities, evaluation mode. `d` must come from g's Laplacian.
inline Matrix predict(const GrokFormerModel& model, const Graph& g, const SpectralDecomposition& d) {
  if (!g.features) throw PreconditionError("predict: graph has no node features");
  if (d.full_size != g.num_nodes) throw PreconditionError("predict: decomposition size mismatch");
  const SpectralContext ctx(d, model.config.K, model.config.M);
  return forward_probs(model, *g.features, ctx).value();
}

/// Graph-level embedding by column-wise max over nodes.
inline Tensor readout_max_pool(const Tensor& node_embeddings) {
  return ad::max_pool_rows(node_embeddings);
}

// ---------------------------------------------------------------------------
// Optimization.

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 2000;
  std::size_t patience = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw PreconditionError("TrainConfig: learning_rate must be > 0");
    if (patience > max_epochs) throw PreconditionError("TrainConfig: patience > max_epochs");
  }
};

struct AdamState {
  std::vector<Matrix> first, second;
  std::size_t step = 0;
};

/// One Adam update. Weight decay is classic L2: wd·θ is added to the
/// gradient before the moment updates. Parameters without a gradient
/// are treated as having a zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg) {
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.rows(), p.cols());
      state.second.emplace_back(p.rows(), p.cols());
    }
  }
  if (state.first.size() != params.size()) throw PreconditionError("adam_step: state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& theta = params[k].mutable_value();
    const Matrix& grad = params[k].grad();
    Matrix& m = state.first[k];
    Matrix& v = state.second[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i]) + cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      theta[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct SplitMasks {
  std::vector<std::size_t> train, val, test;
};

inline double accuracy(const Matrix& probs, const std::vector<int>& labels,
                       const std::vector<std::size_t>& mask) {
  if (mask.empty()) throw PreconditionError("accuracy: empty mask");
  std::size_t correct = 0;
  for (std::size_t i : mask) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs(i, c) > probs(i, best)) best = c;
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

struct TrainResult {
  GrokFormerModel model;
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
};

/// Full-graph training. Stops once the validation loss has failed to improve
/// for more than `patience` consecutive epochs, then restores the parameters
/// of the best-validation epoch.
inline TrainResult train(const GrokFormerModel& initial, const Graph& g,
                         const SpectralDecomposition& d, const SplitMasks& split,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (!g.features || !g.labels) throw PreconditionError("train: graph needs features and labels");
  if (split.train.empty() || split.val.empty())
    throw PreconditionError("train: train and validation masks must be nonempty");
  const SpectralContext ctx(d, initial.config.K, initial.config.M);
  const auto& labels = *g.labels;

  TrainResult result{initial.clone(), {}, 0};
  GrokFormerModel& model = result.model;
  std::vector<Tensor> params = model.parameters();
  std::vector<Matrix> best;
  for (const auto& p : params) best.push_back(p.value());
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  AdamState adam;
  Rng rng(cfg.seed);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    model.zero_grad();
    const Tensor probs = forward_probs(model, *g.features, ctx, &rng);
    const Tensor loss = ad::cross_entropy_masked(probs, labels, split.train);
    ad::backward(loss);
    adam_step(params, adam, cfg);

    const Tensor eval = forward_probs(model, *g.features, ctx);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss.item();
    rec.val_loss = ad::cross_entropy_masked(eval, labels, split.val).item();
    rec.val_acc = accuracy(eval.value(), labels, split.val);
    result.trace.push_back(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.best_epoch = epoch;
      for (std::size_t k = 0; k < params.size(); ++k) best[k] = params[k].value();
      stale = 0;
    } else if (++stale > cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k].mutable_value() = best[k];
  model.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "GROKCKPT v1" line, a config line of key=value pairs, then per
// parameter (in named_parameters() order) "name rows cols" and one line of
// row-major values.

inline void write_checkpoint(std::ostream& out, const GrokFormerModel& model) {
  const auto& c = model.config;
  out << "GROKCKPT v1\n"
      << "in_features=" << c.in_features << " d_model=" << c.d_model
      << " num_classes=" << c.num_classes << " heads=" << c.heads << " layers=" << c.layers
      << " K=" << c.K << " M=" << c.M << " dropout=" << std::setprecision(17) << c.dropout << '\n';
  for (const auto& [name, t] : model.named_parameters()) {
    out << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    const auto& v = t.value().values();
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  }
}

inline GrokFormerModel read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("GROKCKPT v1", 0) != 0)
    throw IoError("not a GROKCKPT v1 checkpoint");
  if (!std::getline(in, line)) throw IoError("checkpoint: missing config line");
  std::map<std::string, std::string> kv;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw IoError("checkpoint: bad config token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  ModelConfig c;
  try {
    c.in_features = std::stoul(kv.at("in_features"));
    c.d_model = std::stoul(kv.at("d_model"));
    c.num_classes = std::stoul(kv.at("num_classes"));
    c.heads = std::stoul(kv.at("heads"));
    c.layers = std::stoul(kv.at("layers"));
    c.K = std::stoul(kv.at("K"));
    c.M = std::stoul(kv.at("M"));
    c.dropout = std::stod(kv.at("dropout"));
  } catch (const std::exception&) {
    throw IoError("checkpoint: incomplete config line");
  }
  Rng rng(0);
  GrokFormerModel model = GrokFormerModel::init(c, rng);
  for (auto& [name, t] : model.named_parameters()) {
    std::string got;
    std::size_t r = 0, cc = 0;
    if (!(in >> got >> r >> cc) || got != name || r != t.rows() || cc != t.cols())
      throw IoError("checkpoint: expected parameter '" + name + "'");
    Tensor target = t;
    for (double& v : target.mutable_value().values())
      if (!(in >> v)) throw IoError("checkpoint: truncated values for '" + name + "'");
  }
  return model;
}

}  // namespace grok
