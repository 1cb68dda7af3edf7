#pragma once

// Benchmarks: fitting the six reference filters on a grid graph, and node
// classification on seeded stochastic block models.

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"  // nlohmann/json, vendored

#include "grok/autograd.hpp"
#include "grok/config.hpp"
#include "grok/filter.hpp"
#include "grok/graph.hpp"
#include "grok/nn.hpp"
#include "grok/rng.hpp"
#include "grok/spectral.hpp"

namespace grok {

// Independent streams for each randomized component of one run.
enum class Stream : std::uint64_t { signals = 1, filter_init = 2, sbm = 3, split = 4, model = 5, train = 6 };

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s, std::uint64_t index = 0) {
  // splitmix64 finalizer over (seed, stream, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(s) * 1000003ull + index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Filter fitting.

struct FilterTask {
  Graph graph;
  SpectralDecomposition decomposition;
  Matrix inputs;   // N × S, i.i.d. U[0, 1]
  Matrix targets;  // N × S
};

inline Matrix uniform_signals(std::size_t n, std::size_t signals, std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::signals));
  Matrix x(n, signals);
  for (double& v : x.values()) v = rng.uniform();
  return x;
}

inline FilterTask gen_filter_task(std::size_t rows, std::size_t cols, PredefinedFilter filter,
                                  std::size_t num_signals, std::uint64_t seed) {
  if (rows * cols < 4) throw PreconditionError("gen_filter_task: grid needs at least 4 nodes");
  FilterTask t;
  t.graph = grid_graph(rows, cols);
  t.decomposition = eig_sym(normalized_laplacian(t.graph));
  t.inputs = uniform_signals(t.graph.num_nodes, num_signals, seed);
  t.targets = apply_predefined_filter(t.decomposition, filter, t.inputs);
  return t;
}

struct FilterFitResult {
  PredefinedFilter filter = PredefinedFilter::low_pass;
  FourierFilterParams trained;
  FourierFilterParams oracle;
  FitMetrics trained_metrics;
  FitMetrics oracle_metrics;
  std::vector<double> loss_trace;  // mean squared error per step
};

struct FitOptions {
  std::size_t K = 1;
  std::size_t M = 64;
  std::size_t steps = 2000;
  double learning_rate = 0.01;
  double ridge = 1e-8;
  std::uint64_t seed = 0;
};

/// Trains a standalone Fourier filter so that spectral_convolve(inputs)
/// matches targets under squared error, with full-batch Adam. The oracle is
/// the least-squares fit of the same family with each eigenvalue weighted
/// by the spectral energy of the inputs, which is the identical objective
/// on a full decomposition.
inline FilterFitResult fit_filter_to_signals(const SpectralDecomposition& d, const Matrix& inputs,
                                             const Matrix& targets, PredefinedFilter filter,
                                             const FitOptions& opt) {
  if (inputs.rows() != d.full_size || !inputs.same_shape(targets))
    throw PreconditionError("fit_filter_to_signals: signal shape mismatch");
  FilterFitResult r;
  r.filter = filter;

  const SpectralContext ctx(d, opt.K, opt.M);
  Rng init(derive_seed(opt.seed, Stream::filter_init));
  FilterTensors f = FilterTensors::from(FourierFilterParams::random(opt.K, opt.M, init));
  std::vector<Tensor> params = {f.a, f.b, f.alpha};
  // Uᵀ·X is fixed while only the filter trains; hoist it out of the loop.
  const Tensor xhat = ad::constant(gft(d, inputs));
  const Tensor target = ad::constant(targets);
  TrainConfig adam_cfg;
  adam_cfg.learning_rate = opt.learning_rate;
  adam_cfg.weight_decay = 0.0;
  AdamState adam;
  const double inv = 1.0 / static_cast<double>(inputs.size());
  for (std::size_t step = 0; step < opt.steps; ++step) {
    for (auto& p : params) p.zero_grad();
    const Tensor h = ad::fourier_response(ctx.basis, f.a, f.b, f.alpha);
    const Tensor out = ad::matmul(ctx.eigenvectors, ad::scale_rows(h, xhat));
    const Tensor diff = ad::sub(out, target);
    const Tensor loss = ad::scale(ad::sum(ad::mul(diff, diff)), inv);
    ad::backward(loss);
    adam_step(params, adam, adam_cfg);
    r.loss_trace.push_back(loss.item());
  }
  r.trained = f.params();
  r.trained_metrics = sse_and_r2(spectral_convolve(d, r.trained, inputs), targets);

  const Matrix xh = xhat.value();
  std::vector<double> energy(d.size(), 0.0);
  for (std::size_t i = 0; i < xh.rows(); ++i)
    for (double v : xh.row(i)) energy[i] += v * v;
  const auto truth = predefined_response(filter, d.eigenvalues);
  r.oracle = fit_filter_least_squares(d.eigenvalues, truth, opt.K, opt.M, opt.ridge, energy);
  r.oracle_metrics = sse_and_r2(spectral_convolve(d, r.oracle, inputs), targets);
  return r;
}

// ---------------------------------------------------------------------------
// Reports.

struct FilterReport {
  std::string filter;
  double sse = 0.0;
  std::optional<double> r2;
  double oracle_sse = 0.0;
  std::optional<double> oracle_r2;
};

struct MetricsReport {
  std::string task;
  std::vector<double> per_repeat;  // test accuracy (classify) or R² per filter (fit)
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<FilterReport> filters;
  std::optional<double> homophily;
  double wall_seconds = 0.0;

  void aggregate() {
    mean = std = 0.0;
    if (per_repeat.empty()) return;
    const double n = static_cast<double>(per_repeat.size());
    mean = std::accumulate(per_repeat.begin(), per_repeat.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : per_repeat) ss += (v - mean) * (v - mean);
    std = std::sqrt(ss / n);
  }
};

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["per_repeat"] = r.per_repeat;
  j["mean"] = r.mean;
  j["std"] = r.std;
  if (!r.filters.empty()) {
    j["filters"] = nlohmann::ordered_json::array();
    for (const auto& f : r.filters)
      j["filters"].push_back({{"filter", f.filter},
                              {"sse", f.sse},
                              {"r2", opt(f.r2)},
                              {"oracle_sse", f.oracle_sse},
                              {"oracle_r2", opt(f.oracle_r2)}});
  }
  if (r.homophily) j["homophily"] = *r.homophily;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

inline std::vector<PredefinedFilter> filters_from_config(const ExperimentConfig& cfg) {
  if (cfg.filter == "all")
    return {kAllPredefinedFilters.begin(), kAllPredefinedFilters.end()};
  return {parse_filter(cfg.filter)};
}

struct FilterFittingRun {
  MetricsReport report;
  std::vector<FilterFitResult> fits;
};

/// Decomposes once, then fits every requested filter.
inline FilterFittingRun run_filter_fitting(const ExperimentConfig& cfg,
                                           const SpectralDecomposition* precomputed = nullptr) {
  cfg.validate();
  if (cfg.task != "fit_filter") throw PreconditionError("run_filter_fitting: task must be fit_filter");
  const auto start = std::chrono::steady_clock::now();
  const Graph g = grid_graph(cfg.grid_rows, cfg.grid_cols);
  if (g.num_nodes < 4) throw PreconditionError("run_filter_fitting: grid needs at least 4 nodes");
  const SpectralDecomposition d = precomputed ? *precomputed : eig_sym(normalized_laplacian(g));
  if (d.full_size != g.num_nodes || !d.is_full())
    throw PreconditionError("run_filter_fitting: decomposition does not match the grid");
  const Matrix inputs = uniform_signals(g.num_nodes, cfg.num_signals, cfg.seed);

  FilterFittingRun run;
  run.report.task = "fit_filter";
  FitOptions opt{cfg.K, cfg.M, cfg.fit_steps, cfg.fit_lr, cfg.ridge, cfg.seed};
  for (const auto f : filters_from_config(cfg)) {
    const Matrix targets = apply_predefined_filter(d, f, inputs);
    auto fit = fit_filter_to_signals(d, inputs, targets, f, opt);
    run.report.filters.push_back({std::string(filter_name(f)), fit.trained_metrics.sse,
                                  fit.trained_metrics.r2, fit.oracle_metrics.sse,
                                  fit.oracle_metrics.r2});
    run.report.per_repeat.push_back(fit.trained_metrics.r2.value_or(0.0));
    run.fits.push_back(std::move(fit));
  }
  run.report.aggregate();
  run.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

// ---------------------------------------------------------------------------
// Node classification.

/// Planted-partition graph: each pair is an edge with probability p_intra
/// inside a block and p_inter across blocks. Labels are block ids; features
/// are the label one-hot (first C columns) plus N(0, noise²) on every column.
inline Graph gen_sbm(const std::vector<std::size_t>& block_sizes, double p_intra, double p_inter,
                     std::uint64_t seed, std::size_t feature_dim, double noise = 1.0) {
  if (p_intra < 0 || p_intra > 1 || p_inter < 0 || p_inter > 1)
    throw PreconditionError("gen_sbm: probabilities must lie in [0, 1]");
  if (block_sizes.empty()) throw PreconditionError("gen_sbm: no blocks");
  if (feature_dim < block_sizes.size())
    throw PreconditionError("gen_sbm: feature_dim must be at least the number of blocks");
  std::vector<int> labels;
  for (std::size_t b = 0; b < block_sizes.size(); ++b)
    labels.insert(labels.end(), block_sizes[b], static_cast<int>(b));
  const std::size_t n = labels.size();
  if (n == 0) throw PreconditionError("gen_sbm: empty graph");

  Rng rng(derive_seed(seed, Stream::sbm));
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(labels[i] == labels[j] ? p_intra : p_inter)) edges.emplace_back(i, j);
  Matrix features(n, feature_dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < feature_dim; ++j)
      features(i, j) = (static_cast<int>(j) == labels[i] ? 1.0 : 0.0) + noise * rng.normal();
  return build_graph(n, edges, std::move(features), std::move(labels));
}

/// Seeded shuffle, then contiguous train/val/test blocks of round(N·ratio)
/// (test takes the remainder).
inline SplitMasks random_split(std::size_t n, const std::vector<double>& ratios, std::uint64_t seed) {
  if (ratios.size() != 3) throw PreconditionError("random_split: need three ratios");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw PreconditionError("random_split: ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw PreconditionError("random_split: ratios must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, Stream::split));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[0]));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw PreconditionError("random_split: a mask would be empty for N=" + std::to_string(n));
  SplitMasks m;
  m.train.assign(order.begin(), order.begin() + n_train);
  m.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  m.test.assign(order.begin() + n_train + n_val, order.end());
  return m;
}

inline ModelConfig model_config_for(const ExperimentConfig& cfg, const Graph& g) {
  ModelConfig mc;
  mc.in_features = g.features->cols();
  mc.d_model = cfg.d_model;
  mc.num_classes = static_cast<std::size_t>(g.num_classes());
  mc.heads = cfg.heads;
  mc.layers = cfg.layers;
  mc.K = cfg.K;
  mc.M = cfg.M;
  mc.dropout = cfg.dropout;
  return mc;
}

inline TrainConfig train_config_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = cfg.lr;
  tc.weight_decay = cfg.weight_decay;
  tc.max_epochs = cfg.max_epochs;
  tc.patience = cfg.patience;
  tc.seed = seed;
  tc.beta1 = cfg.beta1;
  tc.beta2 = cfg.beta2;
  tc.epsilon = cfg.adam_eps;
  return tc;
}

/// The graph a node_classify config describes: loaded from files when
/// `graph` is set, otherwise a seeded SBM.
inline Graph classification_graph(const ExperimentConfig& cfg) {
  if (!cfg.graph.empty()) {
    Graph g = load_graph(cfg.graph, 0, cfg.features, cfg.labels);
    if (!g.features || !g.labels)
      throw PreconditionError("node_classify: file-based graphs need features and labels");
    return g;
  }
  return gen_sbm(cfg.sbm_blocks, cfg.p_intra, cfg.p_inter, cfg.seed, cfg.feature_dim,
                 cfg.feature_noise);
}

struct NodeClassificationRun {
  MetricsReport report;
  std::vector<TrainResult> repeats;
  std::vector<SplitMasks> splits;
};

/// Repeat r uses split and initialization streams derived from seed and r,
/// so repeats are independent of how they are scheduled.
inline NodeClassificationRun run_node_classification(const ExperimentConfig& cfg,
                                                     const Graph& g,
                                                     const SpectralDecomposition& d) {
  cfg.validate();
  if (!g.features || !g.labels) throw PreconditionError("run_node_classification: unlabeled graph");
  const auto start = std::chrono::steady_clock::now();
  NodeClassificationRun run;
  run.report.task = "node_classify";
  if (!g.edges.empty()) run.report.homophily = homophily_ratio(g);
  const ModelConfig mc = model_config_for(cfg, g);

  run.repeats.resize(cfg.num_repeats);
  run.splits.resize(cfg.num_repeats);
  run.report.per_repeat.assign(cfg.num_repeats, 0.0);
  parallel_for(cfg.num_repeats, [&](std::size_t r) {
    run.splits[r] = random_split(g.num_nodes, cfg.split, cfg.seed + r);
    Rng init(derive_seed(cfg.seed, Stream::model, r));
    const GrokFormerModel model = GrokFormerModel::init(mc, init);
    run.repeats[r] = train(model, g, d, run.splits[r],
                           train_config_for(cfg, derive_seed(cfg.seed, Stream::train, r)));
    const Matrix probs = predict(run.repeats[r].model, g, d);
    run.report.per_repeat[r] = accuracy(probs, *g.labels, run.splits[r].test);
  }, 1);
  run.report.aggregate();
  run.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

inline NodeClassificationRun run_node_classification(const ExperimentConfig& cfg) {
  if (cfg.task != "node_classify")
    throw PreconditionError("run_node_classification: task must be node_classify");
  const Graph g = classification_graph(cfg);
  const SpectralDecomposition d = eig_sym(normalized_laplacian(g));
  return run_node_classification(cfg, g, d);
}

// ---------------------------------------------------------------------------
// Exports.

/// "lambda,response" rows for one layer's filter on a uniform grid over [0, 2].
inline void export_learned_response(std::ostream& out, const GrokFormerModel& model,
                                    std::size_t layer_index, std::size_t grid_points = 512) {
  if (layer_index >= model.layers.size())
    throw PreconditionError("export_learned_response: layer " + std::to_string(layer_index) +
                            " out of range (model has " + std::to_string(model.layers.size()) +
                            ")");
  write_response_csv(out, model.layers[layer_index].filter.params(), grid_points);
}

/// "layer,k,alpha" with k starting at 1.
inline void export_order_weights(std::ostream& out, const GrokFormerModel& model) {
  out << "layer,k,alpha\n";
  out.precision(17);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& alpha = model.layers[l].filter.alpha.value();
    for (std::size_t k = 0; k < alpha.size(); ++k) out << l << ',' << k + 1 << ',' << alpha[k] << '\n';
  }
}

/// One JSON object per epoch: epoch, train_loss, val_loss, val_acc.
inline void write_trace_jsonl(std::ostream& out, const std::vector<EpochRecord>& trace) {
  for (const auto& e : trace) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["val_acc"] = e.val_acc;
    out << j.dump() << '\n';
  }
}

/// Mean of h over the grid points in [lo, hi].
inline double mean_response(const FourierFilterParams& p, double lo, double hi,
                            std::size_t grid_points = 512) {
  const auto grid = uniform_lambda_grid(grid_points);
  std::vector<double> pts;
  for (double x : grid)
    if (x >= lo && x <= hi) pts.push_back(x);
  if (pts.empty()) throw PreconditionError("mean_response: no grid points in range");
  const auto h = filter_response(p, pts);
  return std::accumulate(h.begin(), h.end(), 0.0) / static_cast<double>(h.size());
}

}  // namespace grok
