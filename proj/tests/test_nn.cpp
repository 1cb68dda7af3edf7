#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace grok;
using ad::Tensor;

namespace {

ModelConfig small_config(std::size_t in = 3, std::size_t classes = 3) {
  ModelConfig mc;
  mc.in_features = in;
  mc.d_model = 8;
  mc.heads = 2;
  mc.num_classes = classes;
  mc.layers = 2;
  mc.K = 2;
  mc.M = 4;
  return mc;
}

void zero_linear(Linear& l) {
  l.weight.mutable_value() = Matrix(l.weight.rows(), l.weight.cols());
  l.bias.mutable_value() = Matrix(1, l.bias.cols());
}

LayerParams random_layer(std::size_t d, std::size_t heads, std::size_t K, std::size_t M, Rng& rng) {
  ModelConfig mc;
  mc.in_features = d;
  mc.d_model = d;
  mc.heads = heads;
  mc.K = K;
  mc.M = M;
  auto model = GrokFormerModel::init(mc, rng);
  // Perturb the layer norms away from (1, 0) so their gradients are generic.
  auto& lp = model.layers[0];
  for (Tensor* t : {&lp.ln1_gamma, &lp.ln1_beta, &lp.ln2_gamma, &lp.ln2_beta})
    for (double& v : t->mutable_value().values()) v += rng.uniform(-0.3, 0.3);
  return lp;
}

std::vector<Tensor> layer_tensors(const LayerParams& p) {
  std::vector<Tensor> out = {p.ln1_gamma, p.ln1_beta, p.ln2_gamma, p.ln2_beta};
  for (const Linear* l : {&p.attention.query, &p.attention.key, &p.attention.value,
                          &p.attention.output, &p.ffn_in, &p.ffn_out}) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  out.push_back(p.filter.a);
  out.push_back(p.filter.b);
  out.push_back(p.filter.alpha);
  return out;
}

Graph labeled_graph(std::size_t n, std::size_t features, int classes, Rng& rng) {
  Graph g = oracle::random_nondegenerate_graph(n, 0.3, rng);
  g.features = random_matrix(n, features, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  g.labels = labels;
  return g;
}

}  // namespace

TEST(Attention, MatchesDenseOracleOneHead) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto lp = random_layer(4, 1, 1, 1, rng);
    const Matrix x = random_matrix(6, 4, rng, -2, 2);
    EXPECT_LT(max_abs_diff(efficient_attention(ad::constant(x), lp.attention).value(),
                           oracle::dense_attention_one_head(x, lp.attention)),
              1e-10);
  }
}

TEST(Attention, MultiHeadIsConcatenationOfHeads) {
  Rng rng(2);
  const auto lp = random_layer(6, 3, 1, 1, rng);
  const Matrix x = random_matrix(5, 6, rng);
  // Re-run each head as a one-head attention with sliced projections and an
  // identity output, then project the concatenation by hand.
  Matrix merged(5, 6);
  for (std::size_t h = 0; h < 3; ++h) {
    auto slice = [h](const Linear& l) {
      Matrix w(l.weight.rows(), 2), b(1, 2);
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < 2; ++j) w(i, j) = l.weight.value()(i, 2 * h + j);
      for (std::size_t j = 0; j < 2; ++j) b[j] = l.bias.value()[2 * h + j];
      return Linear{ad::constant(w), ad::constant(b)};
    };
    AttentionParams head{slice(lp.attention.query), slice(lp.attention.key), slice(lp.attention.value),
                         Linear{ad::constant(Matrix::identity(2)), ad::constant(Matrix(1, 2))}, 1};
    const Matrix y = oracle::dense_attention_one_head(x, head);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 2; ++j) merged(i, 2 * h + j) = y(i, j);
  }
  EXPECT_LT(max_abs_diff(efficient_attention(ad::constant(x), lp.attention).value(),
                         oracle::affine(merged, lp.attention.output)),
            1e-12);
}

TEST(Attention, SingleNodeProjectsValueRow) {
  Rng rng(3);
  const auto lp = random_layer(4, 2, 1, 1, rng);
  const Matrix x = random_matrix(1, 4, rng);
  // Both softmaxes over a singleton... the query softmax is over features, so
  // each head returns sum_c ρ_q(q)_c · v = v (query weights sum to 1).
  const Matrix v = oracle::affine(x, lp.attention.value);
  EXPECT_LT(max_abs_diff(efficient_attention(ad::constant(x), lp.attention).value(),
                         oracle::affine(v, lp.attention.output)),
            1e-12);
}

TEST(Attention, ZeroInputZeroBiasGivesZero) {
  Rng rng(4);
  auto lp = random_layer(4, 2, 1, 1, rng);
  for (Linear* l : {&lp.attention.query, &lp.attention.key, &lp.attention.value, &lp.attention.output})
    l->bias.mutable_value() = Matrix(1, 4);
  EXPECT_EQ(efficient_attention(ad::constant(Matrix(7, 4)), lp.attention).value(), Matrix(7, 4));
}

TEST(Attention, RejectsBadShapes) {
  Rng rng(5);
  auto lp = random_layer(4, 2, 1, 1, rng);
  EXPECT_THROW(efficient_attention(ad::constant(Matrix(3, 5)), lp.attention), PreconditionError);
  lp.attention.heads = 3;
  EXPECT_THROW(efficient_attention(ad::constant(Matrix(3, 4)), lp.attention), PreconditionError);
}

TEST(Attention, CostIsLinearInNodes) {
  // Doubling N roughly doubles the work; a quadratic implementation would
  // quadruple it. Generous bound to stay robust on a loaded machine.
  Rng rng(6);
  const auto lp = random_layer(8, 2, 1, 1, rng);
  auto time = [&](std::size_t n) {
    const Tensor x = ad::constant(random_matrix(n, 8, rng));
    const auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < 5; ++r) efficient_attention(x, lp.attention);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  time(1000);
  const double small = time(2000), large = time(8000);
  EXPECT_LT(large / small, 8.0);
}

TEST(Layer, ResidualWiringWithIdentityFilter) {
  Rng rng(7);
  auto lp = random_layer(4, 2, 2, 3, rng);
  zero_linear(lp.attention.output);
  zero_linear(lp.ffn_out);
  lp.filter = FilterTensors::from([] {
    auto p = FourierFilterParams::zeros(2, 3);
    p.a(0, 0) = 1.0;
    p.alpha = {1.0, 0.0};
    return p;
  }());
  const auto d = eig_sym(normalized_laplacian(random_graph(9, 0.4, rng)));
  const SpectralContext ctx(d, 2, 3);
  const Matrix x = random_matrix(9, 4, rng);
  EXPECT_LT(max_abs_diff(grokformer_layer(ad::constant(x), ctx, lp).value(), x * 2.0), 1e-12);
}

TEST(Layer, ZeroEverythingIsIdentity) {
  Rng rng(8);
  auto lp = random_layer(4, 1, 2, 3, rng);
  zero_linear(lp.attention.output);
  zero_linear(lp.ffn_out);
  lp.filter = FilterTensors::from(FourierFilterParams::zeros(2, 3));
  const auto d = eig_sym(normalized_laplacian(random_graph(7, 0.4, rng)));
  const SpectralContext ctx(d, 2, 3);
  const Matrix x = random_matrix(7, 4, rng);
  EXPECT_EQ(grokformer_layer(ad::constant(x), ctx, lp).value(), x);
}

TEST(Layer, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const auto lp = random_layer(4, 2, 2, 3, rng);
    const auto d = eig_sym(normalized_laplacian(random_graph(6, 0.5, rng)));
    const SpectralContext ctx(d, 2, 3);
    const Tensor x = ad::parameter(random_matrix(6, 4, rng));
    auto inputs = layer_tensors(lp);
    inputs.push_back(x);
    const auto r = gradient_check([&] { return ad::sum(grokformer_layer(x, ctx, lp)); }, inputs);
    EXPECT_LT(r.relative_error, 1e-6) << "trial " << t;
  }
}

TEST(Model, WholeModelGradientsMatchFiniteDifferences) {
  Rng rng(10);
  auto g = labeled_graph(7, 3, 3, rng);
  auto mc = small_config();
  mc.d_model = 4;
  mc.M = 2;
  const auto model = GrokFormerModel::init(mc, rng);
  const SpectralContext ctx(eig_sym(normalized_laplacian(g)), mc.K, mc.M);
  const std::vector<std::size_t> mask = {0, 2, 3, 5};
  const auto r = gradient_check(
      [&] { return ad::cross_entropy_masked(forward_probs(model, *g.features, ctx), *g.labels, mask); },
      model.parameters());
  EXPECT_LT(r.relative_error, 1e-6);
}

TEST(Predict, RowsSumToOne) {
  Rng rng(11);
  const Graph g = labeled_graph(12, 3, 3, rng);
  const auto model = GrokFormerModel::init(small_config(), rng);
  const Matrix p = predict(model, g, eig_sym(normalized_laplacian(g)));
  ASSERT_EQ(p.rows(), 12u);
  ASSERT_EQ(p.cols(), 3u);
  for (std::size_t i = 0; i < 12; ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Predict, SingleClassIsExactlyOne) {
  Rng rng(12);
  const Graph g = labeled_graph(6, 3, 1, rng);
  const auto model = GrokFormerModel::init(small_config(3, 1), rng);
  const Matrix p = predict(model, g, eig_sym(normalized_laplacian(g)));
  for (double v : p.values()) EXPECT_EQ(v, 1.0);
}

TEST(Predict, PermutationEquivariant) {
  Rng rng(13);
  for (int t = 0; t < 5; ++t) {
    const Graph g = labeled_graph(14, 3, 3, rng);
    const auto perm = oracle::random_permutation(14, rng);
    const Graph gp = permute_graph(g, perm);
    const auto model = GrokFormerModel::init(small_config(), rng);
    const Matrix p = predict(model, g, eig_sym(normalized_laplacian(g)));
    const Matrix pp = predict(model, gp, eig_sym(normalized_laplacian(gp)));
    EXPECT_LT(max_abs_diff(pp, permute_rows(p, perm)), 1e-6);
  }
}

TEST(Predict, Errors) {
  Rng rng(14);
  Graph g = labeled_graph(6, 3, 2, rng);
  const auto model = GrokFormerModel::init(small_config(), rng);
  const auto d = eig_sym(normalized_laplacian(g));
  g.features.reset();
  EXPECT_THROW(predict(model, g, d), PreconditionError);
  g.features = Matrix(6, 5);
  EXPECT_THROW(predict(model, g, d), PreconditionError);
}

TEST(Model, InitRejectsBadConfig) {
  Rng rng(15);
  auto mc = small_config();
  mc.heads = 3;
  EXPECT_THROW(GrokFormerModel::init(mc, rng), PreconditionError);
}

TEST(Model, CloneIsDeep) {
  Rng rng(16);
  const auto model = GrokFormerModel::init(small_config(), rng);
  auto copy = model.clone();
  copy.classifier.weight.mutable_value()[0] += 1.0;
  EXPECT_NE(copy.classifier.weight.value(), model.classifier.weight.value());
}

TEST(Model, FilterInitPerDesign) {
  Rng rng(17);
  auto mc = small_config();
  mc.K = 4;
  const auto model = GrokFormerModel::init(mc, rng);
  for (const auto& lp : model.layers)
    for (double a : lp.filter.alpha.value().values()) EXPECT_EQ(a, 0.25);
}

TEST(Readout, MaxPoolOfNodeEmbeddings) {
  const Tensor x = ad::constant(Matrix{{1, 0}, {0, 1}});
  EXPECT_EQ(readout_max_pool(x).value(), (Matrix{{1, 1}}));
  EXPECT_EQ(readout_max_pool(ad::constant(Matrix{{3, 4}})).value(), (Matrix{{3, 4}}));
}

TEST(Adam, ZeroGradientZeroDecayIsNoOp) {
  std::vector<Tensor> params = {ad::parameter(Matrix{{1, -2}})};
  params[0].mutable_grad() = Matrix(1, 2);
  AdamState state;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step(params, state, cfg);
  EXPECT_EQ(params[0].value(), (Matrix{{1, -2}}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> params = {ad::parameter(Matrix{{0.5}})};
  params[0].mutable_grad() = Matrix{{1.0}};
  AdamState state;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  adam_step(params, state, cfg);
  EXPECT_NEAR(params[0].value()[0], 0.4, 1e-7);
}

TEST(Adam, WeightDecayIsAddedToGradient) {
  // Gradient 0, decay 1, θ=2: effective gradient 2, so a first step of −lr.
  std::vector<Tensor> params = {ad::parameter(Matrix{{2.0}})};
  AdamState state;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.weight_decay = 1.0;
  adam_step(params, state, cfg);
  EXPECT_NEAR(params[0].value()[0], 1.95, 1e-7);
  EXPECT_NEAR(state.first[0][0], 0.2, 1e-15);
}

TEST(Adam, HandEvaluatedSecondStep) {
  std::vector<Tensor> params = {ad::parameter(Matrix{{0.0}})};
  AdamState state;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  params[0].mutable_grad() = Matrix{{1.0}};
  adam_step(params, state, cfg);
  params[0].mutable_grad() = Matrix{{-2.0}};
  adam_step(params, state, cfg);
  const double m = 0.9 * 0.1 + 0.1 * -2.0, v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(params[0].value()[0], -0.1 / (1.0 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    std::vector<Tensor> params = {ad::parameter(Matrix{{0.3, -0.1}})};
    AdamState state;
    TrainConfig cfg;
    for (int i = 0; i < 2; ++i) {
      params[0].mutable_grad() = Matrix{{0.7, -1.3}};
      adam_step(params, state, cfg);
    }
    return params[0].value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, StopsAfterPatienceAndRestoresBest) {
  Rng rng(18);
  const Graph g = labeled_graph(20, 3, 2, rng);
  const auto d = eig_sym(normalized_laplacian(g));
  const auto model = GrokFormerModel::init(small_config(3, 2), rng);
  SplitMasks split;
  for (std::size_t i = 0; i < 20; ++i) (i < 12 ? split.train : i < 16 ? split.val : split.test).push_back(i);
  TrainConfig cfg;
  cfg.max_epochs = 300;
  cfg.patience = 0;
  cfg.learning_rate = 0.05;
  const auto r = train(model, g, d, split, cfg);
  // patience 0: stop at the first epoch that fails to improve.
  ASSERT_LT(r.trace.size(), cfg.max_epochs);
  const auto& last = r.trace.back();
  EXPECT_EQ(r.best_epoch + 2, r.trace.size());
  EXPECT_GE(last.val_loss, r.trace[r.best_epoch].val_loss);
  for (std::size_t e = 1; e + 1 < r.trace.size(); ++e) EXPECT_LT(r.trace[e].val_loss, r.trace[e - 1].val_loss);
  // Restored parameters reproduce the best epoch's validation loss.
  const SpectralContext ctx(d, model.config.K, model.config.M);
  EXPECT_NEAR(ad::cross_entropy_masked(forward_probs(r.model, *g.features, ctx), *g.labels, split.val).item(),
              r.trace[r.best_epoch].val_loss, 1e-12);
}

TEST(Train, PatienceCountsNonImprovingEpochs) {
  Rng rng(19);
  const Graph g = labeled_graph(20, 3, 2, rng);
  const auto d = eig_sym(normalized_laplacian(g));
  const auto model = GrokFormerModel::init(small_config(3, 2), rng);
  SplitMasks split;
  for (std::size_t i = 0; i < 20; ++i) (i < 12 ? split.train : i < 16 ? split.val : split.test).push_back(i);
  TrainConfig cfg;
  cfg.max_epochs = 400;
  cfg.patience = 5;
  cfg.learning_rate = 0.05;
  const auto r = train(model, g, d, split, cfg);
  if (r.trace.size() < cfg.max_epochs) {
    EXPECT_EQ(r.trace.size(), r.best_epoch + 1 + cfg.patience + 1);
  }
}

TEST(Train, DeterministicTraces) {
  Rng rng(20);
  const Graph g = labeled_graph(16, 3, 2, rng);
  const auto d = eig_sym(normalized_laplacian(g));
  auto mc = small_config(3, 2);
  mc.dropout = 0.2;
  const auto model = GrokFormerModel::init(mc, rng);
  SplitMasks split;
  for (std::size_t i = 0; i < 16; ++i) (i < 10 ? split.train : i < 13 ? split.val : split.test).push_back(i);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.patience = 30;
  cfg.seed = 99;
  const auto a = train(model, g, d, split, cfg);
  const auto b = train(model, g, d, split, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t e = 0; e < a.trace.size(); ++e) {
    EXPECT_EQ(a.trace[e].train_loss, b.trace[e].train_loss);
    EXPECT_EQ(a.trace[e].val_loss, b.trace[e].val_loss);
  }
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].value(), pb[k].value());
}

TEST(Train, SeparableDataReachesFullTrainAccuracy) {
  // Two classes split by the sign of the first feature on a sparse path graph.
  Rng rng(21);
  const std::size_t n = 40;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  Matrix x(n, 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.below(2));
    x(i, 0) = (labels[i] ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
    x(i, 1) = rng.uniform(-1, 1);
  }
  const Graph g = build_graph(n, edges, x, labels);
  const auto d = eig_sym(normalized_laplacian(g));
  const auto model = GrokFormerModel::init(small_config(2, 2), rng);
  SplitMasks split;
  for (std::size_t i = 0; i < n; ++i) (i % 5 < 3 ? split.train : i % 5 == 3 ? split.val : split.test).push_back(i);
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  const auto r = train(model, g, d, split, cfg);
  EXPECT_EQ(accuracy(predict(r.model, g, d), labels, split.train), 1.0);
}

TEST(Train, Preconditions) {
  Rng rng(22);
  const Graph g = labeled_graph(8, 3, 2, rng);
  const auto d = eig_sym(normalized_laplacian(g));
  const auto model = GrokFormerModel::init(small_config(3, 2), rng);
  TrainConfig cfg;
  EXPECT_THROW(train(model, g, d, SplitMasks{{0, 1}, {}, {2}}, cfg), PreconditionError);
  cfg.patience = cfg.max_epochs + 1;
  EXPECT_THROW(train(model, g, d, SplitMasks{{0, 1}, {3}, {2}}, cfg), PreconditionError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(model, g, d, SplitMasks{{0, 1}, {3}, {2}}, cfg), PreconditionError);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  Rng rng(23);
  const Graph g = labeled_graph(10, 3, 3, rng);
  const auto d = eig_sym(normalized_laplacian(g));
  auto mc = small_config();
  mc.dropout = 0.1;
  const auto model = GrokFormerModel::init(mc, rng);
  std::stringstream s;
  write_checkpoint(s, model);
  EXPECT_EQ(s.str().rfind("GROKCKPT v1\n", 0), 0u);
  const auto back = read_checkpoint(s);
  EXPECT_EQ(back.config.d_model, mc.d_model);
  EXPECT_EQ(back.config.dropout, mc.dropout);
  const auto a = model.named_parameters(), b = back.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].first, b[k].first);
    EXPECT_EQ(a[k].second.value(), b[k].second.value());
  }
  EXPECT_EQ(predict(back, g, d), predict(model, g, d));
}

TEST(Checkpoint, RejectsGarbage) {
  std::istringstream bad("NOT A CHECKPOINT\n");
  EXPECT_THROW(read_checkpoint(bad), IoError);
  Rng rng(24);
  std::stringstream s;
  write_checkpoint(s, GrokFormerModel::init(small_config(), rng));
  std::string text = s.str();
  std::istringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), IoError);
}
