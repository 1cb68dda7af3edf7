#pragma once

// Quick invariant suite behind `grok selftest`. Small sizes; runs in seconds.

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grok/autograd.hpp"
#include "grok/filter.hpp"
#include "grok/gradcheck.hpp"
#include "grok/graph.hpp"
#include "grok/nn.hpp"
#include "grok/rng.hpp"
#include "grok/spectral.hpp"

namespace grok {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline Graph random_graph(std::size_t n, double p, Rng& rng) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) edges.emplace_back(i, j);
  return build_graph(n, edges);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline std::vector<SelfTestResult> run_selftest() {
  std::vector<SelfTestResult> out;
  auto check = [&out](std::string name, const std::function<std::string()>& body) {
    SelfTestResult r{std::move(name), false, ""};
    try {
      r.detail = body();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    out.push_back(std::move(r));
  };

  check("grid_edge_count", [] {
    for (std::size_t r = 1; r <= 8; ++r)
      for (std::size_t c = 1; c <= 8; ++c)
        if (grid_graph(r, c).edges.size() != r * (c - 1) + c * (r - 1))
          return "wrong edge count for " + std::to_string(r) + "x" + std::to_string(c);
    return std::string();
  });

  check("laplacian_spectrum", [] {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
      const Graph g = random_graph(24, 0.15, rng);
      const Matrix lap = normalized_laplacian(g);
      const auto d = eig_sym(lap);
      if (d.eigenvalues.front() < -1e-9 || d.eigenvalues.back() > 2 + 1e-9)
        return std::string("eigenvalue outside [0, 2]");
      if (max_abs_diff(reconstruct(d), lap) >= 1e-8) return std::string("reconstruction error");
      if (max_abs_diff(matmul_tn(d.eigenvectors, d.eigenvectors), Matrix::identity(24)) >= 1e-8)
        return std::string("eigenvectors not orthonormal");
    }
    return std::string();
  });

  check("fourier_round_trip", [] {
    Rng rng(12);
    const auto d = eig_sym(normalized_laplacian(grid_graph(4, 5)));
    const Matrix x = random_matrix(20, 3, rng);
    if (max_abs_diff(igft(d, gft(d, x)), x) >= 1e-9) return std::string("igft(gft(x)) != x");
    return std::string();
  });

  check("convolution_order", [] {
    Rng rng(13);
    const auto d = eig_sym(normalized_laplacian(random_graph(20, 0.2, rng)));
    const auto p = FourierFilterParams::random(2, 8, rng);
    const Matrix x = random_matrix(20, 4, rng);
    const auto h = filter_response(p, d.eigenvalues);
    Matrix scaled = d.eigenvectors;
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t k = 0; k < 20; ++k) scaled(i, k) *= h[k];
    const Matrix explicit_filter = matmul_nt(scaled, d.eigenvectors);
    if (max_abs_diff(spectral_convolve(d, p, x), matmul(explicit_filter, x)) >= 1e-9)
      return std::string("ordered and explicit evaluation differ");
    return std::string();
  });

  check("filter_gradients", [] {
    Rng rng(14);
    const auto d = eig_sym(normalized_laplacian(random_graph(12, 0.3, rng)));
    const SpectralContext ctx(d, 2, 4);
    const auto f = FilterTensors::from(FourierFilterParams::random(2, 4, rng));
    const Tensor x = ad::parameter(random_matrix(12, 3, rng));
    const Tensor w = ad::constant(random_matrix(12, 3, rng));
    const auto r = gradient_check(
        [&] { return ad::sum(ad::mul(spectral_convolve(ctx, f, x), w)); }, {f.a, f.b, f.alpha, x});
    if (r.relative_error >= 1e-6)
      return "relative error " + std::to_string(r.relative_error);
    return std::string();
  });

  check("least_squares_oracle", [] {
    const auto grid = uniform_lambda_grid(64);
    std::vector<double> target(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) target[i] = std::sin(grid[i]);
    const auto p = fit_filter_least_squares(grid, target, 1, 2, 0.0);
    if (sse_and_r2(filter_response(p, grid), target).sse >= 1e-12)
      return std::string("sin(λ) not reproduced");
    return std::string();
  });

  check("predict_rows_normalized", [] {
    Rng rng(15);
    Graph g = random_graph(10, 0.4, rng);
    g.features = random_matrix(10, 3, rng);
    ModelConfig mc;
    mc.in_features = 3;
    mc.d_model = 8;
    mc.heads = 2;
    mc.num_classes = 3;
    mc.K = 2;
    mc.M = 4;
    const auto model = GrokFormerModel::init(mc, rng);
    const Matrix probs = predict(model, g, eig_sym(normalized_laplacian(g)));
    for (std::size_t i = 0; i < probs.rows(); ++i) {
      const auto row = probs.row(i);
      if (std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) > 1e-9)
        return std::string("probability row does not sum to 1");
    }
    return std::string();
  });

  return out;
}

}  // namespace grok
