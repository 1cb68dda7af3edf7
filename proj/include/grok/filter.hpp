#pragma once

// Fourier-series spectral filter over the powers λ¹…λᴷ of the Laplacian
// spectrum:
//
//   h(λ) = Σ_k α_k Σ_{m=0..M} ( a_km·cos(m·λᵏ) + b_km·sin(m·λᵏ) )
//
// plus the six reference filters used by the fitting benchmark and a
// closed-form least-squares fit of the same family.

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grok/linalg.hpp"
#include "grok/rng.hpp"
#include "grok/spectral.hpp"

namespace grok {

/// Coefficients of one filter. Rows of a and b are indexed by order k−1,
/// columns by frequency m = 0…M. b(k, 0) is structurally zero and never
/// trained, since sin(0·λᵏ) vanishes.
struct FourierFilterParams {
  std::size_t K = 1;
  std::size_t M = 1;
  Matrix a;                  // K × (M+1)
  Matrix b;                  // K × (M+1)
  std::vector<double> alpha;  // K

  static FourierFilterParams zeros(std::size_t K, std::size_t M) {
    if (K == 0) throw PreconditionError("FourierFilterParams: K must be positive");
    return {K, M, Matrix(K, M + 1), Matrix(K, M + 1), std::vector<double>(K, 0.0)};
  }

  /// a, b ~ U(−s, s) with s = 1/√(K(2M+1)); α_k = 1/K.
  static FourierFilterParams random(std::size_t K, std::size_t M, Rng& rng) {
    auto p = zeros(K, M);
    const double s = 1.0 / std::sqrt(static_cast<double>(K * (2 * M + 1)));
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t m = 0; m <= M; ++m) p.a(k, m) = rng.uniform(-s, s);
      for (std::size_t m = 1; m <= M; ++m) p.b(k, m) = rng.uniform(-s, s);
      p.alpha[k] = 1.0 / static_cast<double>(K);
    }
    return p;
  }

  void validate() const {
    if (K == 0 || a.rows() != K || b.rows() != K || a.cols() != M + 1 || b.cols() != M + 1 ||
        alpha.size() != K)
      throw PreconditionError("FourierFilterParams: inconsistent shapes");
    for (std::size_t k = 0; k < K; ++k)
      if (b(k, 0) != 0.0) throw PreconditionError("FourierFilterParams: b[k][0] must be zero");
    for (double v : alpha)
      if (!std::isfinite(v)) throw PreconditionError("FourierFilterParams: non-finite alpha");
    if (!all_finite(a) || !all_finite(b))
      throw PreconditionError("FourierFilterParams: non-finite coefficient");
  }
};

/// cos(m·λᵢᵏ) and sin(m·λᵢᵏ) for every order, eigenvalue, and frequency.
/// Evaluating or training a filter on a fixed spectrum only needs this table.
class FourierBasisTable {
 public:
  FourierBasisTable(std::span<const double> lambdas, std::size_t K, std::size_t M)
      : n_(lambdas.size()), K_(K), M_(M), cos_(K * n_ * (M + 1)), sin_(K * n_ * (M + 1)) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < n_; ++i) {
        const double lk = std::pow(lambdas[i], static_cast<double>(k + 1));
        for (std::size_t m = 0; m <= M; ++m) {
          cos_[index(k, i, m)] = std::cos(static_cast<double>(m) * lk);
          sin_[index(k, i, m)] = std::sin(static_cast<double>(m) * lk);
        }
      }
  }

  std::size_t n() const { return n_; }
  std::size_t K() const { return K_; }
  std::size_t M() const { return M_; }
  std::span<const double> cos_row(std::size_t k, std::size_t i) const {
    return {cos_.data() + index(k, i, 0), M_ + 1};
  }
  std::span<const double> sin_row(std::size_t k, std::size_t i) const {
    return {sin_.data() + index(k, i, 0), M_ + 1};
  }

  /// b_k(λᵢ) for every i, with order index k zero-based.
  std::vector<double> basis(std::size_t k, std::span<const double> a_row,
                            std::span<const double> b_row) const {
    std::vector<double> out(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto c = cos_row(k, i);
      const auto s = sin_row(k, i);
      double acc = 0.0;
      for (std::size_t m = 0; m <= M_; ++m) acc += c[m] * a_row[m] + s[m] * b_row[m];
      out[i] = acc;
    }
    return out;
  }

  std::vector<double> response(const FourierFilterParams& p) const {
    if (p.K != K_ || p.M != M_) throw PreconditionError("FourierBasisTable: K/M mismatch");
    std::vector<double> h(n_, 0.0);
    for (std::size_t k = 0; k < K_; ++k) {
      const auto bk = basis(k, p.a.row(k), p.b.row(k));
      for (std::size_t i = 0; i < n_; ++i) h[i] += p.alpha[k] * bk[i];
    }
    return h;
  }

 private:
  std::size_t index(std::size_t k, std::size_t i, std::size_t m) const {
    return (k * n_ + i) * (M_ + 1) + m;
  }

  std::size_t n_, K_, M_;
  std::vector<double> cos_, sin_;
};

/// b_k(λ) for one order (k is 1-based, as in λᵏ).
inline std::vector<double> basis_response(std::size_t k, std::span<const double> a_row,
                                          std::span<const double> b_row,
                                          std::span<const double> lambdas) {
  if (k == 0) throw PreconditionError("basis_response: order k starts at 1");
  if (a_row.size() != b_row.size()) throw PreconditionError("basis_response: row size mismatch");
  std::vector<double> out(lambdas.size(), 0.0);
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const double lk = std::pow(lambdas[i], static_cast<double>(k));
    double acc = 0.0;
    for (std::size_t m = 0; m < a_row.size(); ++m) {
      const double arg = static_cast<double>(m) * lk;
      acc += std::cos(arg) * a_row[m] + std::sin(arg) * b_row[m];
    }
    out[i] = acc;
  }
  return out;
}

/// h(λ) = Σ_k α_k b_k(λ).
inline std::vector<double> filter_response(const FourierFilterParams& p,
                                           std::span<const double> lambdas) {
  std::vector<double> h(lambdas.size(), 0.0);
  for (std::size_t k = 0; k < p.K; ++k) {
    const auto bk = basis_response(k + 1, p.a.row(k), p.b.row(k), lambdas);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += p.alpha[k] * bk[i];
  }
  return h;
}

/// U·(h ⊙ (Uᵀ·X)) for an arbitrary response vector h over the kept spectrum.
inline Matrix convolve_with_response(const SpectralDecomposition& d, std::span<const double> h,
                                     const Matrix& x) {
  if (h.size() != d.size()) throw PreconditionError("convolve: response length != spectrum size");
  Matrix xhat = gft(d, x);
  for (std::size_t i = 0; i < xhat.rows(); ++i)
    for (double& v : xhat.row(i)) v *= h[i];
  return igft(d, xhat);
}

/// X_F = U·diag(h(λ))·Uᵀ·X, evaluated right to left so the N×N filter matrix
/// is never formed.
inline Matrix spectral_convolve(const SpectralDecomposition& d, const FourierFilterParams& p,
                                const Matrix& x) {
  if (x.rows() != d.full_size)
    throw PreconditionError("spectral_convolve: signal has " + std::to_string(x.rows()) +
                            " rows, expected " + std::to_string(d.full_size));
  return convolve_with_response(d, filter_response(p, d.eigenvalues), x);
}

// ---------------------------------------------------------------------------
// Reference filters.

enum class PredefinedFilter { low_pass, high_pass, band_pass, band_rejection, comb, low_comb };

inline constexpr std::array<PredefinedFilter, 6> kAllPredefinedFilters = {
    PredefinedFilter::low_pass,       PredefinedFilter::high_pass, PredefinedFilter::band_pass,
    PredefinedFilter::band_rejection, PredefinedFilter::comb,      PredefinedFilter::low_comb};

inline std::string_view filter_name(PredefinedFilter f) {
  switch (f) {
    case PredefinedFilter::low_pass: return "low_pass";
    case PredefinedFilter::high_pass: return "high_pass";
    case PredefinedFilter::band_pass: return "band_pass";
    case PredefinedFilter::band_rejection: return "band_rejection";
    case PredefinedFilter::comb: return "comb";
    case PredefinedFilter::low_comb: return "low_comb";
  }
  return "?";
}

inline PredefinedFilter parse_filter(std::string_view name) {
  for (auto f : kAllPredefinedFilters)
    if (filter_name(f) == name) return f;
  throw PreconditionError("unknown filter '" + std::string(name) +
                          "' (expected low_pass, high_pass, band_pass, band_rejection, comb, "
                          "low_comb)");
}

inline double predefined_value(PredefinedFilter f, double x) {
  using std::numbers::pi;
  switch (f) {
    case PredefinedFilter::low_pass: return std::exp(-10.0 * x * x);
    case PredefinedFilter::high_pass: return 1.0 - std::exp(-10.0 * x * x);
    case PredefinedFilter::band_pass: return std::exp(-10.0 * (x - 1.0) * (x - 1.0));
    case PredefinedFilter::band_rejection: return 1.0 - std::exp(-10.0 * (x - 1.0) * (x - 1.0));
    case PredefinedFilter::comb: return std::abs(std::sin(pi * x));
    case PredefinedFilter::low_comb:
      // Segments [0, 0.5], (0.5, 1), [1, 2].
      if (x <= 0.5) return 1.0;
      if (x < 1.0) return std::abs(std::sin(pi * x));
      return std::abs(std::sin(2.0 * pi * x));
  }
  return 0.0;
}

inline std::vector<double> predefined_response(PredefinedFilter f, std::span<const double> lambdas) {
  std::vector<double> out(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) out[i] = predefined_value(f, lambdas[i]);
  return out;
}

inline Matrix apply_predefined_filter(const SpectralDecomposition& d, PredefinedFilter f,
                                      const Matrix& x) {
  if (!d.is_full()) throw PreconditionError("apply_predefined_filter: needs a full decomposition");
  if (x.rows() != d.full_size) throw PreconditionError("apply_predefined_filter: row mismatch");
  return convolve_with_response(d, predefined_response(f, d.eigenvalues), x);
}

// ---------------------------------------------------------------------------
// Least-squares oracle. With α fixed to ones, h is linear in the combined
// coefficients c_km, so the best fit of the whole family is a linear solve.

/// Design matrix columns per order: cos(m·λᵏ) for m = 0…M, then sin(m·λᵏ) for m = 1…M.
inline Matrix fourier_design_matrix(std::span<const double> lambdas, std::size_t K, std::size_t M) {
  const std::size_t per_order = 2 * M + 1;
  Matrix design(lambdas.size(), K * per_order);
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double lk = std::pow(lambdas[i], static_cast<double>(k + 1));
      const std::size_t base = k * per_order;
      for (std::size_t m = 0; m <= M; ++m) design(i, base + m) = std::cos(static_cast<double>(m) * lk);
      for (std::size_t m = 1; m <= M; ++m)
        design(i, base + M + m) = std::sin(static_cast<double>(m) * lk);
    }
  return design;
}

/// Minimizes Σ_i wᵢ·(h(λᵢ) − targetᵢ)² + ridge·‖c‖². Empty weights mean all ones.
inline FourierFilterParams fit_filter_least_squares(std::span<const double> lambdas,
                                                    std::span<const double> target, std::size_t K,
                                                    std::size_t M, double ridge = 1e-8,
                                                    std::span<const double> weights = {}) {
  if (lambdas.empty()) throw PreconditionError("fit_filter_least_squares: no sample points");
  if (target.size() != lambdas.size())
    throw PreconditionError("fit_filter_least_squares: target length mismatch");
  if (!weights.empty() && weights.size() != lambdas.size())
    throw PreconditionError("fit_filter_least_squares: weight length mismatch");
  Matrix design = fourier_design_matrix(lambdas, K, M);
  std::vector<double> rhs(target.begin(), target.end());
  if (!weights.empty()) {
    for (std::size_t i = 0; i < design.rows(); ++i) {
      if (weights[i] < 0) throw PreconditionError("fit_filter_least_squares: negative weight");
      const double s = std::sqrt(weights[i]);
      for (double& v : design.row(i)) v *= s;
      rhs[i] *= s;
    }
  }
  const auto c = least_squares(design, rhs, ridge);
  auto p = FourierFilterParams::zeros(K, M);
  const std::size_t per_order = 2 * M + 1;
  for (std::size_t k = 0; k < K; ++k) {
    p.alpha[k] = 1.0;
    for (std::size_t m = 0; m <= M; ++m) p.a(k, m) = c[k * per_order + m];
    for (std::size_t m = 1; m <= M; ++m) p.b(k, m) = c[k * per_order + M + m];
  }
  return p;
}

struct FitMetrics {
  double sse = 0.0;
  std::optional<double> r2;  // empty when the target is constant
};

/// R² uses one global mean over all entries.
inline FitMetrics sse_and_r2(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw PreconditionError("sse_and_r2: shape mismatch");
  if (target.empty()) throw PreconditionError("sse_and_r2: empty input");
  double mean = 0.0;
  for (double t : target) mean += t;
  mean /= static_cast<double>(target.size());
  FitMetrics m;
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double e = predicted[i] - target[i];
    m.sse += e * e;
    total += (target[i] - mean) * (target[i] - mean);
  }
  if (total > 0.0) m.r2 = 1.0 - m.sse / total;
  return m;
}

inline FitMetrics sse_and_r2(const Matrix& predicted, const Matrix& target) {
  if (!predicted.same_shape(target)) throw PreconditionError("sse_and_r2: shape mismatch");
  return sse_and_r2(std::span<const double>(predicted.values()),
                    std::span<const double>(target.values()));
}

// ---------------------------------------------------------------------------
// Text formats.

/// `points` uniform samples on [0, 2], endpoints included.
inline std::vector<double> uniform_lambda_grid(std::size_t points) {
  if (points < 2) throw PreconditionError("uniform_lambda_grid: need at least 2 points");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = 2.0 * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

inline void write_response_csv(std::ostream& out, const FourierFilterParams& p,
                               std::size_t grid_points = 512) {
  const auto grid = uniform_lambda_grid(grid_points);
  const auto h = filter_response(p, grid);
  out << "lambda,response\n" << std::setprecision(17);
  for (std::size_t i = 0; i < grid.size(); ++i) out << grid[i] << ',' << h[i] << '\n';
}

/// "GROKFILT v1 K M", then the α row, the K rows of a, the K rows of b.
inline void write_filter_params(std::ostream& out, const FourierFilterParams& p) {
  out << "GROKFILT v1 " << p.K << ' ' << p.M << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < p.K; ++k) out << (k ? " " : "") << p.alpha[k];
  out << '\n';
  for (const Matrix* m : {&p.a, &p.b})
    for (std::size_t k = 0; k < p.K; ++k) {
      for (std::size_t j = 0; j <= p.M; ++j) out << (j ? " " : "") << (*m)(k, j);
      out << '\n';
    }
}

inline FourierFilterParams read_filter_params(std::istream& in) {
  std::string magic, version;
  std::size_t K = 0, M = 0;
  if (!(in >> magic >> version >> K >> M) || magic != "GROKFILT" || version != "v1" || K == 0)
    throw IoError("not a GROKFILT v1 stream");
  auto p = FourierFilterParams::zeros(K, M);
  for (auto& v : p.alpha)
    if (!(in >> v)) throw IoError("GROKFILT: truncated alpha");
  for (Matrix* m : {&p.a, &p.b})
    for (auto& v : m->values())
      if (!(in >> v)) throw IoError("GROKFILT: truncated coefficients");
  p.validate();
  return p;
}

}  // namespace grok
