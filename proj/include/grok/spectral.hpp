#pragma once

// Symmetric eigendecomposition (cyclic Jacobi), extremal truncation, the graph
// Fourier transform pair, and the on-disk decomposition cache.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grok/linalg.hpp"

namespace grok {

/// Eigenpairs of a symmetric matrix, ascending. Column i of eigenvectors
/// belongs to eigenvalues[i]. A truncated decomposition keeps full_size.
struct SpectralDecomposition {
  std::vector<double> eigenvalues;
  Matrix eigenvectors;  // full_size × n
  std::size_t full_size = 0;

  std::size_t size() const { return eigenvalues.size(); }
  bool is_full() const { return eigenvalues.size() == full_size; }
};

struct JacobiOptions {
  double relative_tolerance = 1e-12;  // stop when off(A) < tol·‖A‖_F
  int max_sweeps = 100;
};

namespace detail {

inline double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

struct Rotation {
  std::size_t p, q;
  double c, s;
};

// Round-robin (circle method) schedule: each round is a set of disjoint
// pairs, and every pair appears exactly once per sweep.
inline std::vector<std::vector<std::pair<std::size_t, std::size_t>>> tournament(std::size_t n) {
  const std::size_t players = n + (n % 2);
  std::vector<std::size_t> seat(players);
  std::iota(seat.begin(), seat.end(), 0);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rounds;
  for (std::size_t r = 0; r + 1 < players; ++r) {
    std::vector<std::pair<std::size_t, std::size_t>> round;
    for (std::size_t i = 0; i < players / 2; ++i) {
      std::size_t a = seat[i], b = seat[players - 1 - i];
      if (a >= n || b >= n) continue;  // bye
      round.emplace_back(std::min(a, b), std::max(a, b));
    }
    rounds.push_back(std::move(round));
    std::rotate(seat.begin() + 1, seat.end() - 1, seat.end());
  }
  return rounds;
}

// A ← A·J for the round's rotations, streamed row by row.
inline void apply_columns(Matrix& a, const std::vector<Rotation>& rots) {
  parallel_for(a.rows(), [&](std::size_t i) {
    double* row = a.data() + i * a.cols();
    for (const auto& r : rots) {
      const double x = row[r.p], y = row[r.q];
      row[r.p] = r.c * x - r.s * y;
      row[r.q] = r.s * x + r.c * y;
    }
  }, 64);
}

// A ← Jᵀ·A; each rotation touches its own pair of rows.
inline void apply_rows(Matrix& a, const std::vector<Rotation>& rots) {
  parallel_for(rots.size(), [&](std::size_t k) {
    const auto& r = rots[k];
    double* rp = a.data() + r.p * a.cols();
    double* rq = a.data() + r.q * a.cols();
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double x = rp[j], y = rq[j];
      rp[j] = r.c * x - r.s * y;
      rq[j] = r.s * x + r.c * y;
    }
  }, 8);
}

}  // namespace detail

/// Full eigendecomposition of a symmetric matrix by parallel-ordered cyclic
/// Jacobi. Rotation angles for a round are fixed before any update, then the
/// column pass and row pass run over disjoint data, so the output does not
/// depend on GROK_THREADS. Eigenvector signs: the largest-magnitude entry of
/// each column is positive (first such entry on ties).
inline SpectralDecomposition eig_sym(const Matrix& m, const JacobiOptions& opt = {}) {
  if (m.rows() != m.cols()) throw PreconditionError("eig_sym: matrix is not square");
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-10)
        throw PreconditionError("eig_sym: matrix is not symmetric at (" + std::to_string(i) +
                                ", " + std::to_string(j) + ")");
  if (!all_finite(m)) throw PreconditionError("eig_sym: non-finite entry");

  Matrix a = m;
  Matrix v = Matrix::identity(n);
  const double target = opt.relative_tolerance * frobenius(m);
  const double negligible = 1e-3 * target / std::max<double>(1.0, static_cast<double>(n));
  const auto rounds = detail::tournament(n);

  double off = detail::off_diagonal_norm(a);
  int sweep = 0;
  while (off >= target && off > 0.0) {
    if (sweep == opt.max_sweeps) {
      std::ostringstream msg;
      msg << "eig_sym: no convergence after " << opt.max_sweeps
          << " sweeps, off-diagonal residual " << off;
      throw NumericalError(msg.str());
    }
    for (const auto& round : rounds) {
      std::vector<detail::Rotation> rots;
      rots.reserve(round.size());
      for (const auto& [p, q] : round) {
        const double apq = a(p, q);
        if (std::abs(apq) <= negligible) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        rots.push_back({p, q, c, t * c});
      }
      if (rots.empty()) continue;
      detail::apply_columns(a, rots);
      detail::apply_rows(a, rots);
      detail::apply_columns(v, rots);
      for (const auto& r : rots) a(r.p, r.q) = a(r.q, r.p) = 0.0;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
    off = detail::off_diagonal_norm(a);
    ++sweep;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

  SpectralDecomposition d;
  d.full_size = n;
  d.eigenvalues.resize(n);
  d.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    d.eigenvalues[k] = a(src, src);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (std::abs(v(i, src)) > std::abs(v(arg, src))) arg = i;
    const double sign = v(arg, src) < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) d.eigenvectors(i, k) = sign * v(i, src);
  }
  return d;
}

/// Keeps the q/2 smallest and q/2 largest eigenpairs, still ascending.
inline SpectralDecomposition truncate(const SpectralDecomposition& d, std::size_t q) {
  const std::size_t n = d.size();
  if (q % 2 != 0 || q < 2 || q > n)
    throw PreconditionError("truncate: q must be even with 2 <= q <= " + std::to_string(n) +
                            ", got " + std::to_string(q));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < q / 2; ++i) keep.push_back(i);
  for (std::size_t i = n - q / 2; i < n; ++i) keep.push_back(i);

  SpectralDecomposition out;
  out.full_size = d.full_size;
  out.eigenvectors = Matrix(d.full_size, q);
  for (std::size_t k = 0; k < q; ++k) {
    out.eigenvalues.push_back(d.eigenvalues[keep[k]]);
    for (std::size_t i = 0; i < d.full_size; ++i) out.eigenvectors(i, k) = d.eigenvectors(i, keep[k]);
  }
  return out;
}

/// x̂ = Uᵀx.
inline Matrix gft(const SpectralDecomposition& d, const Matrix& x) {
  if (x.rows() != d.full_size)
    throw PreconditionError("gft: signal has " + std::to_string(x.rows()) + " rows, expected " +
                            std::to_string(d.full_size));
  return matmul_tn(d.eigenvectors, x);
}

/// x = U·x̂.
inline Matrix igft(const SpectralDecomposition& d, const Matrix& xhat) {
  if (xhat.rows() != d.size())
    throw PreconditionError("igft: spectrum has " + std::to_string(xhat.rows()) +
                            " rows, expected " + std::to_string(d.size()));
  return matmul(d.eigenvectors, xhat);
}

/// U·diag(values)·Uᵀ, built explicitly.
inline Matrix reconstruct(const SpectralDecomposition& d) {
  Matrix scaled = d.eigenvectors;
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t k = 0; k < scaled.cols(); ++k) scaled(i, k) *= d.eigenvalues[k];
  return matmul_nt(scaled, d.eigenvectors);
}

// ---------------------------------------------------------------------------
// Decomposition cache: "GROKSPEC v1 N n hash" header, then the n eigenvalues,
// then the N×n eigenvectors row-major, whitespace separated.

/// FNV-1a over the matrix shape and the IEEE bytes of every entry.
inline std::string content_hash(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  const std::uint64_t dims[2] = {m.rows(), m.cols()};
  mix(dims, sizeof dims);
  for (double v : m.values()) {
    const double canon = v == 0.0 ? 0.0 : v;  // -0.0 and 0.0 hash alike
    mix(&canon, sizeof canon);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_decomposition(const std::string& path, const SpectralDecomposition& d,
                                const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "GROKSPEC v1 " << d.full_size << ' ' << d.size() << ' ' << hash << '\n';
  out << std::setprecision(17);
  for (std::size_t k = 0; k < d.size(); ++k) out << (k ? " " : "") << d.eigenvalues[k];
  out << '\n';
  for (std::size_t i = 0; i < d.full_size; ++i) {
    for (std::size_t k = 0; k < d.size(); ++k) out << (k ? " " : "") << d.eigenvectors(i, k);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

struct CachedDecomposition {
  SpectralDecomposition decomposition;
  std::string hash;
};

inline CachedDecomposition read_decomposition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic, version;
  std::size_t full = 0, n = 0;
  CachedDecomposition c;
  if (!(in >> magic >> version >> full >> n >> c.hash) || magic != "GROKSPEC" || version != "v1")
    throw IoError(path + ": not a GROKSPEC v1 file");
  if (n > full) throw IoError(path + ": n exceeds N");
  c.decomposition.full_size = full;
  c.decomposition.eigenvalues.resize(n);
  for (auto& v : c.decomposition.eigenvalues)
    if (!(in >> v)) throw IoError(path + ": truncated eigenvalues");
  c.decomposition.eigenvectors = Matrix(full, n);
  for (auto& v : c.decomposition.eigenvectors.values())
    if (!(in >> v)) throw IoError(path + ": truncated eigenvectors");
  return c;
}

}  // namespace grok
