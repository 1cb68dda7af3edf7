#pragma once

// Dense row-major matrices and the handful of kernels the rest of the
// library needs. All reals are double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace grok {

/// Violated caller contract (bad shape, bad index, bad argument).
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed (non-convergence, singular system, NaN).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File missing, unreadable, or malformed.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw PreconditionError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  /// Column vector from values.
  static Matrix column(std::span<const double> v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data_.begin());
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix& o) const = default;

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

 private:
  void check_same(const Matrix& o, const char* what) const {
    if (!same_shape(o))
      throw PreconditionError(std::string("Matrix ") + what + ": shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Worker count: GROK_THREADS if set and positive, else hardware concurrency.
inline unsigned thread_count() {
  if (const char* env = std::getenv("GROK_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, n). Each index must touch disjoint memory; the
/// result is then independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_per_thread = 16) {
  const std::size_t workers =
      std::min<std::size_t>(thread_count(), std::max<std::size_t>(1, n / min_per_thread));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn, &err = errors[w]] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// C = A·B. Rows of C are computed independently, in a fixed summation order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw PreconditionError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                            std::to_string(b.rows()));
  Matrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  auto row_kernel = [&](std::size_t i) {
    double* out = c.data() + i * n;
    const double* arow = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = arow[k];
      if (s == 0.0) continue;
      const double* brow = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += s * brow[j];
    }
  };
  if (a.rows() * inner * n > (1u << 20))
    parallel_for(a.rows(), row_kernel);
  else
    for (std::size_t i = 0; i < a.rows(); ++i) row_kernel(i);
  return c;
}

/// C = Aᵀ·B without materializing Aᵀ.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw PreconditionError("matmul_tn: row counts differ");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = arow[i];
      if (s == 0.0) continue;
      double* out = c.data() + i * c.cols();
      for (std::size_t j = 0; j < brow.size(); ++j) out[j] += s * brow[j];
    }
  }
  return c;
}

/// C = A·Bᵀ.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw PreconditionError("matmul_nt: column counts differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

inline double max_abs(const Matrix& m) {
  double r = 0.0;
  for (double v : m.values()) r = std::max(r, std::abs(v));
  return r;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw PreconditionError("max_abs_diff: shape mismatch");
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

inline double frobenius(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

/// Solves min ‖A·x − y‖² + ridge·‖x‖² by Householder QR on the stacked
/// system [A; √ridge·I]. Throws NumericalError if R has a negligible pivot.
inline std::vector<double> least_squares(const Matrix& a, std::span<const double> y, double ridge) {
  if (a.rows() != y.size()) throw PreconditionError("least_squares: rhs length mismatch");
  if (ridge < 0.0) throw PreconditionError("least_squares: ridge must be >= 0");
  const std::size_t p = a.cols();
  const std::size_t m = a.rows() + (ridge > 0.0 ? p : 0);
  if (m < p)
    throw NumericalError("least_squares: underdetermined system with ridge=0; use ridge > 0");

  // Column-major working copy so Householder reflections stream over columns.
  std::vector<double> w(m * p, 0.0);
  std::vector<double> rhs(m, 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < p; ++j) w[j * m + i] = a(i, j);
    rhs[i] = y[i];
  }
  if (ridge > 0.0) {
    const double r = std::sqrt(ridge);
    for (std::size_t j = 0; j < p; ++j) w[j * m + a.rows() + j] = r;
  }

  double col_scale = 0.0;
  for (double v : w) col_scale = std::max(col_scale, std::abs(v));
  std::vector<double> diag(p);
  for (std::size_t k = 0; k < p; ++k) {
    double* col = w.data() + k * m;
    double norm = 0.0;
    for (std::size_t i = k; i < m; ++i) norm += col[i] * col[i];
    norm = std::sqrt(norm);
    if (norm <= 1e-13 * col_scale * std::sqrt(static_cast<double>(m)))
      throw NumericalError("least_squares: rank-deficient design matrix at column " +
                           std::to_string(k) + "; use ridge > 0");
    const double alpha = col[k] > 0 ? -norm : norm;
    col[k] -= alpha;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < m; ++i) vnorm2 += col[i] * col[i];
    // Apply H = I − 2vvᵀ/(vᵀv) to trailing columns and the rhs.
    for (std::size_t j = k + 1; j < p; ++j) {
      double* cj = w.data() + j * m;
      double dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += col[i] * cj[i];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < m; ++i) cj[i] -= f * col[i];
    }
    double dot = 0.0;
    for (std::size_t i = k; i < m; ++i) dot += col[i] * rhs[i];
    const double f = 2.0 * dot / vnorm2;
    for (std::size_t i = k; i < m; ++i) rhs[i] -= f * col[i];
    diag[k] = alpha;
  }

  double rmax = 0.0;
  for (double d : diag) rmax = std::max(rmax, std::abs(d));
  std::vector<double> x(p);
  for (std::size_t kk = p; kk-- > 0;) {
    if (std::abs(diag[kk]) <= 1e-12 * rmax)
      throw NumericalError("least_squares: rank-deficient design matrix; use ridge > 0");
    double s = rhs[kk];
    for (std::size_t j = kk + 1; j < p; ++j) s -= w[j * m + kk] * x[j];
    x[kk] = s / diag[kk];
  }
  return x;
}

}  // namespace grok
