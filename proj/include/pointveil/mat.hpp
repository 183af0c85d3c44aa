#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/rng.hpp"

namespace pointveil {

using Vec = std::vector<double>;

// Dense row-major matrix. A 1xN matrix doubles as a row vector throughout.
class Mat {
public:
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Mat row(const Vec& v) {
    Mat m(1, v.size());
    m.data = v;
    return m;
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// C += or = A * B
inline Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols == b.rows, errc::config, "matmul: inner dimensions differ");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    double* crow = c.data.data() + i * b.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// A * B^T
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  require(a.cols == b.cols, errc::config, "matmul_nt: inner dimensions differ");
  Mat c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      c(i, j) = s;
    }
  }
  return c;
}

// A^T * B
inline Mat matmul_tn(const Mat& a, const Mat& b) {
  require(a.rows == b.rows, errc::config, "matmul_tn: inner dimensions differ");
  Mat c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.data.data() + k * a.cols;
    const double* brow = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c.data.data() + i * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

// determinant by LU with partial pivoting; fine for the small square
// matrices used here (rotations, Jacobians of dim <= 32)
inline double det(Mat a) {
  require(a.rows == a.cols, errc::config, "det: matrix not square");
  const std::size_t n = a.rows;
  double d = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a(r, col)) > std::fabs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) return 0.0;
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(piv, j), a(col, j));
      d = -d;
    }
    d *= a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = a(r, col) / a(col, col);
      for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
    }
  }
  return d;
}

namespace detail {

// Householder QR; returns Q (n x n) and overwrites r with R.
inline void qr_decompose(const Mat& a, Mat& q, Mat& r) {
  const std::size_t n = a.rows;
  q = Mat::identity(n);
  r = a;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += r(i, k) * r(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    double alpha = r(k, k) > 0.0 ? -norm : norm;
    Vec v(n, 0.0);
    v[k] = r(k, k) - alpha;
    for (std::size_t i = k + 1; i < n; ++i) v[i] = r(i, k);
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) vnorm2 += v[i] * v[i];
    if (vnorm2 == 0.0) continue;
    // R <- (I - 2 v v^T / v^T v) R ; Q <- Q (I - 2 v v^T / v^T v)
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * r(i, j);
      double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) r(i, j) -= f * v[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = k; j < n; ++j) dot += q(i, j) * v[j];
      double f = 2.0 * dot / vnorm2;
      for (std::size_t j = k; j < n; ++j) q(i, j) -= f * v[j];
    }
  }
}

}  // namespace detail

// Haar-distributed proper rotation: QR of a standard-normal matrix with the
// sign convention that R's diagonal is positive; if det comes out -1 the
// last row is negated so every key is a pure rotation.
inline Mat random_orthogonal(std::size_t dim, std::uint64_t seed) {
  require(dim >= 1, errc::config, "random_orthogonal: dim must be >= 1");
  if (dim == 1) return Mat::identity(1);
  Rng rng(seed);
  Mat g(dim, dim);
  for (double& v : g.data) v = rng.gaussian();
  Mat q, r;
  detail::qr_decompose(g, q, r);
  for (std::size_t j = 0; j < dim; ++j)
    if (r(j, j) < 0.0)
      for (std::size_t i = 0; i < dim; ++i) q(i, j) = -q(i, j);
  if (det(q) < 0.0)
    for (std::size_t j = 0; j < dim; ++j) q(dim - 1, j) = -q(dim - 1, j);
  return q;
}

inline double orthogonality_defect(const Mat& r) {
  Mat rrt = matmul_nt(r, r);
  return max_abs_diff(rrt, Mat::identity(r.rows));
}

inline bool is_proper_rotation(const Mat& r, double tol = 1e-9) {
  if (r.rows != r.cols) return false;
  return orthogonality_defect(r) < tol && std::fabs(det(r) - 1.0) < tol;
}

}  // namespace pointveil
