#include "attrop/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "attrop/errors.hpp"

namespace attrop {

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Mat m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged row " + std::to_string(i));
    std::copy(row.begin(), row.end(), m.row(i).begin());
    ++i;
  }
  return m;
}

std::string shape_string(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Vec matvec(const Mat& m, const Vec& v) {
  if (m.cols() != v.size()) {
    throw ShapeError("matvec: matrix " + shape_string(m) + " times vector of length " +
                     std::to_string(v.size()));
  }
  Vec out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

Vec matvec_transposed(const Mat& m, const Vec& v) {
  if (m.rows() != v.size()) {
    throw ShapeError("matvec_transposed: matrix " + shape_string(m) + " (transposed) times vector of length " +
                     std::to_string(v.size()));
  }
  Vec out(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    const double s = v[r];
    if (s == 0.0) continue;
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * s;
  }
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a) + " times " + shape_string(b));
  }
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += s * src[j];
    }
  }
  return out;
}

Mat transpose(const Mat& m) {
  Mat t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

Mat lu_invert(const Mat& m) {
  if (!m.square()) throw ShapeError("lu_invert: matrix is " + shape_string(m) + ", not square");
  const std::size_t n = m.rows();
  Mat lu = m;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu(k, k));
    for (std::size_t r = k + 1; r < n; ++r) {
      if (std::abs(lu(r, k)) > best) {
        best = std::abs(lu(r, k));
        pivot = r;
      }
    }
    if (!(best >= kSingularPivot)) {
      throw SingularMatrixError("lu_invert: pivot " + std::to_string(k) + " has magnitude " +
                                std::to_string(best) + " (matrix " + shape_string(m) + ")");
    }
    if (pivot != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(pivot).begin());
      std::swap(perm[k], perm[pivot]);
    }
    const double diag = lu(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = lu(r, k) / diag;
      lu(r, k) = f;
      if (f == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) lu(r, c) -= f * lu(k, c);
    }
  }

  // Solve L·U·x = P·e_j for every column j.
  Mat inv(n, n);
  Vec x(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = perm[i] == j ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) acc -= lu(i, k) * x[k];
      x[i] = acc;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double acc = x[ii];
      for (std::size_t k = ii + 1; k < n; ++k) acc -= lu(ii, k) * x[k];
      x[ii] = acc / lu(ii, ii);
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = x[i];
  }
  return inv;
}

namespace {
void require_same_length(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
}
}  // namespace

Vec add(const Vec& a, const Vec& b) {
  require_same_length(a, b, "add");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec subtract(const Vec& a, const Vec& b) {
  require_same_length(a, b, "subtract");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec scaled(const Vec& v, double alpha) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = alpha * v[i];
  return out;
}

void axpy(Vec& y, double alpha, const Vec& x) {
  require_same_length(y, x, "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

void add_outer(Mat& m, const Vec& u, const Vec& v, double alpha) {
  if (m.rows() != u.size() || m.cols() != v.size()) {
    throw ShapeError("add_outer: matrix " + shape_string(m) + " vs outer product " +
                     std::to_string(u.size()) + "x" + std::to_string(v.size()));
  }
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double s = alpha * u[r];
    if (s == 0.0) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += s * v[c];
  }
}

double dot(const Vec& a, const Vec& b) {
  require_same_length(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

double euclidean_distance(const Vec& u, const Vec& v) {
  require_same_length(u, v, "euclidean_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

Vec unit_direction(const Vec& r) {
  const double n = norm(r);
  if (n == 0.0) return Vec(r.size());
  return scaled(r, 1.0 / std::max(n, kDistanceFloor));
}

Vec distance_gradient(const Vec& u, const Vec& v) { return unit_direction(subtract(u, v)); }

CrossEntropy softmax_cross_entropy(const Vec& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  CrossEntropy out;
  out.grad = Vec(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = std::exp(logits[i] - peak);
    total += out.grad[i];
  }
  out.loss = std::log(total) - (logits[label] - peak);
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] /= total;
  out.grad[label] -= 1.0;
  return out;
}

double max_abs(const Mat& m) {
  double best = 0.0;
  for (double x : m.span()) best = std::max(best, std::abs(x));
  return best;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace attrop
