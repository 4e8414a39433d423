#pragma once

// Dense double-precision vectors and matrices, plus the few differentiable
// primitives the loss terms are built from. Everything here is a pure
// function of its inputs.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace attrop {

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec(std::initializer_list<double> values) : data_(values) {}
  explicit Vec(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vec&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Mat identity(std::size_t n);
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Mat& m);

Vec matvec(const Mat& m, const Vec& v);
// mᵀ·v without materializing the transpose.
Vec matvec_transposed(const Mat& m, const Vec& v);
Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& m);

// LU factorization with partial pivoting. Throws SingularMatrixError when a
// pivot falls below kSingularPivot in magnitude.
inline constexpr double kSingularPivot = 1e-12;
Mat lu_invert(const Mat& m);

Vec add(const Vec& a, const Vec& b);
Vec subtract(const Vec& a, const Vec& b);
Vec scaled(const Vec& v, double alpha);
// y += alpha·x
void axpy(Vec& y, double alpha, const Vec& x);
// m += alpha·u·vᵀ
void add_outer(Mat& m, const Vec& u, const Vec& v, double alpha = 1.0);
double dot(const Vec& a, const Vec& b);
double norm(const Vec& v);

double euclidean_distance(const Vec& u, const Vec& v);

// Floor applied to the norm when forming unit directions, so coincident
// points give a zero gradient instead of NaN.
inline constexpr double kDistanceFloor = 1e-12;

// ∂‖u−v‖/∂u = (u−v)/‖u−v‖, and the zero vector when u = v.
Vec distance_gradient(const Vec& u, const Vec& v);
// r/‖r‖ with the same convention.
Vec unit_direction(const Vec& r);

struct CrossEntropy {
  double loss = 0.0;
  Vec grad;  // softmax(logits) − onehot(label)
};

CrossEntropy softmax_cross_entropy(const Vec& logits, std::size_t label);

double max_abs(const Mat& m);
bool all_finite(std::span<const double> values);

}  // namespace attrop
