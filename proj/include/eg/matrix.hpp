#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace eg {

// Dense row-major matrix of doubles. Every value in the library travels as one of these.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  std::vector<std::vector<double>> to_rows() const;

  bool all_finite() const noexcept;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

// Plain (untaped) arithmetic. Shape mismatches throw DimensionError.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix select_rows(const Matrix& a, std::span<const std::size_t> rows);
Matrix vstack(const Matrix& top, const Matrix& bottom);

double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Row-wise softmax with per-row max subtraction.
Matrix row_softmax(const Matrix& a);

// Pairwise cosine similarity between the rows of a and the rows of b.
// Throws DegenerateVectorError when a row norm is at or below 1e-12.
Matrix cosine_similarity(const Matrix& a, const Matrix& b);

// Pairwise squared Euclidean distances between rows.
Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b);

// exp(-||a_i - b_j||^2 / (2 sigma^2)). Throws ParameterError for sigma <= 0.
Matrix gaussian_kernel(const Matrix& a, const Matrix& b, double sigma);

// Scales every row to unit Euclidean norm; zero rows throw DegenerateVectorError.
Matrix normalize_rows(const Matrix& a);

inline constexpr double kNormEpsilon = 1e-12;

}  // namespace eg
