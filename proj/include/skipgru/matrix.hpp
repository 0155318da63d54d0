#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace skipgru {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix zeros_like(const Matrix& other) { return Matrix(other.rows_, other.cols_); }
  /// Builds a column vector (n x 1) or, with as_row, a row vector (1 x n).
  static Matrix from_vector(std::span<const double> values, bool as_row = false);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double value);
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// y = A x
Vector matvec(const Matrix& a, std::span<const double> x);
/// y += A x
void matvec_add(const Matrix& a, std::span<const double> x, std::span<double> y);
/// y += A^T x
void matvec_t_add(const Matrix& a, std::span<const double> x, std::span<double> y);
/// A += scale * u v^T
void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v, double scale = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// Cosine similarity; returns 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector concat(std::span<const double> a, std::span<const double> b);
/// Copies the listed rows, in order.
Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);

}  // namespace skipgru
