#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace casif {

/// Dense row-major matrix of doubles. Vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  void fill(double value);
  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using Vector = std::vector<double>;

// Small kernels used by the model. Shapes are checked with assertions only.

/// out = a * b   (a: n x k, b: k x m)
Matrix matmul(const Matrix& a, const Matrix& b);
/// out += a^T * b (a: n x k, b: n x m, out: k x m)
void add_matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out);
/// out = a * b^T (a: n x k, b: m x k)
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

/// y = x * W for a row vector x (W: k x m).
Vector vecmat(std::span<const double> x, const Matrix& w);
/// y = W * x, i.e. x * W^T (W: k x m, x: m).
Vector matvec(const Matrix& w, std::span<const double> x);
/// out += x^T y (outer product accumulation).
void add_outer(std::span<const double> x, std::span<const double> y, Matrix& out);

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

double sigmoid(double x);

}  // namespace casif
