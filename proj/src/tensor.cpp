#include "casif/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace casif {

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.rows());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) {
        dst[j] += aik * src[j];
      }
    }
  }
  return out;
}

void add_matmul_at_b(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    add_outer(a.row(n), b.row(n), out);
  }
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.cols());
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out(i, j) = dot(a.row(i), b.row(j));
    }
  }
  return out;
}

Vector vecmat(std::span<const double> x, const Matrix& w) {
  assert(x.size() == w.rows());
  Vector y(w.cols(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    axpy(x[k], w.row(k), y);
  }
  return y;
}

Vector matvec(const Matrix& w, std::span<const double> x) {
  assert(x.size() == w.cols());
  Vector y(w.rows(), 0.0);
  for (std::size_t k = 0; k < w.rows(); ++k) {
    y[k] = dot(w.row(k), x);
  }
  return y;
}

void add_outer(std::span<const double> x, std::span<const double> y, Matrix& out) {
  assert(out.rows() == x.size() && out.cols() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) {
      axpy(x[i], y, out.row(i));
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] += alpha * x[i];
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace casif
