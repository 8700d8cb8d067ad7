#pragma once

#include <span>
#include <vector>

namespace maplsim {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0);

  double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const {
    return data.data() + static_cast<std::size_t>(i) * cols;
  }
  std::span<double> row_span(int i) { return {row(i), static_cast<std::size_t>(cols)}; }
  std::span<const double> row_span(int i) const {
    return {row(i), static_cast<std::size_t>(cols)};
  }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  void fill(double v);
  bool is_finite() const;
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
bool all_finite(std::span<const double> v);

// cosine similarity, clamped to [-1, 1]; throws on a zero-norm input
double cosine(std::span<const double> a, std::span<const double> b);

Vec l2_normalize(std::span<const double> v);

// numerically stable: out[i] = v[i] - max(v) - log sum exp(v - max)
Vec log_softmax(std::span<const double> v);

// Euclidean projection onto {x : x >= 0, sum x = 1} (Condat's fast algorithm)
Vec project_to_simplex(std::span<const double> v);

// out = a * b^T  with a (m x k), b (n x k)
void matmul_nt(const Mat& a, const Mat& b, Mat& out);
// out = a * b    with a (m x k), b (k x n)
void matmul_nn(const Mat& a, const Mat& b, Mat& out);
// out = a^T * b  with a (k x m), b (k x n)
void matmul_tn(const Mat& a, const Mat& b, Mat& out);

}  // namespace maplsim
