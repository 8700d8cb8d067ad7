#include "maplsim/numkernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maplsim {

Mat::Mat(int r, int c, double fill) : rows(r), cols(c) {
  if (r <= 0 || c <= 0) throw std::invalid_argument("Mat dimensions must be positive");
  data.assign(static_cast<std::size_t>(r) * c, fill);
}

void Mat::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Mat::is_finite() const { return all_finite(data); }

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  // scaled to survive very small or very large entries
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (double x : v) {
    const double t = x / m;
    s += t * t;
  }
  return m * std::sqrt(s);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw std::domain_error("degenerate vector");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

Vec l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (n == 0.0) throw std::domain_error("degenerate vector");
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

Vec log_softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_softmax: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  const double lse = m + std::log(s);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

Vec project_to_simplex(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n == 0) throw std::invalid_argument("project_to_simplex: empty input");
  constexpr double a = 1.0;

  // Condat's scan: maintain a candidate active set v with pivot rho, a
  // discard buffer v_tilde re-examined once at the end.
  std::vector<double> v;
  std::vector<double> v_tilde;
  v.reserve(n);
  v.push_back(y[0]);
  double rho = y[0] - a;
  for (std::size_t i = 1; i < n; ++i) {
    const double yn = y[i];
    if (yn > rho) {
      rho += (yn - rho) / static_cast<double>(v.size() + 1);
      if (rho > yn - a) {
        v.push_back(yn);
      } else {
        v_tilde.insert(v_tilde.end(), v.begin(), v.end());
        v.assign(1, yn);
        rho = yn - a;
      }
    }
  }
  for (double yn : v_tilde) {
    if (yn > rho) {
      v.push_back(yn);
      rho += (yn - rho) / static_cast<double>(v.size());
    }
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < v.size();) {
      if (v[i] <= rho) {
        rho += (rho - v[i]) / static_cast<double>(v.size() - 1);
        v[i] = v.back();
        v.pop_back();
        changed = true;
      } else {
        ++i;
      }
    }
  }
  const double tau = rho;

  Vec x(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::max(y[i] - tau, 0.0);
    sum += x[i];
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw std::logic_error("simplex projection failed");
  return x;
}

void matmul_nt(const Mat& a, const Mat& b, Mat& out) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dim mismatch");
  if (out.rows != a.rows || out.cols != b.rows) out = Mat(a.rows, b.rows);
  const int k = a.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += ai[t] * bj[t];
      oi[j] = s;
    }
  }
}

void matmul_nn(const Mat& a, const Mat& b, Mat& out) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul_nn: inner dim mismatch");
  if (out.rows != a.rows || out.cols != b.cols) out = Mat(a.rows, b.cols);
  out.fill(0.0);
  const int n = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (int t = 0; t < a.cols; ++t) {
      const double av = ai[t];
      if (av == 0.0) continue;
      const double* bt = b.row(t);
      for (int j = 0; j < n; ++j) oi[j] += av * bt[j];
    }
  }
}

void matmul_tn(const Mat& a, const Mat& b, Mat& out) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dim mismatch");
  if (out.rows != a.cols || out.cols != b.cols) out = Mat(a.cols, b.cols);
  out.fill(0.0);
  const int n = b.cols;
  for (int t = 0; t < a.rows; ++t) {
    const double* at = a.row(t);
    const double* bt = b.row(t);
    for (int i = 0; i < a.cols; ++i) {
      const double av = at[i];
      if (av == 0.0) continue;
      double* oi = out.row(i);
      for (int j = 0; j < n; ++j) oi[j] += av * bt[j];
    }
  }
}

}  // namespace maplsim
