#include "maplsim/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace maplsim {

namespace {

// log sum_{m != skip} exp(v[m]), stable
double lse_excluding(const double* v, int n, int skip) {
  double m = -1e300;
  for (int i = 0; i < n; ++i) {
    if (i != skip && v[i] > m) m = v[i];
  }
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    if (i != skip) s += std::exp(v[i] - m);
  }
  return m + std::log(s);
}

Mat normalized_rows(const Mat& xi) {
  Mat out(xi.rows, xi.cols);
  for (int k = 0; k < xi.rows; ++k) {
    const double n = norm2(xi.row_span(k));
    if (n == 0.0) throw std::domain_error("degenerate prototype");
    for (int j = 0; j < xi.cols; ++j) out.at(k, j) = xi.at(k, j) / n;
  }
  return out;
}

// chain rule through v_hat = v / ||v||: d_v += (d_vhat - <d_vhat, v_hat> v_hat) / ||v||
void normalize_backward_row(const double* raw, const double* hat, const double* d_hat,
                            int n, double* d_raw) {
  double nrm = 0.0;
  for (int j = 0; j < n; ++j) nrm += raw[j] * raw[j];
  nrm = std::sqrt(nrm);
  double proj = 0.0;
  for (int j = 0; j < n; ++j) proj += d_hat[j] * hat[j];
  for (int j = 0; j < n; ++j) d_raw[j] += (d_hat[j] - proj * hat[j]) / nrm;
}

void check_labels(const std::vector<int>& labels, int rows, int num_classes) {
  if (static_cast<int>(labels.size()) != rows)
    throw std::invalid_argument("labels size does not match batch rows");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("label out of range");
  }
}

}  // namespace

void ViewBatch::validate() const {
  const int rows = projections.rows;
  if (latents.rows != rows || logits.rows != rows ||
      static_cast<int>(labels.size()) != rows)
    throw std::invalid_argument("ViewBatch: inconsistent row counts");
  for (int q = 0; q < rows; ++q) {
    if (std::fabs(norm2(projections.row_span(q)) - 1.0) > 1e-9)
      throw std::invalid_argument("ViewBatch: projection row is not unit norm");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.cols)
      throw std::invalid_argument("ViewBatch: label out of range");
  }
}

double l_cont_grad(const Mat& phat, const std::vector<int>& labels, double tau,
                   Mat& d_phat) {
  const int rows = phat.rows;
  if (rows < 2) throw std::invalid_argument("contrastive loss needs at least 2 rows");
  if (tau <= 0.0) throw std::invalid_argument("tau must be positive");

  Mat s;
  matmul_nt(phat, phat, s);
  for (auto& v : s.data) v /= tau;

  const bool want_grad = d_phat.rows == rows;
  Mat ds;
  if (want_grad) ds = Mat(rows, rows, 0.0);

  double loss = 0.0;
  for (int q = 0; q < rows; ++q) {
    int npos = 0;
    for (int r = 0; r < rows; ++r) {
      if (r != q && labels[r] == labels[q]) ++npos;
    }
    if (npos == 0) continue;  // no positive pair; row contributes nothing
    const double* sq = s.row(q);
    const double lse = lse_excluding(sq, rows, q);
    double pos_sum = 0.0;
    for (int r = 0; r < rows; ++r) {
      if (r != q && labels[r] == labels[q]) pos_sum += sq[r];
    }
    loss -= pos_sum / npos - lse;
    if (want_grad) {
      double* dsq = ds.row(q);
      for (int m = 0; m < rows; ++m) {
        if (m == q) continue;
        const double soft = std::exp(sq[m] - lse);
        const double pos = (labels[m] == labels[q]) ? 1.0 / npos : 0.0;
        dsq[m] = -(pos - soft);
      }
    }
  }

  if (want_grad) {
    // s is symmetric in phat: fold ds + ds^T before the matmul
    for (int q = 0; q < rows; ++q) {
      for (int m = q + 1; m < rows; ++m) {
        const double v = ds.at(q, m) + ds.at(m, q);
        ds.at(q, m) = v;
        ds.at(m, q) = v;
      }
      ds.at(q, q) = 0.0;
    }
    Mat dp;
    matmul_nn(ds, phat, dp);
    const double inv_tau = 1.0 / tau;
    for (std::size_t i = 0; i < dp.data.size(); ++i)
      d_phat.data[i] += dp.data[i] * inv_tau;
  }
  return loss;
}

double l_cont(const ViewBatch& vb, double tau) {
  Mat no_grad;
  return l_cont_grad(vb.projections, vb.labels, tau, no_grad);
}

double l_ce_grad(const Mat& logits, const std::vector<int>& labels, Mat& d_logits) {
  const int rows = logits.rows;
  const int k = logits.cols;
  check_labels(labels, rows, k);
  const bool want_grad = d_logits.rows == rows;
  const double inv = 1.0 / rows;
  double loss = 0.0;
  for (int q = 0; q < rows; ++q) {
    const Vec lsm = log_softmax(logits.row_span(q));
    loss -= lsm[labels[q]] * inv;
    if (want_grad) {
      double* dq = d_logits.row(q);
      for (int j = 0; j < k; ++j) {
        const double soft = std::exp(lsm[j]);
        dq[j] += (soft - (j == labels[q] ? 1.0 : 0.0)) * inv;
      }
    }
  }
  return loss;
}

double l_ce(const ViewBatch& vb) {
  Mat no_grad;
  return l_ce_grad(vb.logits, vb.labels, no_grad);
}

double l_proto_grad(const Mat& phat, const std::vector<int>& labels, const Mat& xi,
                    double tau, Mat& d_phat, Mat& d_xi) {
  const int rows = phat.rows;
  const int k = xi.rows;
  if (rows == 0) throw std::invalid_argument("empty batch");
  if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
  if (xi.cols != phat.cols) throw std::invalid_argument("prototype width mismatch");
  check_labels(labels, rows, k);

  const Mat xihat = normalized_rows(xi);
  Mat c;
  matmul_nt(phat, xihat, c);
  for (auto& v : c.data) v /= tau;

  const bool want_grad = d_phat.rows == rows && d_xi.rows == k;
  Mat dc;
  if (want_grad) dc = Mat(rows, k, 0.0);

  const double inv = 1.0 / rows;
  double loss = 0.0;
  for (int q = 0; q < rows; ++q) {
    const Vec lsm = log_softmax(c.row_span(q));
    loss -= lsm[labels[q]] * inv;
    if (want_grad) {
      double* dq = dc.row(q);
      for (int j = 0; j < k; ++j) {
        const double soft = std::exp(lsm[j]);
        dq[j] = (soft - (j == labels[q] ? 1.0 : 0.0)) * inv / tau;
      }
    }
  }

  if (want_grad) {
    Mat dp;
    matmul_nn(dc, xihat, dp);
    for (std::size_t i = 0; i < dp.data.size(); ++i) d_phat.data[i] += dp.data[i];
    Mat d_xihat;
    matmul_tn(dc, phat, d_xihat);
    for (int r = 0; r < k; ++r) {
      normalize_backward_row(xi.row(r), xihat.row(r), d_xihat.row(r), xi.cols,
                             d_xi.row(r));
    }
  }
  return loss;
}

double l_proto(const ViewBatch& vb, const Mat& xi, double tau) {
  Mat ng1, ng2;
  return l_proto_grad(vb.projections, vb.labels, xi, tau, ng1, ng2);
}

double l_uni_grad(const Mat& xi, Mat& d_xi) {
  const int k = xi.rows;
  const Mat xihat = normalized_rows(xi);
  Mat g;
  matmul_nt(xihat, xihat, g);
  double loss = 0.0;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a != b) loss += g.at(a, b);
    }
  }
  loss /= k;

  if (d_xi.rows == k) {
    Vec colsum(xi.cols, 0.0);
    for (int r = 0; r < k; ++r) {
      for (int j = 0; j < xi.cols; ++j) colsum[j] += xihat.at(r, j);
    }
    Vec d_hat(xi.cols);
    for (int r = 0; r < k; ++r) {
      for (int j = 0; j < xi.cols; ++j)
        d_hat[j] = 2.0 / k * (colsum[j] - xihat.at(r, j));
      normalize_backward_row(xi.row(r), xihat.row(r), d_hat.data(), xi.cols,
                             d_xi.row(r));
    }
  }
  return loss;
}

double l_uni(const Mat& xi) {
  Mat no_grad;
  return l_uni_grad(xi, no_grad);
}

LossTerms total_loss(const ViewBatch& vb, const Mat& xi, const LossConfig& cfg) {
  if (cfg.tau <= 0.0) throw std::invalid_argument("tau must be positive");
  vb.validate();
  LossTerms t;
  if (cfg.use_cont) t.cont = l_cont(vb, cfg.tau);
  if (cfg.use_ce) t.ce = l_ce(vb);
  if (cfg.use_proto) t.proto = l_proto(vb, xi, cfg.tau);
  if (cfg.use_uni) t.uni = l_uni(xi);
  t.total = t.cont + t.ce + t.proto + t.uni;
  return t;
}

}  // namespace maplsim
