#pragma once

#include <vector>

#include "maplsim/numkernels.hpp"

namespace maplsim {

// One training batch after the forward pass: 2B rows (two views per sample,
// first all a-views then all b-views), labels duplicated accordingly.
// `projections` rows must be l2-normalized.
struct ViewBatch {
  Mat projections;  // 2B x d_p, unit rows
  Mat latents;      // 2B x d_z
  Mat logits;       // 2B x K
  std::vector<int> labels;

  void validate() const;  // throws on shape/norm/label violations
};

struct LossConfig {
  bool use_cont = true;
  bool use_uni = true;
  bool use_proto = true;
  bool use_ce = true;
  double tau = 100.0;
};

struct LossTerms {
  double cont = 0.0;
  double ce = 0.0;
  double proto = 0.0;
  double uni = 0.0;
  double total = 0.0;
};

// Supervised sample-to-sample contrastive loss, summed over all rows.
// Positives for row q are the other rows with the same label.
double l_cont(const ViewBatch& vb, double tau);

// Cross-entropy on the logits, mean over rows.
double l_ce(const ViewBatch& vb);

// Sample-to-prototype contrastive loss, mean over rows. xi holds one
// prototype per class (K x d_p); prototypes are normalized internally.
double l_proto(const ViewBatch& vb, const Mat& xi, double tau);

// Mean pairwise prototype cosine over ordered pairs, (1/K) sum_{k != r}.
double l_uni(const Mat& xi);

// Sum of the enabled terms with unit weights.
LossTerms total_loss(const ViewBatch& vb, const Mat& xi, const LossConfig& cfg);

// Gradient companions. Each returns the loss value and accumulates (+=) into
// the given gradient buffers, which must be pre-sized and may carry prior
// contributions. d_phat is w.r.t. the normalized projections; d_xi is w.r.t.
// the raw (unnormalized) prototypes.
double l_cont_grad(const Mat& phat, const std::vector<int>& labels, double tau,
                   Mat& d_phat);
double l_ce_grad(const Mat& logits, const std::vector<int>& labels, Mat& d_logits);
double l_proto_grad(const Mat& phat, const std::vector<int>& labels, const Mat& xi,
                    double tau, Mat& d_phat, Mat& d_xi);
double l_uni_grad(const Mat& xi, Mat& d_xi);

}  // namespace maplsim
