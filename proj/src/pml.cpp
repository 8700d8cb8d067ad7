#include "maplsim/pml.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace maplsim {

namespace {

void adam_update(std::span<double> p, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const OptimizerConfig& cfg, double bc1,
                 double bc2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void augment_into(std::span<const double> x, const AugmentConfig& cfg, Rng& rng,
                  double* out) {
  for (std::size_t j = 0; j < x.size(); ++j) {
    double v = x[j];
    if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
    if (cfg.dropout_p > 0.0 && rng.uniform() < cfg.dropout_p) v = 0.0;
    out[j] = v;
  }
}

}  // namespace

void AugmentConfig::validate() const {
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("dropout_p must be in [0, 1)");
  if (noise_sigma == 0.0 && dropout_p == 0.0)
    throw std::invalid_argument("augmentation must be stochastic: set noise_sigma or dropout_p");
}

std::pair<Vec, Vec> make_views(std::span<const double> x, const AugmentConfig& cfg,
                               Rng& rng) {
  cfg.validate();
  Vec a(x.size());
  Vec b(x.size());
  augment_into(x, cfg, rng, a.data());
  augment_into(x, cfg, rng, b.data());
  return {std::move(a), std::move(b)};
}

AdamState::AdamState(const ClientModel& m, const Mat& xi, const OptimizerConfig& cfg)
    : cfg_(cfg), m_(zero_gradients(m, xi)), v_(zero_gradients(m, xi)) {}

void AdamState::apply(ClientModel& m, Mat& xi, const GradientBundle& g) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (std::size_t l = 0; l < m.extractor.size(); ++l) {
    adam_update(m.extractor[l].w.data, g.d_extractor[l].w.data,
                m_.d_extractor[l].w.data, v_.d_extractor[l].w.data, cfg_, bc1, bc2);
    adam_update(m.extractor[l].b, g.d_extractor[l].b, m_.d_extractor[l].b,
                v_.d_extractor[l].b, cfg_, bc1, bc2);
  }
  for (int i = 0; i < 2; ++i) {
    adam_update(m.projector[i].w.data, g.d_projector[i].w.data,
                m_.d_projector[i].w.data, v_.d_projector[i].w.data, cfg_, bc1, bc2);
    adam_update(m.projector[i].b, g.d_projector[i].b, m_.d_projector[i].b,
                v_.d_projector[i].b, cfg_, bc1, bc2);
  }
  adam_update(m.classifier.w.data, g.d_classifier.w.data, m_.d_classifier.w.data,
              v_.d_classifier.w.data, cfg_, bc1, bc2);
  adam_update(m.classifier.b, g.d_classifier.b, m_.d_classifier.b, v_.d_classifier.b,
              cfg_, bc1, bc2);
  adam_update(xi.data, g.d_xi.data, m_.d_xi.data, v_.d_xi.data, cfg_, bc1, bc2);
}

EpochStats pml_epoch(ClientModel& m, Mat& xi, const std::vector<Sample>& train,
                     const PmlConfig& cfg, AdamState& opt, Rng& rng) {
  if (train.empty()) throw std::invalid_argument("pml_epoch: empty dataset");
  if (cfg.batch_size <= 0) throw std::invalid_argument("pml_epoch: batch_size must be positive");
  cfg.augment.validate();

  const int n = static_cast<int>(train.size());
  const int d = m.arch.input_dim;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  EpochStats stats;
  LossTerms sum;
  for (int start = 0; start < n; start += cfg.batch_size) {
    const int bs = std::min(cfg.batch_size, n - start);
    TrainBatch batch;
    batch.x = Mat(2 * bs, d);
    batch.labels.resize(2 * bs);
    for (int i = 0; i < bs; ++i) {
      const Sample& s = train[order[start + i]];
      augment_into(s.x, cfg.augment, rng, batch.x.row(i));
      augment_into(s.x, cfg.augment, rng, batch.x.row(bs + i));
      batch.labels[i] = s.y;
      batch.labels[bs + i] = s.y;
    }
    BackwardOut bw;
    try {
      bw = backward(m, batch, xi, cfg.loss);
    } catch (const std::runtime_error& e) {
      std::ostringstream msg;
      msg << e.what() << " (batch " << stats.batches << ", terms so far: cont="
          << sum.cont << " ce=" << sum.ce << " proto=" << sum.proto
          << " uni=" << sum.uni << ")";
      throw std::runtime_error(msg.str());
    }
    opt.apply(m, xi, bw.grads);
    sum.cont += bw.terms.cont;
    sum.ce += bw.terms.ce;
    sum.proto += bw.terms.proto;
    sum.uni += bw.terms.uni;
    sum.total += bw.terms.total;
    ++stats.batches;
  }
  const double inv = 1.0 / stats.batches;
  stats.mean_terms.cont = sum.cont * inv;
  stats.mean_terms.ce = sum.ce * inv;
  stats.mean_terms.proto = sum.proto * inv;
  stats.mean_terms.uni = sum.uni * inv;
  stats.mean_terms.total = sum.total * inv;
  return stats;
}

}  // namespace maplsim
