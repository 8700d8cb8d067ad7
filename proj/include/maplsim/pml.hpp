#pragma once

#include <utility>
#include <vector>

#include "maplsim/model.hpp"
#include "maplsim/rng.hpp"

namespace maplsim {

struct Sample {
  Vec x;
  int y = 0;
};

// Two stochastic views per sample: additive Gaussian noise, then independent
// coordinate dropout. At least one of the two must be active.
struct AugmentConfig {
  double noise_sigma = 0.1;
  double dropout_p = 0.2;

  void validate() const;
};

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments congruent with the model parameters and prototypes.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const ClientModel& m, const Mat& xi, const OptimizerConfig& cfg);

  void apply(ClientModel& m, Mat& xi, const GradientBundle& g);
  int step_count() const { return step_; }

 private:
  OptimizerConfig cfg_;
  GradientBundle m_;
  GradientBundle v_;
  int step_ = 0;
};

std::pair<Vec, Vec> make_views(std::span<const double> x, const AugmentConfig& cfg,
                               Rng& rng);

struct PmlConfig {
  int batch_size = 64;
  AugmentConfig augment;
  LossConfig loss;
};

struct EpochStats {
  LossTerms mean_terms;  // averaged over the batches of the epoch
  int batches = 0;
};

// One local epoch: reshuffle, then per minibatch make views, forward both,
// evaluate the total loss, and take one optimizer step on model + prototypes.
EpochStats pml_epoch(ClientModel& m, Mat& xi, const std::vector<Sample>& train,
                     const PmlConfig& cfg, AdamState& opt, Rng& rng);

}  // namespace maplsim
