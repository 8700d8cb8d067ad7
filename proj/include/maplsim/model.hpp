#pragma once

#include <array>
#include <string>
#include <vector>

#include "maplsim/losses.hpp"
#include "maplsim/numkernels.hpp"
#include "maplsim/rng.hpp"

namespace maplsim {

struct ArchSpec {
  std::vector<int> hidden_sizes;  // extractor hidden widths; may be empty
  int input_dim = 0;
  int latent_dim = 0;
  int proj_dim = 0;
  int num_classes = 0;

  void validate() const;  // throws; requires latent_dim == proj_dim
};

// Affine layer, weight stored out x in.
struct Layer {
  Mat w;
  Vec b;
};

// Per-client model: heterogeneous extractor (ReLU between layers, linear
// output to the latent space), 2-layer projector (ReLU hidden, linear out),
// and a single affine classifier shared in shape across all clients.
struct ClientModel {
  ArchSpec arch;
  std::vector<Layer> extractor;
  std::array<Layer, 2> projector;
  Layer classifier;
};

struct GradientBundle {
  std::vector<Layer> d_extractor;
  std::array<Layer, 2> d_projector;
  Layer d_classifier;
  Mat d_xi;
};

struct ForwardOut {
  Vec z;
  Vec p;
  Vec logits;
};

// Raw two-view input rows (2B x d) with labels repeated per view.
struct TrainBatch {
  Mat x;
  std::vector<int> labels;
};

struct BackwardOut {
  LossTerms terms;
  GradientBundle grads;
};

ArchSpec sample_arch(int pool_index, int input_dim, int latent_dim, int proj_dim,
                     int num_classes);
int arch_pool_size();

ClientModel init_model(const ArchSpec& arch, Rng& rng);
Mat init_prototypes(int num_classes, int proj_dim, Rng& rng);

ForwardOut forward_features(const ClientModel& m, std::span<const double> x);

// Forward both views, evaluate the configured loss terms, and return exact
// gradients w.r.t. all model parameters and the prototypes.
BackwardOut backward(const ClientModel& m, const TrainBatch& batch, const Mat& xi,
                     const LossConfig& cfg);

GradientBundle zero_gradients(const ClientModel& m, const Mat& xi);

// Flat views over every parameter tensor, in a fixed order (extractor layers,
// projector layers, classifier; weights then bias per layer).
std::vector<Mat*> weight_tensors(ClientModel& m);
std::vector<Vec*> bias_tensors(ClientModel& m);

// Checkpoint: JSON header describing shapes followed by the flat float64 data.
void save_checkpoint(const ClientModel& m, const Mat& xi, const std::string& path);
std::pair<ClientModel, Mat> load_checkpoint(const std::string& path);

}  // namespace maplsim
