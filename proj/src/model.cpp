#include "maplsim/model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace maplsim {

namespace {

constexpr char kCkptMagic[] = "MAPLCKPT1\n";

void affine_forward(const Mat& x, const Layer& l, Mat& out) {
  matmul_nt(x, l.w, out);
  for (int i = 0; i < out.rows; ++i) {
    double* oi = out.row(i);
    for (int j = 0; j < out.cols; ++j) oi[j] += l.b[j];
  }
}

// dY -> (dW += dY^T X, db += colsum dY, dX = dY W)
void affine_backward(const Mat& x, const Layer& l, const Mat& d_out, Layer& d_l,
                     Mat& d_x) {
  Mat dw;
  matmul_tn(d_out, x, dw);
  for (std::size_t i = 0; i < dw.data.size(); ++i) d_l.w.data[i] += dw.data[i];
  for (int i = 0; i < d_out.rows; ++i) {
    const double* di = d_out.row(i);
    for (int j = 0; j < d_out.cols; ++j) d_l.b[j] += di[j];
  }
  matmul_nn(d_out, l.w, d_x);
}

void relu_inplace(Mat& m) {
  for (auto& v : m.data) {
    if (v < 0.0) v = 0.0;
  }
}

void relu_backward_inplace(const Mat& pre, Mat& d) {
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (pre.data[i] <= 0.0) d.data[i] = 0.0;
  }
}

Layer init_layer(int out_dim, int in_dim, Rng& rng) {
  const double bound = std::sqrt(1.0 / in_dim);
  Layer l;
  l.w = Mat(out_dim, in_dim);
  for (auto& v : l.w.data) v = rng.uniform(-bound, bound);
  l.b.resize(out_dim);
  for (auto& v : l.b) v = rng.uniform(-bound, bound);
  return l;
}

Layer zero_like(const Layer& l) {
  Layer z;
  z.w = Mat(l.w.rows, l.w.cols, 0.0);
  z.b.assign(l.b.size(), 0.0);
  return z;
}

struct ForwardCache {
  std::vector<Mat> ext_pre;  // pre-activation per extractor layer
  std::vector<Mat> ext_act;  // inputs seen by each layer (act[0] = x)
  Mat z;
  Mat proj_pre;
  Mat proj_hidden;
  Mat p;
  Mat phat;
  Mat logits;
};

void forward_batch(const ClientModel& m, const Mat& x, ForwardCache& c,
                   bool need_phat) {
  const int layers = static_cast<int>(m.extractor.size());
  c.ext_pre.resize(layers);
  c.ext_act.resize(layers);
  const Mat* cur = &x;
  for (int l = 0; l < layers; ++l) {
    c.ext_act[l] = *cur;
    affine_forward(*cur, m.extractor[l], c.ext_pre[l]);
    if (l + 1 < layers) {
      relu_inplace(c.ext_pre[l]);
    }
    cur = &c.ext_pre[l];
  }
  c.z = *cur;

  affine_forward(c.z, m.projector[0], c.proj_pre);
  c.proj_hidden = c.proj_pre;
  relu_inplace(c.proj_hidden);
  affine_forward(c.proj_hidden, m.projector[1], c.p);
  affine_forward(c.z, m.classifier, c.logits);

  if (need_phat) {
    c.phat = Mat(c.p.rows, c.p.cols);
    for (int q = 0; q < c.p.rows; ++q) {
      const double n = norm2(c.p.row_span(q));
      if (n == 0.0) throw std::domain_error("degenerate projection row");
      for (int j = 0; j < c.p.cols; ++j) c.phat.at(q, j) = c.p.at(q, j) / n;
    }
  }
}

}  // namespace

void ArchSpec::validate() const {
  if (input_dim <= 0 || latent_dim <= 0 || proj_dim <= 0 || num_classes <= 0)
    throw std::invalid_argument("ArchSpec: dimensions must be positive");
  if (latent_dim != proj_dim)
    throw std::invalid_argument("ArchSpec: latent_dim must equal proj_dim");
  for (int h : hidden_sizes) {
    if (h <= 0) throw std::invalid_argument("ArchSpec: hidden sizes must be positive");
  }
}

int arch_pool_size() { return 4; }

ArchSpec sample_arch(int pool_index, int input_dim, int latent_dim, int proj_dim,
                     int num_classes) {
  static const std::vector<std::vector<int>> pool = {
      {64}, {128}, {32, 32}, {64, 32}};
  if (pool_index < 0 || pool_index >= arch_pool_size())
    throw std::out_of_range("sample_arch: pool index out of range");
  ArchSpec a;
  a.hidden_sizes = pool[pool_index];
  a.input_dim = input_dim;
  a.latent_dim = latent_dim;
  a.proj_dim = proj_dim;
  a.num_classes = num_classes;
  a.validate();
  return a;
}

ClientModel init_model(const ArchSpec& arch, Rng& rng) {
  arch.validate();
  ClientModel m;
  m.arch = arch;
  int in = arch.input_dim;
  for (int h : arch.hidden_sizes) {
    m.extractor.push_back(init_layer(h, in, rng));
    in = h;
  }
  m.extractor.push_back(init_layer(arch.latent_dim, in, rng));
  m.projector[0] = init_layer(arch.latent_dim, arch.latent_dim, rng);
  m.projector[1] = init_layer(arch.proj_dim, arch.latent_dim, rng);
  m.classifier = init_layer(arch.num_classes, arch.latent_dim, rng);
  return m;
}

Mat init_prototypes(int num_classes, int proj_dim, Rng& rng) {
  const double bound = std::sqrt(1.0 / proj_dim);
  Mat xi(num_classes, proj_dim);
  for (auto& v : xi.data) v = rng.uniform(-bound, bound);
  return xi;
}

ForwardOut forward_features(const ClientModel& m, std::span<const double> x) {
  if (static_cast<int>(x.size()) != m.arch.input_dim)
    throw std::invalid_argument("forward_features: input dimension mismatch");
  Mat xm(1, m.arch.input_dim);
  for (int j = 0; j < m.arch.input_dim; ++j) xm.at(0, j) = x[j];
  ForwardCache c;
  forward_batch(m, xm, c, /*need_phat=*/false);
  ForwardOut out;
  out.z.assign(c.z.row(0), c.z.row(0) + c.z.cols);
  out.p.assign(c.p.row(0), c.p.row(0) + c.p.cols);
  out.logits.assign(c.logits.row(0), c.logits.row(0) + c.logits.cols);
  return out;
}

GradientBundle zero_gradients(const ClientModel& m, const Mat& xi) {
  GradientBundle g;
  for (const auto& l : m.extractor) g.d_extractor.push_back(zero_like(l));
  g.d_projector[0] = zero_like(m.projector[0]);
  g.d_projector[1] = zero_like(m.projector[1]);
  g.d_classifier = zero_like(m.classifier);
  g.d_xi = Mat(xi.rows, xi.cols, 0.0);
  return g;
}

BackwardOut backward(const ClientModel& m, const TrainBatch& batch, const Mat& xi,
                     const LossConfig& cfg) {
  const int rows = batch.x.rows;
  if (rows == 0) throw std::invalid_argument("backward: empty batch");
  if (batch.x.cols != m.arch.input_dim)
    throw std::invalid_argument("backward: input dimension mismatch");
  if (xi.rows != m.arch.num_classes || xi.cols != m.arch.proj_dim)
    throw std::invalid_argument("backward: prototype shape mismatch");

  ForwardCache c;
  const bool need_phat = cfg.use_cont || cfg.use_proto;
  forward_batch(m, batch.x, c, need_phat);

  BackwardOut out;
  out.grads = zero_gradients(m, xi);

  Mat d_phat(rows, m.arch.proj_dim, 0.0);
  Mat d_logits(rows, m.arch.num_classes, 0.0);

  LossTerms& t = out.terms;
  if (cfg.use_cont) {
    t.cont = l_cont_grad(c.phat, batch.labels, cfg.tau, d_phat);
    if (!std::isfinite(t.cont)) throw std::runtime_error("non-finite loss term: l_cont");
  }
  if (cfg.use_ce) {
    t.ce = l_ce_grad(c.logits, batch.labels, d_logits);
    if (!std::isfinite(t.ce)) throw std::runtime_error("non-finite loss term: l_ce");
  }
  if (cfg.use_proto) {
    t.proto = l_proto_grad(c.phat, batch.labels, xi, cfg.tau, d_phat, out.grads.d_xi);
    if (!std::isfinite(t.proto))
      throw std::runtime_error("non-finite loss term: l_proto");
  }
  if (cfg.use_uni) {
    t.uni = l_uni_grad(xi, out.grads.d_xi);
    if (!std::isfinite(t.uni)) throw std::runtime_error("non-finite loss term: l_uni");
  }
  t.total = t.cont + t.ce + t.proto + t.uni;

  // d_phat -> d_p through the row normalization
  Mat d_p(rows, m.arch.proj_dim, 0.0);
  if (need_phat) {
    for (int q = 0; q < rows; ++q) {
      const double* praw = c.p.row(q);
      const double* phat = c.phat.row(q);
      const double* dh = d_phat.row(q);
      double nrm = 0.0;
      for (int j = 0; j < c.p.cols; ++j) nrm += praw[j] * praw[j];
      nrm = std::sqrt(nrm);
      double proj = 0.0;
      for (int j = 0; j < c.p.cols; ++j) proj += dh[j] * phat[j];
      double* dp = d_p.row(q);
      for (int j = 0; j < c.p.cols; ++j) dp[j] = (dh[j] - proj * phat[j]) / nrm;
    }
  }

  // projector
  Mat d_hidden;
  affine_backward(c.proj_hidden, m.projector[1], d_p, out.grads.d_projector[1],
                  d_hidden);
  relu_backward_inplace(c.proj_pre, d_hidden);
  Mat d_z;
  affine_backward(c.z, m.projector[0], d_hidden, out.grads.d_projector[0], d_z);

  // classifier adds into d_z
  Mat d_z_cls;
  affine_backward(c.z, m.classifier, d_logits, out.grads.d_classifier, d_z_cls);
  for (std::size_t i = 0; i < d_z.data.size(); ++i) d_z.data[i] += d_z_cls.data[i];

  // extractor, last layer is linear
  const int layers = static_cast<int>(m.extractor.size());
  Mat d_cur = std::move(d_z);
  for (int l = layers - 1; l >= 0; --l) {
    if (l + 1 < layers) relu_backward_inplace(c.ext_pre[l], d_cur);
    Mat d_in;
    affine_backward(c.ext_act[l], m.extractor[l], d_cur, out.grads.d_extractor[l],
                    d_in);
    d_cur = std::move(d_in);
  }
  return out;
}

std::vector<Mat*> weight_tensors(ClientModel& m) {
  std::vector<Mat*> out;
  for (auto& l : m.extractor) out.push_back(&l.w);
  out.push_back(&m.projector[0].w);
  out.push_back(&m.projector[1].w);
  out.push_back(&m.classifier.w);
  return out;
}

std::vector<Vec*> bias_tensors(ClientModel& m) {
  std::vector<Vec*> out;
  for (auto& l : m.extractor) out.push_back(&l.b);
  out.push_back(&m.projector[0].b);
  out.push_back(&m.projector[1].b);
  out.push_back(&m.classifier.b);
  return out;
}

void save_checkpoint(const ClientModel& m, const Mat& xi, const std::string& path) {
  nlohmann::json header;
  header["arch"] = {{"hidden_sizes", m.arch.hidden_sizes},
                    {"input_dim", m.arch.input_dim},
                    {"latent_dim", m.arch.latent_dim},
                    {"proj_dim", m.arch.proj_dim},
                    {"num_classes", m.arch.num_classes}};
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const double*> blocks;
  std::vector<std::size_t> sizes;
  auto add = [&](const std::string& name, const Mat& w, const Vec& b) {
    tensors.push_back({{"name", name + ".w"}, {"shape", {w.rows, w.cols}}});
    blocks.push_back(w.data.data());
    sizes.push_back(w.data.size());
    tensors.push_back({{"name", name + ".b"}, {"shape", {static_cast<int>(b.size())}}});
    blocks.push_back(b.data());
    sizes.push_back(b.size());
  };
  for (std::size_t i = 0; i < m.extractor.size(); ++i)
    add("extractor." + std::to_string(i), m.extractor[i].w, m.extractor[i].b);
  add("projector.0", m.projector[0].w, m.projector[0].b);
  add("projector.1", m.projector[1].w, m.projector[1].b);
  add("classifier", m.classifier.w, m.classifier.b);
  tensors.push_back({{"name", "xi"}, {"shape", {xi.rows, xi.cols}}});
  blocks.push_back(xi.data.data());
  sizes.push_back(xi.data.size());
  header["tensors"] = tensors;
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  header["scalar_count"] = total;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  const std::string hs = header.dump();
  const std::uint64_t hlen = hs.size();
  f.write(kCkptMagic, sizeof(kCkptMagic) - 1);
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    f.write(reinterpret_cast<const char*>(blocks[i]),
            static_cast<std::streamsize>(sizes[i] * sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

std::pair<ClientModel, Mat> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCkptMagic) - 1];
  f.read(magic, sizeof(magic));
  if (!f || std::string(magic, sizeof(magic)) != kCkptMagic)
    throw std::runtime_error("bad checkpoint magic: " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);

  ArchSpec arch;
  arch.hidden_sizes = header["arch"]["hidden_sizes"].get<std::vector<int>>();
  arch.input_dim = header["arch"]["input_dim"].get<int>();
  arch.latent_dim = header["arch"]["latent_dim"].get<int>();
  arch.proj_dim = header["arch"]["proj_dim"].get<int>();
  arch.num_classes = header["arch"]["num_classes"].get<int>();
  arch.validate();

  Rng dummy(0);
  ClientModel m = init_model(arch, dummy);
  Mat xi(arch.num_classes, arch.proj_dim);

  std::vector<double*> blocks;
  std::vector<std::size_t> sizes;
  auto expect = [&](Mat& w, Vec& b) {
    blocks.push_back(w.data.data());
    sizes.push_back(w.data.size());
    blocks.push_back(b.data());
    sizes.push_back(b.size());
  };
  for (auto& l : m.extractor) expect(l.w, l.b);
  expect(m.projector[0].w, m.projector[0].b);
  expect(m.projector[1].w, m.projector[1].b);
  expect(m.classifier.w, m.classifier.b);
  blocks.push_back(xi.data.data());
  sizes.push_back(xi.data.size());

  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (header["scalar_count"].get<std::size_t>() != total)
    throw std::runtime_error("checkpoint scalar count mismatch: " + path);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    f.read(reinterpret_cast<char*>(blocks[i]),
           static_cast<std::streamsize>(sizes[i] * sizeof(double)));
  }
  if (!f) throw std::runtime_error("truncated checkpoint data: " + path);
  return {std::move(m), std::move(xi)};
}

}  // namespace maplsim
