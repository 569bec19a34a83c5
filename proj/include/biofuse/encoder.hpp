#pragma once

// Stacked LSTM encoder trained with the triplet loss.
//
// Layer l consumes x_t and produces h_t with the standard cell
//   [i f g o] = [sig sig tanh sig](W x_t + U (h_{t-1} * r) + b)
//   c_t = f * c_{t-1} + i * g,   h_t = o * tanh(c_t)
// where r is a per-sequence recurrent dropout mask. Between consecutive layers
// every step output goes through batch normalization (statistics shared over
// batch and time) followed by element-wise dropout. The final hidden state of
// the last layer is the embedding.
//
// Batches are stored column-wise: a step input is [C x S] for S sequences.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/rng.hpp"

namespace biofuse {

using Embedding = Eigen::VectorXd;

struct EncoderConfig {
  int input_dim = 0;
  int hidden_units = 64;
  int num_layers = 2;
  double dropout_between = 0.5;
  double recurrent_dropout = 0.2;
  double bn_momentum = 0.99;
  double bn_eps = 1e-5;

  int embedding_dim() const { return hidden_units; }

  void validate() const {
    if (input_dim <= 0) throw Error(ErrorCode::InvalidConfig, "encoder input_dim must be positive");
    if (hidden_units <= 0) throw Error(ErrorCode::InvalidConfig, "hidden_units must be positive");
    if (num_layers <= 0) throw Error(ErrorCode::InvalidConfig, "num_layers must be positive");
    if (!(dropout_between >= 0.0 && dropout_between < 1.0) ||
        !(recurrent_dropout >= 0.0 && recurrent_dropout < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "dropout rates must lie in [0, 1)");
    }
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0) || !(bn_eps > 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "batch-norm momentum must lie in [0, 1) and eps be positive");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Gate rows are stacked in the order i, f, g, o.
struct LstmLayerParams {
  Eigen::MatrixXd W;  // [4H x C_in]
  Eigen::MatrixXd U;  // [4H x H]
  Eigen::VectorXd b;  // [4H]
};

struct BatchNormParams {
  Eigen::VectorXd gamma, beta;
  Eigen::VectorXd running_mean, running_var;
};

struct EncoderModel {
  EncoderConfig config;
  ModalityKind modality = ModalityKind::Accelerometer;
  std::vector<std::string> channels;
  std::vector<LstmLayerParams> layers;
  std::vector<BatchNormParams> norms;  // num_layers - 1 entries
};

struct BatchNormGradients {
  Eigen::VectorXd gamma, beta;
};

struct EncoderGradients {
  std::vector<LstmLayerParams> layers;
  std::vector<BatchNormGradients> norms;
};

// Flat view of one trainable tensor and its gradient.
struct ParameterView {
  std::string name;
  Eigen::Map<Eigen::VectorXd> value;
  Eigen::Map<Eigen::VectorXd> grad;
};

namespace detail {

inline Eigen::Map<Eigen::VectorXd> flat(Eigen::MatrixXd& m) { return {m.data(), m.size()}; }
inline Eigen::Map<Eigen::VectorXd> flat(Eigen::VectorXd& v) { return {v.data(), v.size()}; }

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace detail

inline EncoderGradients zero_gradients(const EncoderModel& model) {
  EncoderGradients g;
  for (const auto& l : model.layers) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                        Eigen::MatrixXd::Zero(l.U.rows(), l.U.cols()),
                        Eigen::VectorXd::Zero(l.b.size())});
  }
  for (const auto& n : model.norms) {
    g.norms.push_back({Eigen::VectorXd::Zero(n.gamma.size()), Eigen::VectorXd::Zero(n.beta.size())});
  }
  return g;
}

// Trainable tensors in a fixed order; running statistics are not included.
inline std::vector<ParameterView> parameter_views(EncoderModel& model, EncoderGradients& grads) {
  std::vector<ParameterView> views;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    views.push_back({p + "W", detail::flat(model.layers[l].W), detail::flat(grads.layers[l].W)});
    views.push_back({p + "U", detail::flat(model.layers[l].U), detail::flat(grads.layers[l].U)});
    views.push_back({p + "b", detail::flat(model.layers[l].b), detail::flat(grads.layers[l].b)});
  }
  for (std::size_t n = 0; n < model.norms.size(); ++n) {
    const std::string p = "norm" + std::to_string(n) + ".";
    views.push_back({p + "gamma", detail::flat(model.norms[n].gamma), detail::flat(grads.norms[n].gamma)});
    views.push_back({p + "beta", detail::flat(model.norms[n].beta), detail::flat(grads.norms[n].beta)});
  }
  return views;
}

// Glorot-uniform input weights, orthogonal recurrent weights, forget bias 1.
inline EncoderModel init_encoder(const EncoderConfig& config, ModalityKind modality,
                                 std::vector<std::string> channels, Rng& rng) {
  config.validate();
  EncoderModel model;
  model.config = config;
  model.modality = modality;
  model.channels = std::move(channels);
  const int h = config.hidden_units;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = l == 0 ? config.input_dim : h;
    LstmLayerParams p;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + 4 * h));
    std::uniform_real_distribution<double> uni(-limit, limit);
    p.W.resize(4 * h, in);
    for (Eigen::Index i = 0; i < p.W.size(); ++i) p.W.data()[i] = uni(rng);
    Eigen::MatrixXd a(4 * h, h);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(4 * h, h);
    // Sign fix so the factorization is unique.
    Eigen::MatrixXd r = qr.matrixQR().topRows(h).triangularView<Eigen::Upper>();
    for (int j = 0; j < h; ++j) {
      if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    p.U = q;
    p.b = Eigen::VectorXd::Zero(4 * h);
    p.b.segment(h, h).setOnes();
    model.layers.push_back(std::move(p));
  }
  for (int l = 0; l + 1 < config.num_layers; ++l) {
    model.norms.push_back({Eigen::VectorXd::Ones(h), Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h),
                           Eigen::VectorXd::Ones(h)});
  }
  return model;
}

// Every parameter and running statistic zero except running variances (one).
inline EncoderModel zero_encoder(const EncoderConfig& config, ModalityKind modality) {
  config.validate();
  EncoderModel model;
  model.config = config;
  model.modality = modality;
  const int h = config.hidden_units;
  for (int l = 0; l < config.num_layers; ++l) {
    const int in = l == 0 ? config.input_dim : h;
    model.layers.push_back({Eigen::MatrixXd::Zero(4 * h, in), Eigen::MatrixXd::Zero(4 * h, h),
                            Eigen::VectorXd::Zero(4 * h)});
  }
  for (int l = 0; l + 1 < config.num_layers; ++l) {
    model.norms.push_back({Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h), Eigen::VectorXd::Zero(h),
                           Eigen::VectorXd::Ones(h)});
  }
  return model;
}

enum class Mode { Train, Infer };

// Inverted-dropout masks: entries are 0 or 1 / (1 - rate). Empty vectors mean
// "no dropout" for that position.
struct DropoutMasks {
  std::vector<Eigen::MatrixXd> recurrent;             // per layer, [H x S]
  std::vector<std::vector<Eigen::MatrixXd>> between;  // per layer boundary, per step, [H x S]
};

inline DropoutMasks sample_masks(const EncoderConfig& cfg, int steps, int batch, Rng& rng) {
  auto draw = [&](double rate) {
    Eigen::MatrixXd m(cfg.hidden_units, batch);
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
    return m;
  };
  DropoutMasks masks;
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (cfg.recurrent_dropout > 0.0) {
      masks.recurrent.push_back(draw(cfg.recurrent_dropout));
    } else {
      masks.recurrent.push_back(Eigen::MatrixXd::Ones(cfg.hidden_units, batch));
    }
  }
  for (int l = 0; l + 1 < cfg.num_layers; ++l) {
    std::vector<Eigen::MatrixXd> per_step;
    for (int t = 0; t < steps; ++t) {
      per_step.push_back(cfg.dropout_between > 0.0 ? draw(cfg.dropout_between)
                                                   : Eigen::MatrixXd::Ones(cfg.hidden_units, batch));
    }
    masks.between.push_back(std::move(per_step));
  }
  return masks;
}

struct CellOutput {
  Eigen::MatrixXd gates;  // activated i, f, g, o stacked, [4H x S]
  Eigen::MatrixXd c;
  Eigen::MatrixXd h;
};

// One LSTM step for a batch of columns. `h_prev_masked` already carries the
// recurrent dropout mask.
inline CellOutput lstm_cell(const LstmLayerParams& p, const Eigen::MatrixXd& x,
                            const Eigen::MatrixXd& h_prev_masked, const Eigen::MatrixXd& c_prev) {
  const Eigen::Index h = p.U.cols();
  if (x.rows() != p.W.cols() || h_prev_masked.rows() != h || c_prev.rows() != h ||
      x.cols() != h_prev_masked.cols() || x.cols() != c_prev.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "LSTM cell input shapes do not match the parameters");
  }
  Eigen::MatrixXd z = p.W * x + p.U * h_prev_masked;
  z.colwise() += p.b;
  CellOutput out;
  out.gates.resize(4 * h, x.cols());
  out.gates.topRows(2 * h) = detail::sigmoid(z.topRows(2 * h));
  out.gates.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
  out.gates.bottomRows(h) = detail::sigmoid(z.bottomRows(h));
  out.c = (out.gates.middleRows(h, h).array() * c_prev.array() +
           out.gates.topRows(h).array() * out.gates.middleRows(2 * h, h).array())
              .matrix();
  out.h = (out.gates.bottomRows(h).array() * out.c.array().tanh()).matrix();
  return out;
}

// Single-sequence form with an explicit recurrent mask (ones at inference).
inline CellOutput lstm_cell_forward(const LstmLayerParams& p, const Eigen::VectorXd& x_t,
                                    const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev,
                                    const Eigen::VectorXd& rec_dropout_mask) {
  if (rec_dropout_mask.size() != h_prev.size()) {
    throw Error(ErrorCode::DimensionMismatch, "recurrent mask size differs from hidden size");
  }
  Eigen::MatrixXd hm = h_prev.cwiseProduct(rec_dropout_mask);
  return lstm_cell(p, x_t, hm, c_prev);
}

struct LayerCache {
  std::vector<Eigen::MatrixXd> inputs;  // x_t per step
  std::vector<CellOutput> steps;
};

struct NormCache {
  Eigen::VectorXd mean, var, inv_std;
  std::vector<Eigen::MatrixXd> xhat;  // per step
};

struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::Infer;
  int steps = 0;
  int batch = 0;
  std::vector<LayerCache> layers;
  std::vector<NormCache> norms;
  DropoutMasks masks;
};

struct ForwardResult {
  Eigen::MatrixXd embeddings;  // [E x S]
  ForwardCache cache;
};

using SequenceBatch = std::vector<const Eigen::MatrixXd*>;  // each [M x C], equal M

inline ForwardResult encoder_forward(const EncoderModel& model, const SequenceBatch& batch, Mode mode,
                                     const DropoutMasks* masks = nullptr) {
  const auto& cfg = model.config;
  if (batch.empty()) throw Error(ErrorCode::EmptySequence, "empty batch");
  const Eigen::Index steps = batch.front()->rows();
  const Eigen::Index s_count = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index h = cfg.hidden_units;
  if (steps == 0) throw Error(ErrorCode::EmptySequence, "zero-length window");
  for (const auto* w : batch) {
    if (w->cols() != cfg.input_dim) {
      throw Error(ErrorCode::DimensionMismatch, "window has " + std::to_string(w->cols()) +
                                                    " channels, model expects " + std::to_string(cfg.input_dim));
    }
    if (w->rows() != steps) throw Error(ErrorCode::DimensionMismatch, "windows in a batch differ in length");
  }
  const bool use_masks = mode == Mode::Train && masks != nullptr;
  if (use_masks) {
    if (masks->recurrent.size() != model.layers.size() || masks->between.size() != model.norms.size()) {
      throw Error(ErrorCode::DimensionMismatch, "dropout masks do not match the layer count");
    }
  }

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.mode = mode;
  cache.steps = static_cast<int>(steps);
  cache.batch = static_cast<int>(s_count);
  if (use_masks) cache.masks = *masks;
  cache.layers.resize(model.layers.size());
  cache.norms.resize(model.norms.size());

  // Layer-0 step inputs.
  std::vector<Eigen::MatrixXd> inputs(static_cast<std::size_t>(steps), Eigen::MatrixXd(cfg.input_dim, s_count));
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const auto& w = *batch[static_cast<std::size_t>(s)];
    for (Eigen::Index t = 0; t < steps; ++t) inputs[static_cast<std::size_t>(t)].col(s) = w.row(t).transpose();
  }

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& p = model.layers[l];
    LayerCache& lc = cache.layers[l];
    Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(h, s_count);
    Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(h, s_count);
    lc.steps.reserve(static_cast<std::size_t>(steps));
    for (Eigen::Index t = 0; t < steps; ++t) {
      Eigen::MatrixXd hm = use_masks ? Eigen::MatrixXd(h_prev.cwiseProduct(masks->recurrent[l])) : h_prev;
      lc.steps.push_back(lstm_cell(p, inputs[static_cast<std::size_t>(t)], hm, c_prev));
      h_prev = lc.steps.back().h;
      c_prev = lc.steps.back().c;
    }
    lc.inputs = std::move(inputs);

    if (l + 1 == model.layers.size()) break;

    // Batch norm over (time, batch), then inter-layer dropout.
    const auto& bn = model.norms[l];
    NormCache& nc = cache.norms[l];
    if (mode == Mode::Train) {
      const double n = static_cast<double>(steps * s_count);
      nc.mean = Eigen::VectorXd::Zero(h);
      for (const auto& st : lc.steps) nc.mean += st.h.rowwise().sum();
      nc.mean /= n;
      nc.var = Eigen::VectorXd::Zero(h);
      for (const auto& st : lc.steps) nc.var += (st.h.colwise() - nc.mean).array().square().matrix().rowwise().sum();
      nc.var /= n;
    } else {
      nc.mean = bn.running_mean;
      nc.var = bn.running_var;
    }
    nc.inv_std = (nc.var.array() + cfg.bn_eps).rsqrt().matrix();
    inputs.assign(static_cast<std::size_t>(steps), Eigen::MatrixXd());
    nc.xhat.reserve(static_cast<std::size_t>(steps));
    for (Eigen::Index t = 0; t < steps; ++t) {
      Eigen::MatrixXd xhat = ((lc.steps[static_cast<std::size_t>(t)].h.colwise() - nc.mean).array().colwise() *
                              nc.inv_std.array())
                                 .matrix();
      Eigen::MatrixXd y = (xhat.array().colwise() * bn.gamma.array()).matrix();
      y.colwise() += bn.beta;
      if (use_masks) y = y.cwiseProduct(masks->between[l][static_cast<std::size_t>(t)]);
      inputs[static_cast<std::size_t>(t)] = std::move(y);
      nc.xhat.push_back(std::move(xhat));
    }
  }
  result.embeddings = cache.layers.back().steps.back().h;
  if (!result.embeddings.allFinite()) throw Error(ErrorCode::NonFinite, "non-finite embedding");
  cache.valid = true;
  return result;
}

// Inference embedding of one window (running batch-norm statistics, no dropout).
inline Embedding embed(const EncoderModel& model, const Eigen::MatrixXd& window) {
  SequenceBatch batch{&window};
  return encoder_forward(model, batch, Mode::Infer).embeddings.col(0);
}

// Exponential moving average of the batch statistics seen in a train pass.
inline void update_running_stats(EncoderModel& model, const ForwardCache& cache) {
  if (!cache.valid || cache.mode != Mode::Train) {
    throw Error(ErrorCode::MissingCache, "running statistics need a train-mode forward cache");
  }
  const double mom = model.config.bn_momentum;
  for (std::size_t l = 0; l < model.norms.size(); ++l) {
    auto& bn = model.norms[l];
    bn.running_mean = mom * bn.running_mean + (1.0 - mom) * cache.norms[l].mean;
    bn.running_var = mom * bn.running_var + (1.0 - mom) * cache.norms[l].var;
  }
}

struct TripletLossConfig {
  double margin = 1.0;  // alpha
};

struct TripletLossResult {
  double loss = 0.0;
  Embedding grad_anchor, grad_positive, grad_negative;
};

// max{0, |a - p|^2 - |a - n|^2 + alpha}. At the hinge kink the zero branch is used.
inline TripletLossResult triplet_loss(const Embedding& a, const Embedding& p, const Embedding& n,
                                      const TripletLossConfig& cfg) {
  if (a.size() != p.size() || a.size() != n.size()) {
    throw Error(ErrorCode::DimensionMismatch, "triplet embeddings differ in dimension");
  }
  TripletLossResult r;
  const double margin_term = (a - p).squaredNorm() - (a - n).squaredNorm() + cfg.margin;
  r.grad_anchor = Embedding::Zero(a.size());
  r.grad_positive = Embedding::Zero(a.size());
  r.grad_negative = Embedding::Zero(a.size());
  if (margin_term > 0.0) {
    r.loss = margin_term;
    r.grad_anchor = 2.0 * (n - p);
    r.grad_positive = -2.0 * (a - p);
    r.grad_negative = 2.0 * (a - n);
  }
  return r;
}

struct BatchLossResult {
  double loss = 0.0;                 // mean over triplets
  Eigen::MatrixXd grad_embeddings;   // [E x 3B]
  int active = 0;                    // triplets with a positive hinge
};

// Embedding columns are laid out as [anchors | positives | negatives].
inline BatchLossResult batch_triplet_loss(const Eigen::MatrixXd& embeddings, const TripletLossConfig& cfg) {
  if (embeddings.cols() % 3 != 0 || embeddings.cols() == 0) {
    throw Error(ErrorCode::DimensionMismatch, "triplet batch needs 3B embedding columns");
  }
  const Eigen::Index b = embeddings.cols() / 3;
  BatchLossResult r;
  r.grad_embeddings = Eigen::MatrixXd::Zero(embeddings.rows(), embeddings.cols());
  const double scale = 1.0 / static_cast<double>(b);
  for (Eigen::Index k = 0; k < b; ++k) {
    auto t = triplet_loss(embeddings.col(k), embeddings.col(b + k), embeddings.col(2 * b + k), cfg);
    r.loss += t.loss * scale;
    if (t.loss > 0.0) ++r.active;
    r.grad_embeddings.col(k) = t.grad_anchor * scale;
    r.grad_embeddings.col(b + k) = t.grad_positive * scale;
    r.grad_embeddings.col(2 * b + k) = t.grad_negative * scale;
  }
  return r;
}

// Backpropagation through time for a train-mode forward pass. `upstream` is the
// loss gradient with respect to the embeddings, [E x S].
inline EncoderGradients encoder_backward(const EncoderModel& model, const ForwardCache& cache,
                                         const Eigen::MatrixXd& upstream) {
  if (!cache.valid || cache.mode != Mode::Train || cache.layers.size() != model.layers.size()) {
    throw Error(ErrorCode::MissingCache, "backward needs the cache of a train-mode forward pass");
  }
  const Eigen::Index h = model.config.hidden_units;
  const Eigen::Index steps = cache.steps;
  const Eigen::Index s_count = cache.batch;
  if (upstream.rows() != h || upstream.cols() != s_count) {
    throw Error(ErrorCode::DimensionMismatch, "upstream gradient shape does not match the batch");
  }
  const bool masked = !cache.masks.recurrent.empty();
  EncoderGradients grads = zero_gradients(model);

  // Gradient reaching each step output of the current layer from above.
  std::vector<Eigen::MatrixXd> external(static_cast<std::size_t>(steps), Eigen::MatrixXd::Zero(h, s_count));
  external.back() = upstream;

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& p = model.layers[li];
    const LayerCache& lc = cache.layers[li];
    auto& g = grads.layers[li];
    std::vector<Eigen::MatrixXd> d_inputs(li > 0 ? static_cast<std::size_t>(steps) : 0);
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(h, s_count);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, s_count);
    Eigen::MatrixXd dz(4 * h, s_count);
    for (Eigen::Index t = steps; t-- > 0;) {
      const CellOutput& st = lc.steps[static_cast<std::size_t>(t)];
      const auto i = st.gates.topRows(h).array();
      const auto f = st.gates.middleRows(h, h).array();
      const auto gg = st.gates.middleRows(2 * h, h).array();
      const auto o = st.gates.bottomRows(h).array();
      const Eigen::ArrayXXd tc = st.c.array().tanh();
      const Eigen::ArrayXXd dh = external[static_cast<std::size_t>(t)].array() + dh_next.array();
      const Eigen::ArrayXXd dc = dh * o * (1.0 - tc.square()) + dc_next.array();
      Eigen::MatrixXd c_prev = t > 0 ? lc.steps[static_cast<std::size_t>(t - 1)].c : Eigen::MatrixXd::Zero(h, s_count);
      dz.topRows(h) = (dc * gg * i * (1.0 - i)).matrix();
      dz.middleRows(h, h) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
      dz.middleRows(2 * h, h) = (dc * i * (1.0 - gg.square())).matrix();
      dz.bottomRows(h) = (dh * tc * o * (1.0 - o)).matrix();

      g.W.noalias() += dz * lc.inputs[static_cast<std::size_t>(t)].transpose();
      g.b += dz.rowwise().sum();
      if (t > 0) {
        Eigen::MatrixXd hm = lc.steps[static_cast<std::size_t>(t - 1)].h;
        if (masked) hm = hm.cwiseProduct(cache.masks.recurrent[li]);
        g.U.noalias() += dz * hm.transpose();
        dh_next.noalias() = p.U.transpose() * dz;
        if (masked) dh_next = dh_next.cwiseProduct(cache.masks.recurrent[li]);
      } else {
        dh_next.setZero();
      }
      dc_next = (dc * f).matrix();
      if (li > 0) d_inputs[static_cast<std::size_t>(t)].noalias() = p.W.transpose() * dz;
    }
    if (li == 0) break;

    // Back through dropout and batch norm into the layer below.
    const std::size_t ni = li - 1;
    const NormCache& nc = cache.norms[ni];
    const auto& bn = model.norms[ni];
    const double n = static_cast<double>(steps * s_count);
    Eigen::VectorXd sum_dxhat = Eigen::VectorXd::Zero(h);
    Eigen::VectorXd sum_dxhat_xhat = Eigen::VectorXd::Zero(h);
    std::vector<Eigen::MatrixXd> dxhat(static_cast<std::size_t>(steps));
    for (Eigen::Index t = 0; t < steps; ++t) {
      Eigen::MatrixXd dy = d_inputs[static_cast<std::size_t>(t)];
      if (masked) dy = dy.cwiseProduct(cache.masks.between[ni][static_cast<std::size_t>(t)]);
      const Eigen::MatrixXd& xhat = nc.xhat[static_cast<std::size_t>(t)];
      grads.norms[ni].gamma += dy.cwiseProduct(xhat).rowwise().sum();
      grads.norms[ni].beta += dy.rowwise().sum();
      Eigen::MatrixXd dx = (dy.array().colwise() * bn.gamma.array()).matrix();
      sum_dxhat += dx.rowwise().sum();
      sum_dxhat_xhat += dx.cwiseProduct(xhat).rowwise().sum();
      dxhat[static_cast<std::size_t>(t)] = std::move(dx);
    }
    for (Eigen::Index t = 0; t < steps; ++t) {
      const Eigen::MatrixXd& xhat = nc.xhat[static_cast<std::size_t>(t)];
      Eigen::ArrayXXd dh = n * dxhat[static_cast<std::size_t>(t)].array();
      dh.colwise() -= sum_dxhat.array();
      dh -= xhat.array().colwise() * sum_dxhat_xhat.array();
      dh.colwise() *= nc.inv_std.array() / n;
      external[static_cast<std::size_t>(t)] = dh.matrix();
    }
  }
  return grads;
}

}  // namespace biofuse
