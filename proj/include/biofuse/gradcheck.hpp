#pragma once

// Analytic versus central-difference gradients of the batch triplet loss.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "biofuse/encoder.hpp"
#include "biofuse/rng.hpp"

namespace biofuse {

struct GradientCheckSpec {
  int input_dim = 3;
  int hidden_units = 4;
  int num_layers = 2;
  int steps = 10;
  int triplets = 2;
  bool dropout = true;
  double margin = 4.0;  // large enough that the hinges are active
  double step = 1e-5;
  // Denominator floor for the relative error, keeps near-zero entries meaningful.
  double floor = 1e-6;
};

struct BlockError {
  std::string name;
  double max_relative_error = 0.0;
};

struct GradientCheckReport {
  std::vector<BlockError> blocks;
  double max_relative_error = 0.0;
  double loss = 0.0;
  int active_triplets = 0;

  bool passed(double tolerance = 1e-4) const { return max_relative_error < tolerance; }
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `tamper` lets a test corrupt the analytic gradients before comparison.
inline GradientCheckReport gradient_check(
    const GradientCheckSpec& spec, std::uint64_t seed,
    const std::function<void(EncoderGradients&)>& tamper = {}) {
  Rng rng(derive_seed(seed, "gradcheck"));
  EncoderConfig cfg;
  cfg.input_dim = spec.input_dim;
  cfg.hidden_units = spec.hidden_units;
  cfg.num_layers = spec.num_layers;
  if (!spec.dropout) {
    cfg.dropout_between = 0.0;
    cfg.recurrent_dropout = 0.0;
  }
  EncoderModel model = init_encoder(cfg, ModalityKind::Accelerometer, {}, rng);
  // Move batch-norm affine parameters off their trivial initial values.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& bn : model.norms) {
    for (Eigen::Index i = 0; i < bn.gamma.size(); ++i) {
      bn.gamma[i] = 1.0 + 0.3 * normal(rng);
      bn.beta[i] = 0.3 * normal(rng);
    }
  }

  const int s_count = 3 * spec.triplets;
  std::vector<Eigen::MatrixXd> windows;
  for (int s = 0; s < s_count; ++s) {
    Eigen::MatrixXd w(spec.steps, spec.input_dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    windows.push_back(std::move(w));
  }
  SequenceBatch batch;
  for (const auto& w : windows) batch.push_back(&w);
  DropoutMasks masks = sample_masks(cfg, spec.steps, s_count, rng);
  const TripletLossConfig loss_cfg{spec.margin};

  auto loss_of = [&](const EncoderModel& m) {
    auto fwd = encoder_forward(m, batch, Mode::Train, &masks);
    return batch_triplet_loss(fwd.embeddings, loss_cfg).loss;
  };

  auto fwd = encoder_forward(model, batch, Mode::Train, &masks);
  auto lr = batch_triplet_loss(fwd.embeddings, loss_cfg);
  EncoderGradients grads = encoder_backward(model, fwd.cache, lr.grad_embeddings);
  if (tamper) tamper(grads);

  GradientCheckReport report;
  report.loss = lr.loss;
  report.active_triplets = lr.active;
  auto views = parameter_views(model, grads);
  for (auto& view : views) {
    BlockError block{view.name, 0.0};
    for (Eigen::Index i = 0; i < view.value.size(); ++i) {
      const double saved = view.value[i];
      view.value[i] = saved + spec.step;
      const double up = loss_of(model);
      view.value[i] = saved - spec.step;
      const double down = loss_of(model);
      view.value[i] = saved;
      const double numeric = (up - down) / (2.0 * spec.step);
      block.max_relative_error =
          std::max(block.max_relative_error, relative_error(view.grad[i], numeric, spec.floor));
    }
    report.max_relative_error = std::max(report.max_relative_error, block.max_relative_error);
    report.blocks.push_back(block);
  }
  return report;
}

}  // namespace biofuse
