#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "biofuse/encoder.hpp"
#include "biofuse/error.hpp"

namespace biofuse {

struct OptimizerConfig {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 512;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be positive");
    if (!(0.0 < beta1 && beta1 < beta2 && beta2 < 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "Adam needs 0 < beta1 < beta2 < 1");
    }
    if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon must be positive");
    if (batch_size <= 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");
  }
};

// First and second moment estimates for one tensor.
struct AdamMoments {
  Eigen::VectorXd m, v;
};

// One bias-corrected Adam update at step t (t >= 1).
template <typename Params, typename Grads>
void adam_update(Params&& param, const Grads& grad, AdamMoments& moments, long t, const OptimizerConfig& cfg) {
  if (moments.m.size() != param.size()) {
    moments.m = Eigen::VectorXd::Zero(param.size());
    moments.v = Eigen::VectorXd::Zero(param.size());
  }
  moments.m = cfg.beta1 * moments.m + (1.0 - cfg.beta1) * grad;
  moments.v = cfg.beta2 * moments.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  param.array() -= cfg.learning_rate * (moments.m.array() / c1) / ((moments.v.array() / c2).sqrt() + cfg.epsilon);
}

struct AdamState {
  std::vector<AdamMoments> moments;  // one per parameter view
  long step = 0;
};

inline void adam_step(EncoderModel& model, EncoderGradients& grads, AdamState& state, const OptimizerConfig& cfg) {
  auto views = parameter_views(model, grads);
  if (state.moments.size() != views.size()) state.moments.assign(views.size(), {});
  ++state.step;
  for (std::size_t k = 0; k < views.size(); ++k) {
    adam_update(views[k].value, views[k].grad, state.moments[k], state.step, cfg);
  }
}

}  // namespace biofuse
