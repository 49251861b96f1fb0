#include "ctp/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "ctp/errors.hpp"

namespace ctp {

void OptimConfig::validate() const {
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("optim config: betas must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("optim config: clip_norm must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("optim config: negative weight decay");
  if (!(epsilon > 0.0)) throw std::invalid_argument("optim config: epsilon must be > 0");
}

OptimState OptimState::zeros(const ModelConfig& cfg) {
  OptimState s;
  s.m = ParamSet::zeros(cfg);
  s.v = ParamSet::zeros(cfg);
  s.step_count = 0;
  return s;
}

double grad_norm(const ParamSet& grad) {
  double sq = 0.0;
  grad.for_each_tensor([&sq](const std::vector<double>& t) {
    for (double g : t) sq += g * g;
  });
  return std::sqrt(sq);
}

double clip_gradient(ParamSet& grad, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_gradient: clip_norm must be > 0");
  const double norm = grad_norm(grad);
  if (!std::isfinite(norm)) throw NumericalError("clip_gradient: non-finite gradient norm");
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    grad.for_each_tensor([scale](std::vector<double>& t) {
      for (double& g : t) g *= scale;
    });
  }
  return norm;
}

void adamw_step(ModelState& params, const ParamSet& grad, OptimState& state, double lr,
                const OptimConfig& cfg) {
  if (lr < 0.0) throw std::invalid_argument("adamw_step: negative learning rate");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));

  // tensor index 0 = embeddings; 2 and 4 are the bias vectors.
  int tensor_idx = 0;
  std::vector<double>* ps[5] = {&params.embed, &params.w1, &params.b1, &params.w2, &params.b2};
  const std::vector<double>* gs[5] = {&grad.embed, &grad.w1, &grad.b1, &grad.w2, &grad.b2};
  std::vector<double>* ms[5] = {&state.m.embed, &state.m.w1, &state.m.b1, &state.m.w2,
                                &state.m.b2};
  std::vector<double>* vs[5] = {&state.v.embed, &state.v.w1, &state.v.b1, &state.v.w2,
                                &state.v.b2};
  for (; tensor_idx < 5; ++tensor_idx) {
    std::vector<double>& p = *ps[tensor_idx];
    const std::vector<double>& g = *gs[tensor_idx];
    std::vector<double>& m = *ms[tensor_idx];
    std::vector<double>& v = *vs[tensor_idx];
    if (p.size() != g.size()) throw std::invalid_argument("adamw_step: shape mismatch");
    const bool decay_this = cfg.decay_all || tensor_idx == 1 || tensor_idx == 3;
    const double wd = decay_this ? cfg.weight_decay : 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double update = lr * (mhat / (std::sqrt(vhat) + cfg.epsilon) + wd * p[i]);
      p[i] -= update;
      if (!std::isfinite(p[i]))
        throw NumericalError("adamw_step: non-finite parameter after update");
    }
  }
}

void reset_state(OptimState& state) {
  state.m.fill(0.0);
  state.v.fill(0.0);
  state.step_count = 0;
}

double moment_contribution(double beta, int64_t k) {
  if (beta < 0.0 || beta >= 1.0) throw std::invalid_argument("moment_contribution: bad beta");
  if (k < 0) throw std::invalid_argument("moment_contribution: negative k");
  return std::pow(beta, static_cast<double>(k));
}

}  // namespace ctp
