#pragma once

#include <cstdint>

#include "ctp/model.hpp"

namespace ctp {

/// AdamW with decoupled weight decay and global gradient-norm clipping.
struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double epsilon = 1e-8;
  // Weight decay is applied to every parameter tensor by default; set false
  // to exempt biases and embeddings.
  bool decay_all = true;

  void validate() const;
};

struct OptimState {
  ParamSet m;  // first-moment estimate
  ParamSet v;  // second-moment estimate
  int64_t step_count = 0;

  static OptimState zeros(const ModelConfig& cfg);
};

/// Global L2 norm over all gradient tensors jointly.
double grad_norm(const ParamSet& grad);

/// Scales the gradient to `clip_norm` when its global norm exceeds it.
/// Returns the pre-clip norm. Throws NumericalError on a non-finite norm.
double clip_gradient(ParamSet& grad, double clip_norm);

/// One AdamW update: moment updates, bias correction, decoupled decay.
/// Throws NumericalError when an update stops being finite.
void adamw_step(ModelState& params, const ParamSet& grad, OptimState& state, double lr,
                const OptimConfig& cfg);

/// Zeroes both moments and the step counter (dataset-transition reset).
void reset_state(OptimState& state);

/// Weight beta^k of pre-transition moment estimates after k fresh steps.
double moment_contribution(double beta, int64_t k);

}  // namespace ctp
