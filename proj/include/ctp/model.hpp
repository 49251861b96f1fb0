#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ctp/data.hpp"
#include "ctp/mixer.hpp"

namespace ctp {

/// Shape of the next-token predictor: an MLP over the concatenation of the
/// L context-token embeddings with a tanh-approximation GELU hidden layer.
struct ModelConfig {
  int vocab_size = 64;
  int context_length = 8;
  int embed_dim = 16;
  int hidden_dim = 64;
  uint64_t init_seed = 1;

  void validate() const;
  int64_t param_count() const;
  int input_dim() const { return context_length * embed_dim; }
  bool operator==(const ModelConfig&) const = default;
};

/// One set of model-shaped tensors. Used for parameters, gradients and
/// optimizer moments alike.
struct ParamSet {
  std::vector<double> embed;  // V x d
  std::vector<double> w1;     // h x (L*d)
  std::vector<double> b1;     // h
  std::vector<double> w2;     // V x h
  std::vector<double> b2;     // V

  static ParamSet zeros(const ModelConfig& cfg);
  void fill(double value);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(embed);
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    fn(embed);
    fn(w1);
    fn(b1);
    fn(w2);
    fn(b2);
  }
};

using ModelState = ParamSet;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from init_seed; biases zero.
ModelState init_model(const ModelConfig& cfg);

/// Cached activations from one forward pass.
struct Activations {
  std::vector<double> input;   // L*d concatenated embeddings
  std::vector<double> pre;     // h pre-activations
  std::vector<double> hidden;  // h GELU outputs
  std::vector<double> logits;  // V
};

/// Logits (and cached activations) for one context. Tokens must be < V.
void forward(const ModelConfig& cfg, const ModelState& state, const int32_t* context,
             Activations& acts);

/// Mean cross-entropy over the batch plus its gradient (same shape as the
/// parameters). Throws NumericalError naming the offending example when a
/// loss is not finite.
double loss_and_grad(const ModelConfig& cfg, const ModelState& state, const Batch& batch,
                     ParamSet& grad);

/// Mean validation cross-entropy (nats) over all tiled windows of a stream.
double eval_loss(const ModelConfig& cfg, const ModelState& state, const TokenStream& val);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace ctp
