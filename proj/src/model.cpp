#include "ctp/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ctp/errors.hpp"
#include "ctp/rng.hpp"

namespace ctp {

namespace {

constexpr double kGeluC = 0.7978845608;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void check_tokens(const ModelConfig& cfg, const int32_t* toks, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    if (toks[i] < 0 || toks[i] >= cfg.vocab_size)
      throw std::out_of_range("model: token " + std::to_string(toks[i]) +
                              " outside vocabulary of " + std::to_string(cfg.vocab_size));
}

// softmax into `probs`; returns -log probs[target].
double softmax_nll(const std::vector<double>& logits, int target, std::vector<double>& probs) {
  const size_t n = logits.size();
  probs.resize(n);
  double mx = logits[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (size_t i = 0; i < n; ++i) probs[i] /= sum;
  return -(logits[static_cast<size_t>(target)] - mx - std::log(sum));
}

}  // namespace

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void ModelConfig::validate() const {
  if (vocab_size < 1 || context_length < 1 || embed_dim < 1 || hidden_dim < 1)
    throw std::invalid_argument("model config: all dimensions must be >= 1");
}

int64_t ModelConfig::param_count() const {
  const int64_t v = vocab_size, l = context_length, d = embed_dim, h = hidden_dim;
  return v * d + (l * d * h + h) + (h * v + v);
}

ParamSet ParamSet::zeros(const ModelConfig& cfg) {
  ParamSet p;
  p.embed.assign(static_cast<size_t>(cfg.vocab_size) * cfg.embed_dim, 0.0);
  p.w1.assign(static_cast<size_t>(cfg.hidden_dim) * cfg.input_dim(), 0.0);
  p.b1.assign(static_cast<size_t>(cfg.hidden_dim), 0.0);
  p.w2.assign(static_cast<size_t>(cfg.vocab_size) * cfg.hidden_dim, 0.0);
  p.b2.assign(static_cast<size_t>(cfg.vocab_size), 0.0);
  return p;
}

void ParamSet::fill(double value) {
  for_each_tensor([value](std::vector<double>& t) { std::fill(t.begin(), t.end(), value); });
}

ModelState init_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelState s = ParamSet::zeros(cfg);
  Xoshiro256ss rng(cfg.init_seed);
  auto uniform_into = [&rng](std::vector<double>& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : t) w = (2.0 * rng.next_double() - 1.0) * bound;
  };
  uniform_into(s.embed, cfg.embed_dim);
  uniform_into(s.w1, cfg.input_dim());
  uniform_into(s.w2, cfg.hidden_dim);
  return s;
}

void forward(const ModelConfig& cfg, const ModelState& state, const int32_t* context,
             Activations& acts) {
  check_tokens(cfg, context, cfg.context_length);
  const int d = cfg.embed_dim, in = cfg.input_dim(), h = cfg.hidden_dim, v = cfg.vocab_size;

  acts.input.resize(static_cast<size_t>(in));
  for (int pos = 0; pos < cfg.context_length; ++pos) {
    const double* row = &state.embed[static_cast<size_t>(context[pos]) * d];
    for (int k = 0; k < d; ++k) acts.input[static_cast<size_t>(pos) * d + k] = row[k];
  }

  acts.pre.resize(static_cast<size_t>(h));
  acts.hidden.resize(static_cast<size_t>(h));
  for (int j = 0; j < h; ++j) {
    const double* row = &state.w1[static_cast<size_t>(j) * in];
    double acc = state.b1[static_cast<size_t>(j)];
    for (int k = 0; k < in; ++k) acc += row[k] * acts.input[static_cast<size_t>(k)];
    acts.pre[static_cast<size_t>(j)] = acc;
    acts.hidden[static_cast<size_t>(j)] = gelu(acc);
  }

  acts.logits.resize(static_cast<size_t>(v));
  for (int o = 0; o < v; ++o) {
    const double* row = &state.w2[static_cast<size_t>(o) * h];
    double acc = state.b2[static_cast<size_t>(o)];
    for (int j = 0; j < h; ++j) acc += row[j] * acts.hidden[static_cast<size_t>(j)];
    acts.logits[static_cast<size_t>(o)] = acc;
  }
}

double loss_and_grad(const ModelConfig& cfg, const ModelState& state, const Batch& batch,
                     ParamSet& grad) {
  if (batch.count < 1) throw std::invalid_argument("loss_and_grad: empty batch");
  if (batch.context_length != cfg.context_length)
    throw std::invalid_argument("loss_and_grad: context length mismatch");
  check_tokens(cfg, batch.target.data(), batch.count);

  const int d = cfg.embed_dim, in = cfg.input_dim(), h = cfg.hidden_dim, v = cfg.vocab_size;
  const double inv_n = 1.0 / static_cast<double>(batch.count);

  grad = ParamSet::zeros(cfg);
  Activations acts;
  std::vector<double> probs, dlogits(static_cast<size_t>(v)), dhidden(static_cast<size_t>(h)),
      dpre(static_cast<size_t>(h)), dinput(static_cast<size_t>(in));

  double loss = 0.0;
  for (int64_t ex = 0; ex < batch.count; ++ex) {
    const int32_t* ctx = &batch.context[static_cast<size_t>(ex) * cfg.context_length];
    forward(cfg, state, ctx, acts);
    const int target = batch.target[static_cast<size_t>(ex)];
    const double nll = softmax_nll(acts.logits, target, probs);
    if (!std::isfinite(nll))
      throw NumericalError("loss_and_grad: non-finite loss at batch example " +
                           std::to_string(ex));
    loss += nll;

    // d loss / d logits = (softmax - onehot) / N
    for (int o = 0; o < v; ++o) dlogits[static_cast<size_t>(o)] = probs[static_cast<size_t>(o)] * inv_n;
    dlogits[static_cast<size_t>(target)] -= inv_n;

    for (int o = 0; o < v; ++o) {
      const double g = dlogits[static_cast<size_t>(o)];
      grad.b2[static_cast<size_t>(o)] += g;
      double* w2g = &grad.w2[static_cast<size_t>(o) * h];
      for (int j = 0; j < h; ++j) w2g[j] += g * acts.hidden[static_cast<size_t>(j)];
    }
    for (int j = 0; j < h; ++j) {
      double acc = 0.0;
      for (int o = 0; o < v; ++o)
        acc += state.w2[static_cast<size_t>(o) * h + j] * dlogits[static_cast<size_t>(o)];
      dhidden[static_cast<size_t>(j)] = acc;
      dpre[static_cast<size_t>(j)] = acc * gelu_derivative(acts.pre[static_cast<size_t>(j)]);
    }
    for (int j = 0; j < h; ++j) {
      const double g = dpre[static_cast<size_t>(j)];
      grad.b1[static_cast<size_t>(j)] += g;
      double* w1g = &grad.w1[static_cast<size_t>(j) * in];
      for (int k = 0; k < in; ++k) w1g[k] += g * acts.input[static_cast<size_t>(k)];
    }
    for (int k = 0; k < in; ++k) {
      double acc = 0.0;
      for (int j = 0; j < h; ++j)
        acc += state.w1[static_cast<size_t>(j) * in + k] * dpre[static_cast<size_t>(j)];
      dinput[static_cast<size_t>(k)] = acc;
    }
    for (int pos = 0; pos < cfg.context_length; ++pos) {
      double* erow = &grad.embed[static_cast<size_t>(ctx[pos]) * d];
      for (int k = 0; k < d; ++k) erow[k] += dinput[static_cast<size_t>(pos) * d + k];
    }
  }
  return loss * inv_n;
}

double eval_loss(const ModelConfig& cfg, const ModelState& state, const TokenStream& val) {
  const int64_t windows = window_count(val, cfg.context_length);
  if (windows < 1) throw std::invalid_argument("eval_loss: validation stream too short");

  Activations acts;
  std::vector<double> probs;
  std::vector<int32_t> ctx(static_cast<size_t>(cfg.context_length));
  // Kahan summation keeps the mean independent of window order to ~1 ulp.
  double sum = 0.0, comp = 0.0;
  for (int64_t w = 0; w < windows; ++w) {
    const int64_t pos = w * (cfg.context_length + 1);
    for (int i = 0; i < cfg.context_length; ++i)
      ctx[static_cast<size_t>(i)] = val.tokens[static_cast<size_t>(pos + i)];
    forward(cfg, state, ctx.data(), acts);
    const int target = val.tokens[static_cast<size_t>(pos + cfg.context_length)];
    const double y = softmax_nll(acts.logits, target, probs) - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(windows);
}

}  // namespace ctp
