#include "ctp/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ctp/errors.hpp"

namespace ctp {

void MixPlan::validate() const {
  if (replay_fraction < 0.0 || replay_fraction > 1.0)
    throw std::invalid_argument("mix plan: replay_fraction outside [0, 1]");
  if (batch_size < 1) throw std::invalid_argument("mix plan: batch_size must be >= 1");
  if (replay_fraction > 0.0 && replay_sources.empty())
    throw std::invalid_argument("mix plan: replay requested but no replay sources");
  if (!replay_sources.empty()) {
    double sum = 0.0;
    for (const auto& [name, p] : replay_sources) {
      if (p < 0.0) throw std::invalid_argument("mix plan: negative proportion for " + name);
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("mix plan: proportions sum to " + std::to_string(sum));
  }
}

std::pair<int64_t, int64_t> batch_composition(double replay_fraction, int64_t batch_size,
                                              int64_t batch_index) {
  if (batch_index < 1) throw std::invalid_argument("batch_composition: batch index is 1-based");
  if (replay_fraction < 0.0 || replay_fraction > 1.0)
    throw std::invalid_argument("batch_composition: replay fraction outside [0, 1]");
  const double xs = replay_fraction * static_cast<double>(batch_size);
  const int64_t replay =
      static_cast<int64_t>(std::floor(xs * static_cast<double>(batch_index))) -
      static_cast<int64_t>(std::floor(xs * static_cast<double>(batch_index - 1)));
  return {replay, batch_size - replay};
}

std::pair<int64_t, int64_t> batch_composition(const MixPlan& plan, int64_t batch_index) {
  return batch_composition(plan.replay_fraction, plan.batch_size, batch_index);
}

TokenBudget token_budget(double d0_tokens, double d1_tokens, double replay_fraction) {
  if (replay_fraction < 0.0 || replay_fraction > 1.0)
    throw std::invalid_argument("token_budget: replay fraction outside [0, 1]");
  TokenBudget b;
  b.unique_new = (1.0 - replay_fraction) * d1_tokens;
  b.replayed_old = replay_fraction * d1_tokens;
  b.total = d0_tokens + d1_tokens;
  return b;
}

const std::vector<double>& ReservoirState::proportions() const {
  if (history.empty())
    throw std::logic_error("reservoir: no proportions before the first update");
  return history.back();
}

ReservoirState reservoir_update(ReservoirState state, int64_t next_size) {
  if (next_size < 1) throw std::invalid_argument("reservoir: dataset size must be >= 1");
  if (state.alpha < 0.0 || state.alpha > 1.0)
    throw std::invalid_argument("reservoir: alpha outside [0, 1]");

  state.sizes.push_back(next_size);
  const int64_t i = state.index();  // proportions are now being computed for index i
  const double alpha = state.alpha;

  double denom = 0.0;
  for (int64_t k = 0; k < i; ++k) denom += static_cast<double>(state.sizes[k]);

  std::vector<double> p(static_cast<size_t>(i), 0.0);
  for (int64_t j = 0; j < i; ++j) {
    // Own-phase exposure: all of s_0, but only (1-a)*s_j for later datasets
    // (compute-equivalent replay displaces the rest).
    double num = static_cast<double>(state.sizes[j]) * (j == 0 ? 1.0 : (1.0 - alpha));
    // Replay exposure while training on datasets j+1 .. i-1.
    for (int64_t k = j + 1; k < i; ++k)
      num += state.history[static_cast<size_t>(k - 1)][static_cast<size_t>(j)] *
             static_cast<double>(state.sizes[k]) * alpha;
    p[static_cast<size_t>(j)] = num / denom;
  }
  state.history.push_back(std::move(p));
  return state;
}

std::vector<int64_t> largest_remainder(const std::vector<double>& proportions, int64_t total) {
  if (proportions.empty()) throw std::invalid_argument("largest_remainder: empty proportions");
  const size_t n = proportions.size();
  std::vector<int64_t> counts(n, 0);
  std::vector<double> fracs(n, 0.0);
  int64_t assigned = 0;
  for (size_t j = 0; j < n; ++j) {
    const double q = proportions[j] * static_cast<double>(total);
    counts[j] = static_cast<int64_t>(std::floor(q));
    fracs[j] = q - static_cast<double>(counts[j]);
    assigned += counts[j];
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&fracs](size_t a, size_t b) { return fracs[a] > fracs[b]; });
  for (int64_t r = total - assigned, k = 0; r > 0; --r, ++k)
    counts[order[static_cast<size_t>(k) % n]] += 1;
  return counts;
}

WindowCursor::WindowCursor(std::string name, const TokenStream* stream, int context_length,
                           bool wrap)
    : name_(std::move(name)),
      stream_(stream),
      context_length_(context_length),
      wrap_(wrap),
      capacity_(window_count(*stream, context_length)) {
  if (capacity_ < 1)
    throw std::invalid_argument("cursor '" + name_ + "': stream shorter than one window");
}

void WindowCursor::append_to(Batch& batch, int64_t n_windows) {
  for (int64_t k = 0; k < n_windows; ++k) {
    if (window_pos_ >= capacity_) {
      if (!wrap_)
        throw SourceExhausted(name_, "source '" + name_ + "' exhausted after " +
                                         std::to_string(capacity_) + " windows");
      window_pos_ = 0;
      ++wraps_;
    }
    const int64_t pos = window_pos_ * (context_length_ + 1);
    for (int i = 0; i < context_length_; ++i)
      batch.context.push_back(stream_->tokens[static_cast<size_t>(pos + i)]);
    batch.target.push_back(stream_->tokens[static_cast<size_t>(pos + context_length_)]);
    ++batch.count;
    ++window_pos_;
  }
}

void WindowCursor::seek(int64_t window_pos, int64_t wraps) {
  if (window_pos < 0 || window_pos > capacity_)
    throw std::out_of_range("cursor '" + name_ + "': seek outside stream");
  window_pos_ = window_pos;
  wraps_ = wraps;
}

PlanReader::PlanReader(const MixPlan& plan, const TokenStream* new_stream,
                       std::vector<const TokenStream*> replay_streams, int context_length,
                       bool wrap_replay)
    : plan_(plan),
      context_length_(context_length),
      fresh_(plan.new_source, new_stream, context_length, /*wrap=*/false) {
  plan_.validate();
  if (replay_streams.size() != plan_.replay_sources.size())
    throw std::invalid_argument("plan reader: replay stream count mismatch");
  for (size_t j = 0; j < replay_streams.size(); ++j) {
    replay_.emplace_back(plan_.replay_sources[j].first, replay_streams[j], context_length,
                         wrap_replay);
    proportions_.push_back(plan_.replay_sources[j].second);
  }
}

Batch PlanReader::next_batch() {
  ++batches_done_;
  const auto [replay_count, new_count] = batch_composition(plan_, batches_done_);
  Batch batch;
  batch.context_length = context_length_;
  batch.reserve(plan_.batch_size);
  if (replay_count > 0) {
    const std::vector<int64_t> per_source = largest_remainder(proportions_, replay_count);
    for (size_t j = 0; j < replay_.size(); ++j) replay_[j].append_to(batch, per_source[j]);
  }
  fresh_.append_to(batch, new_count);
  return batch;
}

SourceState PlanReader::state() const {
  SourceState s;
  s.counter = batches_done_;
  s.cursors.push_back({fresh_.name(), fresh_.window_pos(), fresh_.wraps()});
  for (const auto& r : replay_) s.cursors.push_back({r.name(), r.window_pos(), r.wraps()});
  return s;
}

void PlanReader::restore(const SourceState& s) {
  if (s.cursors.size() != replay_.size() + 1)
    throw std::invalid_argument("plan reader: cursor count mismatch on restore");
  batches_done_ = s.counter;
  fresh_.seek(s.cursors[0].window_pos, s.cursors[0].wraps);
  for (size_t j = 0; j < replay_.size(); ++j) {
    if (s.cursors[j + 1].name != replay_[j].name())
      throw std::invalid_argument("plan reader: cursor '" + s.cursors[j + 1].name +
                                  "' does not match source '" + replay_[j].name() + "'");
    replay_[j].seek(s.cursors[j + 1].window_pos, s.cursors[j + 1].wraps);
  }
}

MixtureReader::MixtureReader(std::vector<std::pair<std::string, double>> weighted_sources,
                             std::vector<const TokenStream*> streams, int context_length,
                             int64_t batch_size, uint64_t seed, bool wrap)
    : context_length_(context_length), batch_size_(batch_size), rng_(seed) {
  if (weighted_sources.empty()) throw std::invalid_argument("mixture reader: no sources");
  if (weighted_sources.size() != streams.size())
    throw std::invalid_argument("mixture reader: stream count mismatch");
  double sum = 0.0;
  for (const auto& [name, w] : weighted_sources) {
    if (w < 0.0) throw std::invalid_argument("mixture reader: negative weight for " + name);
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixture reader: weights sum to " + std::to_string(sum));
  for (size_t j = 0; j < streams.size(); ++j) {
    weights_.push_back(weighted_sources[j].second);
    sources_.emplace_back(weighted_sources[j].first, streams[j], context_length, wrap);
  }
}

Batch MixtureReader::next_batch() {
  ++batches_done_;
  Batch batch;
  batch.context_length = context_length_;
  batch.reserve(batch_size_);
  for (int64_t k = 0; k < batch_size_; ++k) {
    const double r = rng_.next_double();
    size_t idx = weights_.size() - 1;
    double cum = 0.0;
    for (size_t j = 0; j < weights_.size(); ++j) {
      cum += weights_[j];
      if (r < cum) {
        idx = j;
        break;
      }
    }
    sources_[idx].append_to(batch, 1);
  }
  return batch;
}

SourceState MixtureReader::state() const {
  SourceState s;
  s.counter = batches_done_;
  for (const auto& c : sources_) s.cursors.push_back({c.name(), c.window_pos(), c.wraps()});
  const auto words = rng_.state();
  s.rng_words.assign(words.begin(), words.end());
  return s;
}

void MixtureReader::restore(const SourceState& s) {
  if (s.cursors.size() != sources_.size() || s.rng_words.size() != 4)
    throw std::invalid_argument("mixture reader: state shape mismatch on restore");
  batches_done_ = s.counter;
  for (size_t j = 0; j < sources_.size(); ++j)
    sources_[j].seek(s.cursors[j].window_pos, s.cursors[j].wraps);
  rng_.set_state({s.rng_words[0], s.rng_words[1], s.rng_words[2], s.rng_words[3]});
}

}  // namespace ctp
