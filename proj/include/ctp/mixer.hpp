#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ctp/data.hpp"
#include "ctp/rng.hpp"

namespace ctp {

/// Per-batch replay composition for one training phase: a fraction x of
/// every batch comes from the replay sources (split by proportion), the
/// rest from the new dataset. Counts follow the cumulative-floor scheme so
/// the realized fraction tracks x exactly.
struct MixPlan {
  enum class ReplayOrder { AsSeen };

  std::string new_source;
  std::vector<std::pair<std::string, double>> replay_sources;  // (name, proportion)
  double replay_fraction = 0.0;                                // x in [0, 1]
  int64_t batch_size = 32;
  ReplayOrder replay_order = ReplayOrder::AsSeen;

  void validate() const;
};

/// (replay_count, new_count) for 1-based batch index b:
/// replay(b) = floor(x*s*b) - floor(x*s*(b-1)). Cumulative replay after n
/// batches differs from x*s*n by less than 1.
std::pair<int64_t, int64_t> batch_composition(double replay_fraction, int64_t batch_size,
                                              int64_t batch_index);
std::pair<int64_t, int64_t> batch_composition(const MixPlan& plan, int64_t batch_index);

/// Compute-equivalent token accounting for a two-dataset phase: replaying
/// x of the D1 budget displaces the same number of unique D1 tokens, so the
/// total compute is unchanged.
struct TokenBudget {
  double unique_new = 0.0;
  double replayed_old = 0.0;
  double total = 0.0;
};
TokenBudget token_budget(double d0_tokens, double d1_tokens, double replay_fraction);

/// Replay-buffer composition across a sequence of dataset transitions.
/// After i updates the buffer holds data from datasets 0..i-1 in proportions
/// p_{i,j} given by the discrete reservoir recurrence
///   p_{i,j} = (s_j*(1-a)^{g_j} + sum_{k=j+1}^{i-1} p_{k,j}*s_k*a) / sum_{k<i} s_k
/// with g_0 = 0 and g_j = 1 otherwise; the base case gives p_{1,0} = 1.
struct ReservoirState {
  double alpha = 0.0;                          // replay ratio in [0, 1]
  std::vector<int64_t> sizes;                  // s_0 .. s_{i-1}
  std::vector<std::vector<double>> history;    // history[k-1] = proportions at index k

  int64_t index() const { return static_cast<int64_t>(sizes.size()); }
  const std::vector<double>& proportions() const;  // p_i; throws before first update
};

/// Appends the size of the next dataset in the sequence and recomputes the
/// buffer proportions for the following transition.
ReservoirState reservoir_update(ReservoirState state, int64_t next_size);

/// Splits `total` items across proportions by largest remainder; ties go to
/// the lower index. The result sums to `total` exactly.
std::vector<int64_t> largest_remainder(const std::vector<double>& proportions, int64_t total);

/// A batch of (context, target) windows, contexts flattened row-major.
struct Batch {
  int context_length = 0;
  int64_t count = 0;
  std::vector<int32_t> context;  // count * context_length
  std::vector<int32_t> target;   // count

  void reserve(int64_t n) {
    context.reserve(static_cast<size_t>(n) * context_length);
    target.reserve(static_cast<size_t>(n));
  }
};

/// Serializable position of every cursor (and RNG) a batch source owns.
struct SourceState {
  struct Cursor {
    std::string name;
    int64_t window_pos = 0;
    int64_t wraps = 0;
  };
  std::vector<Cursor> cursors;
  std::vector<uint64_t> rng_words;
  int64_t counter = 0;  // batches already produced
};

/// Sequential tiled reader over one stream: window w covers tokens
/// [w*(L+1), w*(L+1)+L). Optionally wraps to the start when exhausted.
class WindowCursor {
 public:
  WindowCursor(std::string name, const TokenStream* stream, int context_length, bool wrap);

  void append_to(Batch& batch, int64_t n_windows);
  const std::string& name() const { return name_; }
  int64_t window_pos() const { return window_pos_; }
  int64_t wraps() const { return wraps_; }
  void seek(int64_t window_pos, int64_t wraps);

 private:
  std::string name_;
  const TokenStream* stream_;
  int context_length_;
  bool wrap_;
  int64_t capacity_;
  int64_t window_pos_ = 0;
  int64_t wraps_ = 0;
};

/// Single-consumer iterator producing the per-step training batches.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Batch next_batch() = 0;
  virtual SourceState state() const = 0;
  virtual void restore(const SourceState& state) = 0;
};

/// Replay mixing per a MixPlan: replay windows are taken sequentially from
/// each replay source in the order they were first seen, apportioned per
/// batch by largest remainder over the plan proportions; fresh windows come
/// sequentially from the new source.
class PlanReader : public BatchSource {
 public:
  PlanReader(const MixPlan& plan, const TokenStream* new_stream,
             std::vector<const TokenStream*> replay_streams, int context_length,
             bool wrap_replay);

  Batch next_batch() override;
  SourceState state() const override;
  void restore(const SourceState& state) override;

 private:
  MixPlan plan_;
  int context_length_;
  WindowCursor fresh_;
  std::vector<WindowCursor> replay_;
  std::vector<double> proportions_;
  int64_t batches_done_ = 0;
};

/// Weighted union of corpora: each window's source is a categorical draw.
class MixtureReader : public BatchSource {
 public:
  MixtureReader(std::vector<std::pair<std::string, double>> weighted_sources,
                std::vector<const TokenStream*> streams, int context_length,
                int64_t batch_size, uint64_t seed, bool wrap = true);

  Batch next_batch() override;
  SourceState state() const override;
  void restore(const SourceState& state) override;

 private:
  std::vector<double> weights_;
  std::vector<WindowCursor> sources_;
  int context_length_;
  int64_t batch_size_;
  Xoshiro256ss rng_;
  int64_t batches_done_ = 0;
};

}  // namespace ctp
