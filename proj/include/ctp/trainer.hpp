#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctp/data.hpp"
#include "ctp/mixer.hpp"
#include "ctp/model.hpp"
#include "ctp/optim.hpp"
#include "ctp/schedule.hpp"

namespace ctp {

struct EvalSet {
  std::string name;
  const TokenStream* stream = nullptr;
};

/// Step-indexed metrics of one training run. Rows exist at every eval point,
/// at the final step, and on the final-summary sampling grid.
struct RunRecord {
  std::vector<std::string> eval_names;
  struct Row {
    int64_t step = 0;
    double lr = 0.0;
    int64_t tokens = 0;
    std::vector<double> val_loss;
  };
  std::vector<Row> rows;
};

/// Metrics CSV with header `step,lr,tokens,<dataset>_val_loss,...`.
void write_run_csv(const std::string& path, const RunRecord& record);
RunRecord read_run_csv(const std::string& path);

/// Per-dataset final loss: the mean of validation losses over the last
/// `window` steps sampled every `stride` steps.
struct FinalSummary {
  std::vector<std::string> names;
  std::vector<double> loss;

  double avg() const;
  double loss_of(const std::string& name) const;
};
FinalSummary final_loss_summary(const RunRecord& record, int64_t window = 100,
                                int64_t stride = 10);

/// Everything needed to resume a run bit-exactly: model, optional optimizer
/// moments, data cursors / RNG words, counters and the schedule position.
struct Checkpoint {
  ModelConfig model_config;
  ModelState model;
  bool has_optim = false;
  OptimState optim;
  SourceState source;
  int64_t phase_steps_done = 0;
  int64_t global_step = 0;
  int64_t tokens_consumed = 0;
  ScheduleKind schedule_kind = ScheduleKind::CosineDecay;
  int64_t schedule_step = 0;  // absolute position within the schedule
  Phase schedule_phase = Phase::Warmup;
};

// Checkpoint file: magic "CTPCKPT1", u32 version, length-prefixed sections
// (config, model tensors as little-endian 64-bit floats, optimizer tensors,
// PRNG states, cursors, counters).
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// One training phase: a data plan, a schedule (evaluated from
/// schedule_offset), a step budget and the transition policy.
struct PhaseSpec {
  std::string name = "phase";
  ScheduleSpec schedule;
  int64_t steps = 0;
  bool reset_optimizer = true;
  // When resuming an infinite schedule mid-flight, keep evaluating it from
  // the checkpoint's absolute position instead of re-warming at step 0.
  bool continue_schedule = false;
  bool allow_post_anneal = false;
};

struct TrainOptions {
  int64_t eval_every = 50;
  int64_t summary_window = 100;
  int64_t summary_stride = 10;
  double divergence_factor = 10.0;  // abort when loss > factor * ln(V) ...
  int64_t divergence_logs = 50;     // ... for this many consecutive logs
  int64_t step_base = 0;            // offsets for multi-phase records
  int64_t token_base = 0;
};

/// Owns model + optimizer state for one phase and drives batches through
/// loss_and_grad -> clip -> adamw_step at lr_at(offset + step).
class TrainLoop {
 public:
  TrainLoop(ModelConfig model_config, ModelState model, OptimConfig optim_config,
            OptimState optim, PhaseSpec phase, int64_t schedule_offset,
            std::unique_ptr<BatchSource> source, std::vector<EvalSet> evals,
            TrainOptions options);

  /// Runs the remaining steps of the phase.
  void run();
  /// Executes one step (plus any due logging); returns true when finished.
  bool step_once();

  Checkpoint make_checkpoint() const;
  const RunRecord& record() const { return record_; }
  const ModelState& model() const { return model_; }
  const OptimState& optim() const { return optim_; }
  int64_t steps_done() const { return steps_done_; }

  /// Restores loop position from a mid-phase checkpoint of the same phase.
  void restore(const Checkpoint& ckpt);

 private:
  bool should_log(int64_t k) const;

  ModelConfig model_config_;
  ModelState model_;
  OptimConfig optim_config_;
  OptimState optim_;
  PhaseSpec phase_;
  int64_t schedule_offset_;
  std::unique_ptr<BatchSource> source_;
  std::vector<EvalSet> evals_;
  TrainOptions options_;
  RunRecord record_;
  int64_t steps_done_ = 0;
  int64_t tokens_done_ = 0;
  int64_t divergent_logs_ = 0;
  double last_train_loss_ = 0.0;
};

/// Binds `next` to a checkpoint: loads the model, resets or restores the
/// optimizer, and decides the schedule position. Re-warming (offset 0) is
/// the default; an infinite schedule checkpointed before its annealing phase
/// may instead continue in place. Resuming a post-anneal checkpoint for new
/// data is rejected unless the phase sets allow_post_anneal.
struct PhaseInit {
  ModelState model;
  OptimState optim;
  int64_t schedule_offset = 0;
};
PhaseInit continue_from(const Checkpoint& ckpt, const ModelConfig& cfg, const PhaseSpec& next);

/// Fresh random initialization for a first phase.
PhaseInit fresh_init(const ModelConfig& cfg);

}  // namespace ctp
