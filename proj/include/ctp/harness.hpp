#pragma once

#include <map>
#include <string>
#include <vector>

#include "ctp/data.hpp"
#include "ctp/mixer.hpp"
#include "ctp/model.hpp"
#include "ctp/optim.hpp"
#include "ctp/schedule.hpp"
#include "ctp/svg.hpp"
#include "ctp/trainer.hpp"

namespace ctp {

/// Desk-scale defaults. Paper-scale phases (300B / 200B tokens) map onto
/// 20k / 14k optimizer steps at batch 32; `scale` shrinks every budget
/// proportionally (phase lengths never drop below the final-summary window).
struct DeskConfig {
  uint64_t seed = 7;
  double scale = 1.0;
  int vocab = 64;
  int context = 8;
  int embed = 16;
  int hidden = 64;
  int64_t batch = 32;
  int64_t eval_every = 50;
  double eta_max = 3e-4;
  double eta_min = 3e-5;
  double eta_const = 1.65e-4;
  double warmup_percent = 1.0;
  double cooldown_percent = 60.0;
  double constant_percent = 25.0;
  double invsqrt_alpha = 10.0;
  double weak_lambda = 0.5;
  int64_t d0_steps = 20000;
  int64_t d1_weak_steps = 20000;
  int64_t d1_strong_steps = 14000;
  int64_t val_tokens = 20000;
  OptimConfig optim;

  int64_t scaled(int64_t steps) const;
};

/// One phase of an experiment arm, with data sources referenced by corpus
/// name. anneal_branch_steps > 0 forks an annealed side branch covering the
/// last that-many steps of the phase (the main line continues unannealed).
struct PhasePlan {
  enum class DataKind { Plan, Mixture };

  std::string name = "phase";
  DataKind data_kind = DataKind::Plan;
  std::string new_source;
  std::vector<std::pair<std::string, double>> replay;  // (corpus, proportion)
  double replay_fraction = 0.0;
  std::vector<std::pair<std::string, double>> mixture;  // (corpus, weight)
  ScheduleSpec schedule;
  int64_t steps = 0;
  bool reset_optimizer = true;
  bool continue_schedule = false;
  int64_t anneal_branch_steps = 0;
};

struct ArmPlan {
  std::string name;
  bool from_shared_prefix = true;
  std::vector<PhasePlan> phases;
};

/// A full experiment: corpora, an optional shared pre-training prefix, and
/// the arms compared against each other. All arms share corpora, model
/// configuration and seeds.
struct ExperimentSpec {
  std::string name;
  DeskConfig desk;
  std::vector<CorpusSpec> corpora;
  std::vector<PhasePlan> shared_prefix;
  std::vector<ArmPlan> arms;
  std::vector<std::string> eval_sets;  // corpus names, evaluated at every log point
  std::string out_dir;                 // empty = keep everything in memory
  bool verbose = false;
};

std::vector<std::string> preset_names();

/// Builds a fully specified experiment. Sweep presets accept a "-weak" or
/// "-strong" suffix selecting the distribution shift (default weak).
ExperimentSpec preset(const std::string& name, DeskConfig desk = {});

struct ReportRow {
  std::string arm;
  std::string tag;  // phase name, "final", or "anneal@<phase>"
  FinalSummary summary;
  double avg = 0.0;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ComparisonReport {
  std::string experiment;
  std::vector<ReportRow> rows;
  std::vector<CheckResult> checks;

  const ReportRow& row(const std::string& arm, const std::string& tag) const;
};

/// Full curves of one executed arm (branch records keyed "anneal@<phase>").
struct ArmRun {
  std::string arm;
  RunRecord record;
  std::vector<std::pair<std::string, RunRecord>> branches;
};

struct ExperimentResult {
  ComparisonReport report;
  std::vector<ArmRun> runs;
  int64_t prefix_steps = 0;

  const ArmRun& run(const std::string& arm) const;
};

/// Executes every arm with shared seeds, writes per-arm CSVs, checkpoints
/// and report.json under out_dir (when set), and evaluates the preset's
/// ordinal checks.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// One SVG per tracked metric (per-dataset validation loss and learning
/// rate); deterministic bytes for fixed input.
void emit_plots(const std::string& dir,
                const std::vector<std::pair<std::string, RunRecord>>& runs);

}  // namespace ctp
