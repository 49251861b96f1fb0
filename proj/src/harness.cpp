#include "ctp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "ctp/config.hpp"

namespace ctp {

namespace {

constexpr uint64_t kTagCorpusFamily = 0xC0;
constexpr uint64_t kTagDomainFamily = 0xD0;  // + domain index
constexpr uint64_t kTagModelInit = 0xA0;
constexpr uint64_t kTagMixtureRng = 0xB0;  // + phase index

struct ShiftChoice {
  std::string base;
  bool strong = false;
};

ShiftChoice split_shift(const std::string& name) {
  const std::string weak_sfx = "-weak", strong_sfx = "-strong";
  if (name.size() > strong_sfx.size() &&
      name.compare(name.size() - strong_sfx.size(), strong_sfx.size(), strong_sfx) == 0)
    return {name.substr(0, name.size() - strong_sfx.size()), true};
  if (name.size() > weak_sfx.size() &&
      name.compare(name.size() - weak_sfx.size(), weak_sfx.size(), weak_sfx) == 0)
    return {name.substr(0, name.size() - weak_sfx.size()), false};
  return {name, false};
}

int64_t tokens_for(const DeskConfig& d, int64_t steps) {
  return steps * d.batch * (d.context + 1);
}

CorpusSpec make_corpus(const DeskConfig& d, const std::string& name, ShiftKind shift,
                       int64_t steps, uint64_t family_seed, double lambda = 0.5,
                       int iid_index = 0) {
  CorpusSpec c;
  c.name = name;
  c.vocab_size = d.vocab;
  c.transition_seed = family_seed;
  c.shift = shift;
  c.weak_lambda = lambda;
  c.iid_index = iid_index;
  c.train_tokens = tokens_for(d, steps);
  c.val_tokens = d.val_tokens;
  return c;
}

PhasePlan plain_phase(const std::string& name, const std::string& corpus, ScheduleSpec sched,
                      int64_t steps) {
  PhasePlan p;
  p.name = name;
  p.data_kind = PhasePlan::DataKind::Plan;
  p.new_source = corpus;
  p.schedule = std::move(sched);
  p.steps = steps;
  return p;
}

PhasePlan replay_phase(const std::string& name, const std::string& corpus,
                       const std::string& replay_corpus, double fraction, ScheduleSpec sched,
                       int64_t steps) {
  PhasePlan p = plain_phase(name, corpus, std::move(sched), steps);
  if (fraction > 0.0) {
    p.replay = {{replay_corpus, 1.0}};
    p.replay_fraction = fraction;
  }
  return p;
}

PhasePlan union_phase(const std::string& name,
                      std::vector<std::pair<std::string, double>> mixture, ScheduleSpec sched,
                      int64_t steps) {
  PhasePlan p;
  p.name = name;
  p.data_kind = PhasePlan::DataKind::Mixture;
  p.mixture = std::move(mixture);
  p.schedule = std::move(sched);
  p.steps = steps;
  return p;
}

}  // namespace

int64_t DeskConfig::scaled(int64_t steps) const {
  const auto s = static_cast<int64_t>(std::llround(static_cast<double>(steps) * scale));
  return std::max<int64_t>(s, 120);  // keep phases longer than the summary window
}

std::vector<std::string> preset_names() {
  return {"warmup-sweep",     "rewarm-sweep",       "replay-sweep",
          "continual-vs-union", "same-data-rewarm", "infinite-vs-cosine",
          "three-splits",     "domain-incremental"};
}

ExperimentSpec preset(const std::string& name, DeskConfig d) {
  const ShiftChoice choice = split_shift(name);
  const std::string& base = choice.base;
  const uint64_t family = derive_seed(d.seed, kTagCorpusFamily);

  ExperimentSpec spec;
  spec.name = name;
  spec.desk = d;

  const int64_t s0 = d.scaled(d.d0_steps);
  const int64_t s1 = choice.strong ? d.scaled(d.d1_strong_steps) : d.scaled(d.d1_weak_steps);
  const std::string d1_name = choice.strong ? "strong" : "weak";

  auto cosine = [&d](double eta_max, int64_t total) {
    return cosine_schedule(eta_max, 0.1 * eta_max, total, d.warmup_percent);
  };

  auto two_dataset_setup = [&] {
    spec.corpora.push_back(make_corpus(d, "base", ShiftKind::Base, s0, family));
    spec.corpora.push_back(choice.strong
                               ? make_corpus(d, "strong", ShiftKind::StrongShift, s1, family)
                               : make_corpus(d, "weak", ShiftKind::WeakShift, s1, family,
                                             d.weak_lambda));
    spec.eval_sets = {"base", d1_name};
    spec.shared_prefix = {plain_phase("pretrain", "base", cosine(d.eta_max, s0), s0)};
  };

  auto union_arm = [&](const std::string& arm_name) {
    const double w0 = static_cast<double>(s0) / static_cast<double>(s0 + s1);
    ArmPlan arm;
    arm.name = arm_name;
    arm.from_shared_prefix = false;
    arm.phases = {union_phase("union", {{"base", w0}, {d1_name, 1.0 - w0}},
                              cosine(d.eta_max, s0 + s1), s0 + s1)};
    return arm;
  };

  if (base == "warmup-sweep") {
    two_dataset_setup();
    const std::pair<const char*, double> sweeps[] = {
        {"warmup-0", 0.0}, {"warmup-0.5", 0.5}, {"warmup-1", 1.0}, {"warmup-2", 2.0}};
    for (const auto& [label, pct] : sweeps) {
      ArmPlan arm;
      arm.name = label;
      arm.phases = {plain_phase("cpt", d1_name,
                                cosine_schedule(d.eta_max, 0.1 * d.eta_max, s1, pct), s1)};
      spec.arms.push_back(std::move(arm));
    }
    return spec;
  }

  if (base == "rewarm-sweep") {
    two_dataset_setup();
    ArmPlan cmin;
    cmin.name = "const-min";
    cmin.phases = {plain_phase("cpt", d1_name, constant_schedule(d.eta_min, 0, s1), s1)};
    spec.arms.push_back(std::move(cmin));
    ArmPlan cmax;
    cmax.name = "const-max";
    const int64_t wu = percent_steps(d.warmup_percent, s1);
    cmax.phases = {plain_phase("cpt", d1_name, constant_schedule(d.eta_max, wu, s1 - wu), s1)};
    spec.arms.push_back(std::move(cmax));
    const std::pair<const char*, double> sweeps[] = {
        {"rewarm-half", 0.5}, {"rewarm-1x", 1.0}, {"rewarm-2x", 2.0}};
    for (const auto& [label, mult] : sweeps) {
      ArmPlan arm;
      arm.name = label;
      arm.phases = {plain_phase("cpt", d1_name, cosine(mult * d.eta_max, s1), s1)};
      spec.arms.push_back(std::move(arm));
    }
    return spec;
  }

  if (base == "replay-sweep") {
    two_dataset_setup();
    for (double pct : {0.0, 0.01, 0.05, 0.10, 0.25, 0.50}) {
      ArmPlan arm;
      arm.name = "replay-" + std::to_string(static_cast<int>(std::lround(pct * 100)));
      arm.phases = {replay_phase("cpt", d1_name, "base", pct, cosine(d.eta_max, s1), s1)};
      spec.arms.push_back(std::move(arm));
    }
    spec.arms.push_back(union_arm("union"));
    return spec;
  }

  if (base == "continual-vs-union") {
    two_dataset_setup();
    const double replay_pct = choice.strong ? 0.25 : 0.05;
    ArmPlan cmin;
    cmin.name = "const-min";
    cmin.phases = {plain_phase("cpt", d1_name, constant_schedule(d.eta_min, 0, s1), s1)};
    spec.arms.push_back(std::move(cmin));
    ArmPlan rewarm;
    rewarm.name = "rewarm";
    rewarm.phases = {plain_phase("cpt", d1_name, cosine(d.eta_max, s1), s1)};
    spec.arms.push_back(std::move(rewarm));
    ArmPlan rr;
    rr.name = "rewarm-replay";
    rr.phases = {replay_phase("cpt", d1_name, "base", replay_pct, cosine(d.eta_max, s1), s1)};
    spec.arms.push_back(std::move(rr));
    ArmPlan d1only;
    d1only.name = "d1-only";
    d1only.from_shared_prefix = false;
    d1only.phases = {plain_phase("scratch", d1_name, cosine(d.eta_max, s1), s1)};
    spec.arms.push_back(std::move(d1only));
    spec.arms.push_back(union_arm("union"));
    return spec;
  }

  if (base == "same-data-rewarm") {
    spec.corpora.push_back(make_corpus(d, "base", ShiftKind::Base, s0, family));
    spec.corpora.push_back(
        make_corpus(d, "self", ShiftKind::IidSplit, s0, family, 0.0, /*iid_index=*/1));
    spec.eval_sets = {"base"};
    spec.shared_prefix = {plain_phase("pretrain", "base", cosine(d.eta_max, s0), s0)};
    ArmPlan cmin;
    cmin.name = "const-min";
    cmin.phases = {plain_phase("cpt", "self", constant_schedule(d.eta_min, 0, s0), s0)};
    spec.arms.push_back(std::move(cmin));
    const std::pair<const char*, double> sweeps[] = {
        {"rewarm-1.5e-4", 0.5}, {"rewarm-3e-4", 1.0}, {"rewarm-6e-4", 2.0}};
    for (const auto& [label, mult] : sweeps) {
      ArmPlan arm;
      arm.name = label;
      arm.phases = {plain_phase("cpt", "self", cosine(mult * d.eta_max, s0), s0)};
      spec.arms.push_back(std::move(arm));
    }
    return spec;
  }

  if (base == "infinite-vs-cosine") {
    spec.corpora.push_back(make_corpus(d, "base", ShiftKind::Base, s0, family));
    spec.eval_sets = {"base"};
    ArmPlan cos_arm;
    cos_arm.name = "cosine";
    cos_arm.from_shared_prefix = false;
    cos_arm.phases = {plain_phase("train", "base", cosine(d.eta_max, s0), s0)};
    spec.arms.push_back(std::move(cos_arm));
    for (ScheduleKind kind : {ScheduleKind::InfiniteCosine, ScheduleKind::InfiniteInvSqrt}) {
      ArmPlan arm;
      arm.name = kind == ScheduleKind::InfiniteCosine ? "cosine-inf" : "invsqrt-inf";
      arm.from_shared_prefix = false;
      arm.phases = {plain_phase(
          "train", "base",
          infinite_schedule(kind, d.eta_max, d.eta_min, d.eta_const, s0, d.warmup_percent,
                            d.cooldown_percent, d.constant_percent, d.invsqrt_alpha),
          s0)};
      spec.arms.push_back(std::move(arm));
    }
    return spec;
  }

  if (base == "three-splits") {
    const int64_t split = d.scaled(d.d0_steps / 3);
    for (int i = 0; i < 3; ++i)
      spec.corpora.push_back(make_corpus(d, "split" + std::to_string(i), ShiftKind::IidSplit,
                                         split, family, 0.0, i));
    spec.eval_sets = {"split0"};
    const int64_t anneal = std::max<int64_t>(percent_steps(14.0, split), 120);

    ArmPlan cos_arm;
    cos_arm.name = "repeated-cosine";
    cos_arm.from_shared_prefix = false;
    for (int i = 0; i < 3; ++i)
      cos_arm.phases.push_back(plain_phase("split" + std::to_string(i),
                                           "split" + std::to_string(i),
                                           cosine(d.eta_max, split), split));
    spec.arms.push_back(std::move(cos_arm));

    for (ScheduleKind kind : {ScheduleKind::InfiniteCosine, ScheduleKind::InfiniteInvSqrt}) {
      ArmPlan arm;
      arm.name = kind == ScheduleKind::InfiniteCosine ? "cosine-inf" : "invsqrt-inf";
      arm.from_shared_prefix = false;
      ScheduleSpec inf;
      inf.kind = kind;
      inf.eta_max = d.eta_max;
      inf.eta_min = d.eta_min;
      inf.eta_const = d.eta_const;
      inf.invsqrt_steepness = d.invsqrt_alpha;
      inf.warmup_steps = percent_steps(d.warmup_percent, 3 * split);
      inf.cooldown_steps = percent_steps(d.cooldown_percent, 3 * split);
      inf.constant_steps = kUnboundedSteps;  // the constant phase carries all future splits
      inf.anneal_steps = 0;
      inf.validate();
      for (int i = 0; i < 3; ++i) {
        PhasePlan p = plain_phase("split" + std::to_string(i), "split" + std::to_string(i),
                                  inf, split);
        p.continue_schedule = i > 0;
        p.anneal_branch_steps = anneal;
        arm.phases.push_back(std::move(p));
      }
      spec.arms.push_back(std::move(arm));
    }
    return spec;
  }

  if (base == "domain-incremental") {
    const double alpha = 0.25;
    const int64_t sizes[] = {d.scaled(8000), d.scaled(6000), d.scaled(4000), d.scaled(2000)};
    std::vector<std::pair<std::string, double>> mixture;
    int64_t total = 0;
    for (int64_t s : sizes) total += s;
    for (int i = 0; i < 4; ++i) {
      const std::string dom = "dom" + std::to_string(i);
      spec.corpora.push_back(make_corpus(d, dom, ShiftKind::Base, sizes[i],
                                         derive_seed(d.seed, kTagDomainFamily + i)));
      spec.eval_sets.push_back(dom);
      mixture.emplace_back(dom, static_cast<double>(sizes[i]) / static_cast<double>(total));
    }

    ArmPlan seq;
    seq.name = "seq-reservoir";
    seq.from_shared_prefix = false;
    ReservoirState reservoir;
    reservoir.alpha = alpha;
    for (int i = 0; i < 4; ++i) {
      PhasePlan p = plain_phase("dom" + std::to_string(i), "dom" + std::to_string(i),
                                cosine(d.eta_max, sizes[i]), sizes[i]);
      if (i > 0) {
        p.replay_fraction = alpha;
        const auto& props = reservoir.proportions();
        for (int j = 0; j < i; ++j)
          p.replay.emplace_back("dom" + std::to_string(j), props[static_cast<size_t>(j)]);
      }
      reservoir = reservoir_update(std::move(reservoir), sizes[i]);
      seq.phases.push_back(std::move(p));
    }
    spec.arms.push_back(std::move(seq));

    ArmPlan mix;
    mix.name = "mixture";
    mix.from_shared_prefix = false;
    mix.phases = {union_phase("mixture", mixture, cosine(d.eta_max, total), total)};
    spec.arms.push_back(std::move(mix));
    return spec;
  }

  throw std::invalid_argument("unknown preset '" + name + "'");
}

const ReportRow& ComparisonReport::row(const std::string& arm, const std::string& tag) const {
  for (const auto& r : rows)
    if (r.arm == arm && r.tag == tag) return r;
  throw std::invalid_argument("report: no row for arm '" + arm + "' tag '" + tag + "'");
}

const ArmRun& ExperimentResult::run(const std::string& arm) const {
  for (const auto& r : runs)
    if (r.arm == arm) return r;
  throw std::invalid_argument("result: no run for arm '" + arm + "'");
}

namespace {

struct CorpusBank {
  std::map<std::string, Corpus> by_name;

  const Corpus& get(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("unknown corpus '" + name + "'");
    return it->second;
  }
};

std::unique_ptr<BatchSource> make_source(const PhasePlan& phase, const CorpusBank& bank,
                                         const DeskConfig& d, uint64_t mixture_seed) {
  if (phase.data_kind == PhasePlan::DataKind::Mixture) {
    std::vector<const TokenStream*> streams;
    for (const auto& [name, w] : phase.mixture) streams.push_back(&bank.get(name).train);
    return std::make_unique<MixtureReader>(phase.mixture, streams, d.context, d.batch,
                                           mixture_seed, /*wrap=*/true);
  }
  MixPlan plan;
  plan.new_source = phase.new_source;
  plan.replay_sources = phase.replay;
  plan.replay_fraction = phase.replay_fraction;
  plan.batch_size = d.batch;
  std::vector<const TokenStream*> replay_streams;
  for (const auto& [name, p] : phase.replay) replay_streams.push_back(&bank.get(name).train);
  return std::make_unique<PlanReader>(plan, &bank.get(phase.new_source).train, replay_streams,
                                      d.context, /*wrap_replay=*/true);
}

PhaseSpec to_phase_spec(const PhasePlan& plan) {
  PhaseSpec spec;
  spec.name = plan.name;
  spec.schedule = plan.schedule;
  spec.steps = plan.steps;
  spec.reset_optimizer = plan.reset_optimizer;
  spec.continue_schedule = plan.continue_schedule;
  return spec;
}

struct ArmExecution {
  ArmRun run;
  std::vector<ReportRow> rows;
  Checkpoint final_ckpt;
};

ArmExecution run_arm(const ExperimentSpec& spec, const CorpusBank& bank, const ArmPlan& arm,
                     const ModelConfig& mcfg, const Checkpoint* prefix_ckpt,
                     int64_t phase_index_base, int64_t step_base, int64_t token_base) {
  ArmExecution exec;
  exec.run.arm = arm.name;

  std::vector<EvalSet> evals;
  for (const auto& name : spec.eval_sets) evals.push_back({name, &bank.get(name).val});

  Checkpoint prev;
  bool have_prev = false;
  if (arm.from_shared_prefix) {
    if (prefix_ckpt == nullptr)
      throw std::invalid_argument("arm '" + arm.name + "' expects a shared prefix");
    prev = *prefix_ckpt;
    have_prev = true;
  }

  for (size_t pi = 0; pi < arm.phases.size(); ++pi) {
    const PhasePlan& plan = arm.phases[pi];
    PhaseSpec phase = to_phase_spec(plan);

    PhaseInit init = have_prev ? continue_from(prev, mcfg, phase) : fresh_init(mcfg);
    if (!have_prev && phase.continue_schedule)
      throw std::invalid_argument("arm '" + arm.name +
                                  "': cannot continue a schedule from fresh init");

    TrainOptions opts;
    opts.eval_every = spec.desk.eval_every;
    opts.step_base = step_base;
    opts.token_base = token_base;

    const uint64_t mixture_seed =
        derive_seed(spec.desk.seed, kTagMixtureRng + static_cast<uint64_t>(phase_index_base + pi));
    TrainLoop loop(mcfg, std::move(init.model), spec.desk.optim, std::move(init.optim), phase,
                   init.schedule_offset, make_source(plan, bank, spec.desk, mixture_seed),
                   evals, opts);

    if (plan.anneal_branch_steps > 0) {
      const int64_t branch_at = plan.steps - plan.anneal_branch_steps;
      if (branch_at < 0)
        throw std::invalid_argument("phase '" + plan.name +
                                    "': anneal branch longer than the phase");
      while (loop.steps_done() < branch_at) loop.step_once();
      const Checkpoint fork = loop.make_checkpoint();

      // The branch anneals exponentially from the current learning rate to
      // eta_min over the remaining steps, consuming the same data the main
      // (constant) line is about to see.
      const double lr_now = lr_at(phase.schedule, init.schedule_offset + branch_at);
      ScheduleSpec anneal;
      anneal.kind = ScheduleKind::InfiniteCosine;
      anneal.eta_max = lr_now;
      anneal.eta_const = lr_now;
      anneal.eta_min = std::min(spec.desk.eta_min, lr_now);
      anneal.anneal_steps = plan.anneal_branch_steps;
      anneal.validate();

      PhaseSpec branch_phase;
      branch_phase.name = plan.name + "-anneal";
      branch_phase.schedule = anneal;
      branch_phase.steps = plan.anneal_branch_steps;

      TrainOptions branch_opts = opts;
      branch_opts.step_base = step_base + branch_at;
      branch_opts.token_base = fork.tokens_consumed;

      auto branch_source = make_source(plan, bank, spec.desk, mixture_seed);
      branch_source->restore(fork.source);
      TrainLoop branch(mcfg, fork.model, spec.desk.optim, fork.optim, branch_phase,
                       /*schedule_offset=*/0, std::move(branch_source), evals, branch_opts);
      branch.run();

      const std::string tag = "anneal@" + plan.name;
      const FinalSummary branch_summary = final_loss_summary(branch.record());
      exec.rows.push_back({arm.name, tag, branch_summary, branch_summary.avg()});
      exec.run.branches.emplace_back(tag, branch.record());
    }

    loop.run();
    prev = loop.make_checkpoint();
    have_prev = true;

    if (exec.run.record.eval_names.empty())
      exec.run.record.eval_names = loop.record().eval_names;
    for (const auto& row : loop.record().rows) exec.run.record.rows.push_back(row);

    const FinalSummary summary = final_loss_summary(loop.record());
    exec.rows.push_back({arm.name, plan.name, summary, summary.avg()});

    step_base += plan.steps;
    token_base = prev.tokens_consumed;

    if (spec.verbose)
      std::cout << "  [" << arm.name << "] phase " << plan.name << " done ("
                << plan.steps << " steps)\n";
  }

  exec.rows.push_back({arm.name, "final", exec.rows.back().summary, exec.rows.back().avg});
  exec.final_ckpt = prev;
  return exec;
}

double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(b), 1e-12);
}

// Largest (loss_a - loss_b) over logged steps in (from, to] for one dataset.
double peak_excess(const RunRecord& a, const RunRecord& b, const std::string& dataset,
                   int64_t from, int64_t to) {
  size_t di = 0;
  while (di < a.eval_names.size() && a.eval_names[di] != dataset) ++di;
  if (di == a.eval_names.size())
    throw std::invalid_argument("peak_excess: no dataset " + dataset);
  double peak = -1e300;
  size_t j = 0;
  for (const auto& row : a.rows) {
    if (row.step <= from || row.step > to) continue;
    while (j < b.rows.size() && b.rows[j].step < row.step) ++j;
    if (j == b.rows.size() || b.rows[j].step != row.step) continue;
    peak = std::max(peak, row.val_loss[di] - b.rows[j].val_loss[di]);
  }
  if (peak == -1e300) throw std::runtime_error("peak_excess: no overlapping log points");
  return peak;
}

double peak_loss(const RunRecord& a, const std::string& dataset, int64_t from, int64_t to) {
  size_t di = 0;
  while (di < a.eval_names.size() && a.eval_names[di] != dataset) ++di;
  if (di == a.eval_names.size()) throw std::invalid_argument("peak_loss: no dataset " + dataset);
  double peak = -1e300;
  for (const auto& row : a.rows) {
    if (row.step <= from || row.step > to) continue;
    peak = std::max(peak, row.val_loss[di]);
  }
  if (peak == -1e300) throw std::runtime_error("peak_loss: no log points in range");
  return peak;
}

std::string fmt3(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::vector<CheckResult> evaluate_checks(const ExperimentSpec& spec,
                                         const ExperimentResult& result) {
  std::vector<CheckResult> checks;
  const ShiftChoice choice = split_shift(spec.name);
  const std::string& base = choice.base;
  const ComparisonReport& report = result.report;
  const std::string d1_name = choice.strong ? "strong" : "weak";

  auto add = [&checks](const std::string& name, bool pass, const std::string& detail) {
    checks.push_back({name, pass, detail});
  };

  if (base == "same-data-rewarm") {
    const int64_t phase_steps = spec.arms[0].phases[0].steps;
    const int64_t from = result.prefix_steps;
    const int64_t to = result.prefix_steps + phase_steps / 10;
    const RunRecord& cmin = result.run("const-min").record;
    double peaks[3];
    const char* arms[3] = {"rewarm-1.5e-4", "rewarm-3e-4", "rewarm-6e-4"};
    for (int i = 0; i < 3; ++i)
      peaks[i] = peak_excess(result.run(arms[i]).record, cmin, "base", from, to);
    add("rewarm-peak-excess",
        peaks[0] >= 0.02 && peaks[1] >= 0.02 && peaks[2] >= 0.02,
        "peak D0 excess over const-min in first 10%: " + fmt3(peaks[0]) + " / " +
            fmt3(peaks[1]) + " / " + fmt3(peaks[2]) + " (need >= 0.02)");
    add("rewarm-peak-ordering", peaks[2] >= peaks[1] && peaks[1] >= peaks[0],
        "peak excess ordered by eta_max: " + fmt3(peaks[2]) + " >= " + fmt3(peaks[1]) +
            " >= " + fmt3(peaks[0]));
  } else if (base == "replay-sweep") {
    const char* arms[6] = {"replay-0", "replay-1", "replay-5", "replay-10", "replay-25",
                           "replay-50"};
    bool monotone = true;
    std::string seq;
    double prevv = 0.0;
    for (int i = 0; i < 6; ++i) {
      const double v = report.row(arms[i], "final").summary.loss_of("base");
      if (i > 0 && v > prevv) monotone = false;
      seq += (i ? " " : "") + fmt3(v);
      prevv = v;
    }
    add("replay-d0-non-increasing", monotone, "final D0 loss by replay %: " + seq);
    const double d1_0 = report.row("replay-0", "final").summary.loss_of(d1_name);
    const double d1_5 = report.row("replay-5", "final").summary.loss_of(d1_name);
    add("replay-d1-cost", std::abs(d1_5 - d1_0) <= 0.05,
        "final D1 loss 5% vs 0% replay: " + fmt3(d1_5) + " vs " + fmt3(d1_0) +
            " (need within 0.05)");
  } else if (base == "continual-vs-union") {
    const double avg_rr = report.row("rewarm-replay", "final").avg;
    const double avg_union = report.row("union", "final").avg;
    add("avg-matches-union", relative_gap(avg_rr, avg_union) <= 0.05,
        "AVG loss rewarm-replay " + fmt3(avg_rr) + " vs union " + fmt3(avg_union) +
            " (need within 5%)");
    const double d1_cmin = report.row("const-min", "final").summary.loss_of(d1_name);
    const double d1_rewarm = report.row("rewarm", "final").summary.loss_of(d1_name);
    const double d1_rr = report.row("rewarm-replay", "final").summary.loss_of(d1_name);
    add("adaptation-needs-rewarming", d1_cmin > d1_rewarm && d1_cmin > d1_rr,
        "final D1 loss const-min " + fmt3(d1_cmin) + " vs rewarm " + fmt3(d1_rewarm) +
            " / rewarm-replay " + fmt3(d1_rr));
  } else if (base == "warmup-sweep") {
    const char* arms[4] = {"warmup-0", "warmup-0.5", "warmup-1", "warmup-2"};
    bool span_ok = true;
    std::string detail;
    for (const auto& dataset : spec.eval_sets) {
      double lo = 1e300, hi = -1e300;
      for (const char* a : arms) {
        const double v = report.row(a, "final").summary.loss_of(dataset);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double span = (hi - lo) / lo;
      span_ok = span_ok && span < 0.01;
      detail += dataset + " span " + fmt3(100.0 * span) + "% ";
    }
    add("warmup-final-span", span_ok, detail + "(need < 1%)");
    const int64_t phase_steps = spec.arms[0].phases[0].steps;
    const int64_t from = result.prefix_steps;
    const int64_t to = result.prefix_steps + std::max<int64_t>(phase_steps / 50, 1);
    const double p0 = peak_loss(result.run("warmup-0").record, "base", from, to);
    const double p2 = peak_loss(result.run("warmup-2").record, "base", from, to);
    add("warmup-transient", p0 > p2,
        "peak D0 loss in first 2%: no-warmup " + fmt3(p0) + " vs 2% warmup " + fmt3(p2));
  } else if (base == "infinite-vs-cosine") {
    const double cos_final = report.row("cosine", "final").summary.loss_of("base");
    const double inf_cos = report.row("cosine-inf", "final").summary.loss_of("base");
    const double inf_inv = report.row("invsqrt-inf", "final").summary.loss_of("base");
    add("cosine-inf-parity", relative_gap(inf_cos, cos_final) <= 0.02,
        "final loss cosine-inf " + fmt3(inf_cos) + " vs cosine " + fmt3(cos_final) +
            " (need within 2%)");
    add("invsqrt-inf-parity", relative_gap(inf_inv, cos_final) <= 0.02,
        "final loss invsqrt-inf " + fmt3(inf_inv) + " vs cosine " + fmt3(cos_final) +
            " (need within 2%)");
  } else if (base == "three-splits") {
    for (const char* arm : {"cosine-inf", "invsqrt-inf"}) {
      bool ok = true;
      std::string detail;
      for (int i = 0; i < 3; ++i) {
        const std::string split = "split" + std::to_string(i);
        const double cos_v = report.row("repeated-cosine", split).summary.loss_of("split0");
        const double inf_v = report.row(arm, "anneal@" + split).summary.loss_of("split0");
        ok = ok && relative_gap(inf_v, cos_v) <= 0.02;
        detail += split + " " + fmt3(inf_v) + "/" + fmt3(cos_v) + " ";
      }
      add(std::string(arm) + "-post-anneal-parity", ok, detail + "(need within 2%)");
    }
  }
  return checks;
}

nlohmann::json report_to_json(const ComparisonReport& report) {
  nlohmann::json j;
  j["experiment"] = report.experiment;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row;
    row["arm"] = r.arm;
    row["tag"] = r.tag;
    nlohmann::json losses;
    for (size_t i = 0; i < r.summary.names.size(); ++i)
      losses[r.summary.names[i]] = r.summary.loss[i];
    row["final_loss"] = losses;
    row["avg"] = r.avg;
    rows.push_back(row);
  }
  j["rows"] = rows;
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : report.checks)
    checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  j["checks"] = checks;
  return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.arms.empty()) throw std::invalid_argument("experiment: no arms");

  CorpusBank bank;
  for (const auto& cs : spec.corpora) bank.by_name.emplace(cs.name, gen_corpus(cs));

  const std::string out = spec.out_dir;
  if (!out.empty()) {
    std::filesystem::create_directories(out + "/data");
    nlohmann::json sums;
    for (const auto& [name, corpus] : bank.by_name) {
      write_token_stream(out + "/data/" + name + ".train.ctpt", corpus.train);
      write_token_stream(out + "/data/" + name + ".val.ctpt", corpus.val);
      sums[name] = {{"train", corpus.train.size() ? stream_checksum(corpus.train) : 0},
                    {"val", stream_checksum(corpus.val)}};
    }
    std::ofstream(out + "/data/checksums.json") << sums.dump(2) << "\n";
  }

  ModelConfig mcfg;
  mcfg.vocab_size = spec.desk.vocab;
  mcfg.context_length = spec.desk.context;
  mcfg.embed_dim = spec.desk.embed;
  mcfg.hidden_dim = spec.desk.hidden;
  mcfg.init_seed = derive_seed(spec.desk.seed, kTagModelInit);

  ExperimentResult result;
  result.report.experiment = spec.name;

  // Shared pre-training prefix, run once and reused by every arm that
  // declares from_shared_prefix.
  Checkpoint prefix_ckpt;
  RunRecord prefix_record;
  bool have_prefix = false;
  int64_t prefix_steps = 0, prefix_tokens = 0;
  if (!spec.shared_prefix.empty()) {
    ArmPlan prefix_arm;
    prefix_arm.name = "prefix";
    prefix_arm.from_shared_prefix = false;
    prefix_arm.phases = spec.shared_prefix;
    if (spec.verbose) std::cout << "[" << spec.name << "] shared prefix\n";
    ArmExecution exec = run_arm(spec, bank, prefix_arm, mcfg, nullptr, 0, 0, 0);
    prefix_ckpt = exec.final_ckpt;
    prefix_record = exec.run.record;
    have_prefix = true;
    for (const auto& p : spec.shared_prefix) prefix_steps += p.steps;
    prefix_tokens = prefix_ckpt.tokens_consumed;
  }
  result.prefix_steps = prefix_steps;

  for (const auto& arm : spec.arms) {
    if (spec.verbose) std::cout << "[" << spec.name << "] arm " << arm.name << "\n";
    const bool use_prefix = arm.from_shared_prefix && have_prefix;
    ArmExecution exec = run_arm(spec, bank, arm, mcfg, use_prefix ? &prefix_ckpt : nullptr,
                                static_cast<int64_t>(spec.shared_prefix.size()),
                                use_prefix ? prefix_steps : 0,
                                use_prefix ? prefix_tokens : 0);
    // Prepend the shared-prefix curve so each arm's CSV is a full history.
    if (use_prefix) {
      RunRecord full;
      full.eval_names = prefix_record.eval_names;
      full.rows = prefix_record.rows;
      for (const auto& row : exec.run.record.rows) full.rows.push_back(row);
      exec.run.record = std::move(full);
    }
    for (auto& row : exec.rows) result.report.rows.push_back(std::move(row));
    result.runs.push_back(std::move(exec.run));

    if (!out.empty()) {
      const auto& run = result.runs.back();
      write_run_csv(out + "/" + run.arm + ".csv", run.record);
      for (const auto& [tag, record] : run.branches) {
        std::string file_tag = tag;
        std::replace(file_tag.begin(), file_tag.end(), '@', '_');
        write_run_csv(out + "/" + run.arm + "." + file_tag + ".csv", record);
      }
      save_checkpoint(out + "/" + run.arm + ".ckpt", exec.final_ckpt);
    }
  }

  result.report.checks = evaluate_checks(spec, result);

  if (!out.empty()) {
    std::ofstream(out + "/report.json") << report_to_json(result.report).dump(2) << "\n";
    std::vector<std::pair<std::string, RunRecord>> labelled;
    for (const auto& run : result.runs) labelled.emplace_back(run.arm, run.record);
    emit_plots(out, labelled);
  }
  return result;
}

void emit_plots(const std::string& dir,
                const std::vector<std::pair<std::string, RunRecord>>& runs) {
  if (runs.empty()) throw std::invalid_argument("emit_plots: no runs");
  std::filesystem::create_directories(dir);

  // One chart per tracked dataset.
  std::vector<std::string> datasets = runs.front().second.eval_names;
  for (size_t di = 0; di < datasets.size(); ++di) {
    ChartSpec chart;
    chart.title = datasets[di] + " validation loss";
    chart.x_label = "step";
    chart.y_label = "loss (nats)";
    for (const auto& [label, record] : runs) {
      Series s;
      s.label = label;
      size_t idx = 0;
      while (idx < record.eval_names.size() && record.eval_names[idx] != datasets[di]) ++idx;
      if (idx == record.eval_names.size()) continue;
      for (const auto& row : record.rows)
        s.points.emplace_back(static_cast<double>(row.step), row.val_loss[idx]);
      chart.series.push_back(std::move(s));
    }
    std::ofstream(dir + "/loss_" + datasets[di] + ".svg") << line_chart_svg(chart);
  }

  ChartSpec lr_chart;
  lr_chart.title = "learning rate";
  lr_chart.x_label = "step";
  lr_chart.y_label = "lr";
  for (const auto& [label, record] : runs) {
    Series s;
    s.label = label;
    for (const auto& row : record.rows)
      s.points.emplace_back(static_cast<double>(row.step), row.lr);
    lr_chart.series.push_back(std::move(s));
  }
  std::ofstream(dir + "/lr.svg") << line_chart_svg(lr_chart);
}

}  // namespace ctp
