#include "ctp/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace ctp {

namespace {

constexpr double kPi = 3.14159265358979323846;

[[noreturn]] void range_error(const ScheduleSpec& spec, int64_t t) {
  throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [0, " +
                          (spec.unbounded() ? std::string("inf")
                                            : std::to_string(spec.total_steps())) +
                          "] for " + to_string(spec.kind));
}

double cooldown_lr(const ScheduleSpec& spec, int64_t t) {
  const double u = static_cast<double>(t - spec.warmup_end()) /
                   static_cast<double>(spec.cooldown_steps);
  if (spec.kind == ScheduleKind::InfiniteCosine) {
    return spec.eta_const +
           (spec.eta_max - spec.eta_const) / 2.0 * (1.0 + std::cos(kPi * u));
  }
  const double a = spec.invsqrt_steepness;
  const double h1 = 1.0 / std::sqrt(1.0 + a) - 1.0;
  const double hu = 1.0 / std::sqrt(1.0 + a * u) - 1.0;
  return spec.eta_max + (spec.eta_const - spec.eta_max) / h1 * hu;
}

double anneal_lr(const ScheduleSpec& spec, int64_t t) {
  const double u = static_cast<double>(t - spec.constant_end()) /
                   static_cast<double>(spec.anneal_steps);
  return spec.eta_const * std::pow(spec.eta_min / spec.eta_const, u);
}

}  // namespace

const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::CosineDecay: return "cosine_decay";
    case ScheduleKind::InfiniteCosine: return "infinite_cosine";
    case ScheduleKind::InfiniteInvSqrt: return "infinite_invsqrt";
    case ScheduleKind::Constant: return "constant";
  }
  return "?";
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Warmup: return "warmup";
    case Phase::Cooldown: return "cooldown";
    case Phase::Constant: return "constant";
    case Phase::Annealing: return "annealing";
    case Phase::Decay: return "decay";
  }
  return "?";
}

void ScheduleSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("schedule: " + msg); };
  if (eta_max < 0.0) fail("eta_max must be >= 0");
  if (eta_min < 0.0 || eta_min > eta_max) fail("need 0 <= eta_min <= eta_max");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (anneal_steps < 0) fail("anneal_steps must be >= 0");
  if (cooldown_steps < 0) fail("cooldown_steps must be >= 0");
  if (constant_steps < 0 && constant_steps != kUnboundedSteps)
    fail("constant_steps must be >= 0 or the unbounded sentinel");

  switch (kind) {
    case ScheduleKind::CosineDecay:
      if (cooldown_steps != 0 || constant_steps != 0)
        fail("cosine decay has no cooldown/constant phase");
      if (warmup_steps + anneal_steps <= 0) fail("total steps must be > 0");
      break;
    case ScheduleKind::Constant:
      if (cooldown_steps != 0 || anneal_steps != 0)
        fail("constant schedule has no cooldown/annealing phase");
      if (!unbounded() && warmup_steps + constant_steps <= 0)
        fail("total steps must be > 0");
      break;
    case ScheduleKind::InfiniteCosine:
    case ScheduleKind::InfiniteInvSqrt:
      if (!(eta_const > 0.0) || eta_const < eta_min || eta_const > eta_max)
        fail("need 0 < eta_min <= eta_const <= eta_max for infinite kinds");
      if (kind == ScheduleKind::InfiniteInvSqrt && !(invsqrt_steepness > 0.0))
        fail("invsqrt_steepness must be > 0");
      if (!unbounded() && warmup_steps + cooldown_steps + constant_steps + anneal_steps <= 0)
        fail("total steps must be > 0");
      break;
  }
}

int64_t ScheduleSpec::constant_end() const {
  if (unbounded())
    throw std::domain_error("schedule: constant phase is open ended, t_ann undefined");
  if (kind == ScheduleKind::Constant) return warmup_steps + constant_steps;
  return warmup_steps + cooldown_steps + constant_steps;
}

int64_t ScheduleSpec::total_steps() const {
  switch (kind) {
    case ScheduleKind::CosineDecay: return warmup_steps + anneal_steps;
    case ScheduleKind::Constant: return constant_end();
    default: return constant_end() + anneal_steps;
  }
}

double lr_at(const ScheduleSpec& spec, int64_t t) {
  if (t < 0) range_error(spec, t);
  if (t < spec.warmup_steps)
    return spec.eta_max * static_cast<double>(t) / static_cast<double>(spec.warmup_steps);
  // With no warmup the schedule starts directly at eta_max: for t = 0 every
  // branch below evaluates to eta_max.
  switch (spec.kind) {
    case ScheduleKind::Constant:
      if (!spec.unbounded() && t > spec.total_steps()) range_error(spec, t);
      return spec.eta_max;
    case ScheduleKind::CosineDecay: {
      if (t > spec.total_steps()) range_error(spec, t);
      if (spec.anneal_steps == 0) return spec.eta_max;
      const double u = static_cast<double>(t - spec.warmup_steps) /
                       static_cast<double>(spec.anneal_steps);
      return spec.eta_min + (spec.eta_max - spec.eta_min) / 2.0 * (std::cos(kPi * u) + 1.0);
    }
    default: {
      if (t < spec.cooldown_end()) return cooldown_lr(spec, t);
      if (spec.unbounded() || t < spec.constant_end()) return spec.eta_const;
      if (t > spec.total_steps()) range_error(spec, t);
      if (spec.anneal_steps == 0) return spec.eta_const;
      return anneal_lr(spec, t);
    }
  }
}

Phase phase_of(const ScheduleSpec& spec, int64_t t) {
  if (t < 0 || (!spec.unbounded() && t > spec.total_steps())) range_error(spec, t);
  if (t == 0 || t < spec.warmup_steps) return Phase::Warmup;
  switch (spec.kind) {
    case ScheduleKind::Constant: return Phase::Constant;
    case ScheduleKind::CosineDecay: return Phase::Decay;
    default:
      if (t < spec.cooldown_end()) return Phase::Cooldown;
      if (spec.unbounded() || t < spec.constant_end()) return Phase::Constant;
      return Phase::Annealing;
  }
}

int64_t resume_point(const ScheduleSpec& spec) {
  if (!spec.is_infinite())
    throw std::domain_error(std::string("resume_point: unsupported for ") +
                            to_string(spec.kind) + " schedules");
  return spec.constant_end();
}

int64_t percent_steps(double percent, int64_t total) {
  if (percent < 0.0 || percent > 100.0)
    throw std::invalid_argument("percent_steps: percent outside [0, 100]");
  if (total < 0) throw std::invalid_argument("percent_steps: negative total");
  return static_cast<int64_t>(std::floor(percent / 100.0 * static_cast<double>(total) + 0.5));
}

ScheduleSpec cosine_schedule(double eta_max, double eta_min, int64_t total_steps,
                             double warmup_percent) {
  ScheduleSpec s;
  s.kind = ScheduleKind::CosineDecay;
  s.eta_max = eta_max;
  s.eta_min = eta_min;
  s.warmup_steps = percent_steps(warmup_percent, total_steps);
  s.anneal_steps = total_steps - s.warmup_steps;
  s.validate();
  return s;
}

ScheduleSpec constant_schedule(double eta, int64_t warmup_steps, int64_t constant_steps) {
  ScheduleSpec s;
  s.kind = ScheduleKind::Constant;
  s.eta_max = eta;
  s.eta_min = eta;
  s.warmup_steps = warmup_steps;
  s.constant_steps = constant_steps;
  s.validate();
  return s;
}

ScheduleSpec infinite_schedule(ScheduleKind kind, double eta_max, double eta_min,
                               double eta_const, int64_t total_steps, double warmup_percent,
                               double cooldown_percent, double constant_percent,
                               double invsqrt_steepness) {
  ScheduleSpec s;
  s.kind = kind;
  s.eta_max = eta_max;
  s.eta_min = eta_min;
  s.eta_const = eta_const;
  s.invsqrt_steepness = invsqrt_steepness;
  s.warmup_steps = percent_steps(warmup_percent, total_steps);
  s.cooldown_steps = percent_steps(cooldown_percent, total_steps);
  s.constant_steps = percent_steps(constant_percent, total_steps);
  s.anneal_steps = total_steps - s.warmup_steps - s.cooldown_steps - s.constant_steps;
  if (s.anneal_steps < 0)
    throw std::invalid_argument("infinite_schedule: phase percents exceed 100");
  s.validate();
  return s;
}

}  // namespace ctp
