#pragma once

#include <cstdint>
#include <string>

namespace ctp {

enum class ScheduleKind { CosineDecay, InfiniteCosine, InfiniteInvSqrt, Constant };

enum class Phase { Warmup, Cooldown, Constant, Annealing, Decay };

const char* to_string(ScheduleKind k);
const char* to_string(Phase p);

/// Sentinel for an open-ended constant phase of an infinite schedule.
inline constexpr int64_t kUnboundedSteps = -1;

/// Full parameterization of a multi-phase learning-rate schedule.
///
/// CosineDecay      : warmup -> cosine decay to eta_min over anneal_steps.
/// InfiniteCosine   : warmup -> cosine cooldown to eta_const -> constant ->
///                    exponential annealing to eta_min.
/// InfiniteInvSqrt  : same but the cooldown follows a shifted/stretched
///                    inverse square root h(x) = 1/sqrt(1 + a*x) - 1.
/// Constant         : warmup -> flat at eta_max.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::CosineDecay;
  double eta_max = 3e-4;
  double eta_min = 3e-5;
  double eta_const = 0.0;  // infinite kinds only
  int64_t warmup_steps = 0;
  int64_t cooldown_steps = 0;  // infinite kinds only
  int64_t constant_steps = 0;  // infinite/Constant kinds; kUnboundedSteps = open ended
  int64_t anneal_steps = 0;    // decay span for CosineDecay, annealing span otherwise
  double invsqrt_steepness = 10.0;  // InfiniteInvSqrt only

  /// Throws std::invalid_argument when the parameterization is inconsistent.
  void validate() const;

  bool is_infinite() const {
    return kind == ScheduleKind::InfiniteCosine || kind == ScheduleKind::InfiniteInvSqrt;
  }
  bool unbounded() const { return constant_steps == kUnboundedSteps; }

  // Phase boundary steps. warmup_end == t_cd, cooldown_end == t_const,
  // constant_end == t_ann (throws std::domain_error when open ended).
  int64_t warmup_end() const { return warmup_steps; }
  int64_t cooldown_end() const { return warmup_steps + cooldown_steps; }
  int64_t constant_end() const;
  int64_t total_steps() const;  // t_end; throws std::domain_error when open ended
};

/// Learning rate at step t per the piecewise schedule. Steps outside
/// [0, total_steps] raise std::out_of_range (open-ended constant phases
/// accept any t past the cooldown).
double lr_at(const ScheduleSpec& spec, int64_t t);

/// Phase whose half-open interval contains t. Boundaries belong to the later
/// phase, except t = 0 which is always Warmup.
Phase phase_of(const ScheduleSpec& spec, int64_t t);

/// End of the constant phase (t_ann) — the latest checkpoint step from which
/// continued pre-training should resume. Only defined for infinite kinds
/// with a bounded constant phase; otherwise throws std::domain_error.
int64_t resume_point(const ScheduleSpec& spec);

/// Converts a percent-of-total span to steps, rounding half up.
int64_t percent_steps(double percent, int64_t total);

ScheduleSpec cosine_schedule(double eta_max, double eta_min, int64_t total_steps,
                             double warmup_percent);
ScheduleSpec constant_schedule(double eta, int64_t warmup_steps, int64_t constant_steps);
ScheduleSpec infinite_schedule(ScheduleKind kind, double eta_max, double eta_min,
                               double eta_const, int64_t total_steps, double warmup_percent,
                               double cooldown_percent, double constant_percent,
                               double invsqrt_steepness = 10.0);

}  // namespace ctp
