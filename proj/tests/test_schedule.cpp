#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "ctp/rng.hpp"
#include "ctp/schedule.hpp"

using namespace ctp;

namespace {

constexpr double kPi = 3.14159265358979323846;

ScheduleSpec infinite_steps(ScheduleKind kind, double eta_max, double eta_min, double eta_const,
                            int64_t warmup, int64_t cooldown, int64_t constant, int64_t anneal,
                            double steepness = 10.0) {
  ScheduleSpec s;
  s.kind = kind;
  s.eta_max = eta_max;
  s.eta_min = eta_min;
  s.eta_const = eta_const;
  s.warmup_steps = warmup;
  s.cooldown_steps = cooldown;
  s.constant_steps = constant;
  s.anneal_steps = anneal;
  s.invsqrt_steepness = steepness;
  s.validate();
  return s;
}

// Independent re-statement of the phase formulas, used to check that each
// phase's formula extrapolates continuously onto the next boundary.
double warmup_formula(const ScheduleSpec& s, int64_t t) {
  return s.eta_max * double(t) / double(s.warmup_steps);
}
double cooldown_formula(const ScheduleSpec& s, int64_t t) {
  const double u = double(t - s.warmup_end()) / double(s.cooldown_steps);
  if (s.kind == ScheduleKind::InfiniteCosine)
    return s.eta_const + (s.eta_max - s.eta_const) / 2.0 * (1.0 + std::cos(kPi * u));
  const double h1 = 1.0 / std::sqrt(1.0 + s.invsqrt_steepness) - 1.0;
  const double hu = 1.0 / std::sqrt(1.0 + s.invsqrt_steepness * u) - 1.0;
  return s.eta_max + (s.eta_const - s.eta_max) / h1 * hu;
}
double anneal_formula(const ScheduleSpec& s, int64_t t) {
  const double u = double(t - s.constant_end()) / double(s.anneal_steps);
  return s.eta_const * std::pow(s.eta_min / s.eta_const, u);
}

ScheduleSpec random_spec(Xoshiro256ss& rng) {
  ScheduleSpec s;
  switch (rng.next_below(3)) {
    case 0: s.kind = ScheduleKind::CosineDecay; break;
    case 1: s.kind = ScheduleKind::InfiniteCosine; break;
    default: s.kind = ScheduleKind::InfiniteInvSqrt; break;
  }
  s.eta_max = std::pow(10.0, -4.0 + 2.0 * rng.next_double());
  s.eta_min = s.eta_max * (0.05 + 0.4 * rng.next_double());
  s.warmup_steps = static_cast<int64_t>(rng.next_below(50)) + 1;
  if (s.kind == ScheduleKind::CosineDecay) {
    s.anneal_steps = static_cast<int64_t>(rng.next_below(400)) + 2;
  } else {
    s.eta_const = s.eta_min + (s.eta_max - s.eta_min) * rng.next_double();
    s.cooldown_steps = static_cast<int64_t>(rng.next_below(300)) + 1;
    s.constant_steps = static_cast<int64_t>(rng.next_below(300)) + 1;
    s.anneal_steps = static_cast<int64_t>(rng.next_below(300)) + 1;
    s.invsqrt_steepness = 0.5 + 30.0 * rng.next_double();
  }
  s.validate();
  return s;
}

}  // namespace

TEST_CASE("cosine decay endpoints and warmup start") {
  ScheduleSpec s;
  s.kind = ScheduleKind::CosineDecay;
  s.eta_max = 3e-4;
  s.eta_min = 3e-5;
  s.warmup_steps = 200;
  s.anneal_steps = 19800;
  s.validate();

  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 200) == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(lr_at(s, s.total_steps()) == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(lr_at(s, 100) == doctest::Approx(1.5e-4).epsilon(1e-12));
}

TEST_CASE("cosine midpoint is the arithmetic mean of eta_max and eta_min") {
  ScheduleSpec s;
  s.kind = ScheduleKind::CosineDecay;
  s.eta_max = 3e-4;
  s.eta_min = 3e-5;
  s.warmup_steps = 100;
  s.anneal_steps = 1000;
  s.validate();
  CHECK(lr_at(s, 600) == doctest::Approx((3e-4 + 3e-5) / 2).epsilon(1e-14));
}

TEST_CASE("no-warmup schedule starts at eta_max") {
  ScheduleSpec s;
  s.kind = ScheduleKind::CosineDecay;
  s.eta_max = 3e-4;
  s.eta_min = 3e-5;
  s.warmup_steps = 0;
  s.anneal_steps = 1000;
  s.validate();
  CHECK(lr_at(s, 0) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(phase_of(s, 0) == Phase::Warmup);  // t = 0 convention
}

TEST_CASE("infinite cosine cooldown midpoint") {
  // Table values: eta_max 3e-4, eta_min 3e-5, eta_const 1.65e-4. Evaluating
  // the cooldown at its midpoint zeroes the cosine term.
  auto s = infinite_steps(ScheduleKind::InfiniteCosine, 3e-4, 3e-5, 1.65e-4, 10, 60, 25, 5);
  CHECK(lr_at(s, 10 + 30) == doctest::Approx((3e-4 + 1.65e-4) / 2).epsilon(1e-12));
  CHECK(lr_at(s, 10 + 30) == doctest::Approx(2.325e-4).epsilon(1e-12));
}

TEST_CASE("inverse sqrt cooldown endpoints") {
  auto s = infinite_steps(ScheduleKind::InfiniteInvSqrt, 3e-4, 3e-5, 1.65e-4, 10, 60, 25, 5);
  CHECK(lr_at(s, 10) == doctest::Approx(3e-4).epsilon(1e-12));   // h(0) = 0
  CHECK(lr_at(s, 70) == doctest::Approx(1.65e-4).epsilon(1e-12));  // h(1)/h(1) = 1
}

TEST_CASE("annealing endpoints") {
  auto s = infinite_steps(ScheduleKind::InfiniteCosine, 3e-4, 3e-5, 1.65e-4, 10, 60, 25, 5);
  CHECK(lr_at(s, 95) == doctest::Approx(1.65e-4).epsilon(1e-12));
  CHECK(lr_at(s, 100) == doctest::Approx(3e-5).epsilon(1e-12));
}

TEST_CASE("resume_point returns the end of the constant phase") {
  auto s = infinite_steps(ScheduleKind::InfiniteCosine, 3e-4, 3e-5, 1.65e-4, 10, 60, 25, 5);
  CHECK(resume_point(s) == 95);  // oracle: sum of phase spans
  CHECK(s.total_steps() == 100);

  ScheduleSpec c = constant_schedule(3e-5, 0, 100);
  CHECK_THROWS_AS(resume_point(c), std::domain_error);
  ScheduleSpec cos = cosine_schedule(3e-4, 3e-5, 100, 1.0);
  CHECK_THROWS_AS(resume_point(cos), std::domain_error);
}

TEST_CASE("phase membership boundaries") {
  auto s = infinite_steps(ScheduleKind::InfiniteCosine, 3e-4, 3e-5, 1.65e-4, 10, 60, 25, 5);
  CHECK(phase_of(s, 0) == Phase::Warmup);
  CHECK(phase_of(s, 9) == Phase::Warmup);
  CHECK(phase_of(s, 10) == Phase::Cooldown);  // boundary belongs to the later phase
  CHECK(phase_of(s, 11) == Phase::Cooldown);
  CHECK(phase_of(s, 70) == Phase::Constant);
  CHECK(phase_of(s, 95) == Phase::Annealing);
  CHECK(phase_of(s, 100) == Phase::Annealing);
  CHECK_THROWS_AS(phase_of(s, 101), std::out_of_range);
  CHECK_THROWS_AS(lr_at(s, -1), std::out_of_range);

  ScheduleSpec cos = cosine_schedule(3e-4, 3e-5, 100, 10.0);
  CHECK(phase_of(cos, 10) == Phase::Decay);
}

TEST_CASE("open-ended constant phase") {
  ScheduleSpec s;
  s.kind = ScheduleKind::InfiniteInvSqrt;
  s.eta_max = 3e-4;
  s.eta_min = 3e-5;
  s.eta_const = 1.65e-4;
  s.warmup_steps = 10;
  s.cooldown_steps = 60;
  s.constant_steps = kUnboundedSteps;
  s.validate();
  CHECK(lr_at(s, 1'000'000) == 1.65e-4);
  CHECK(phase_of(s, 1'000'000) == Phase::Constant);
  CHECK_THROWS_AS(resume_point(s), std::domain_error);
}

TEST_CASE("percent conversion rounds half up") {
  CHECK(percent_steps(1.0, 150) == 2);   // 1.5 -> 2
  CHECK(percent_steps(0.5, 100) == 1);   // 0.5 -> 1
  CHECK(percent_steps(0.0, 1000) == 0);
  CHECK(percent_steps(100.0, 1000) == 1000);
  CHECK(percent_steps(1.0, 20000) == 200);
  CHECK_THROWS_AS(percent_steps(-1.0, 10), std::invalid_argument);
}

TEST_CASE("validation rejects inconsistent specs") {
  ScheduleSpec s;
  s.kind = ScheduleKind::InfiniteCosine;
  s.eta_max = 3e-4;
  s.eta_min = 3e-5;
  s.eta_const = 4e-4;  // above eta_max
  s.warmup_steps = 1;
  s.cooldown_steps = 1;
  s.constant_steps = 1;
  s.anneal_steps = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.eta_const = 1e-5;  // below eta_min
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("random specs: continuity, monotonicity, endpoint exactness, bounds") {
  Xoshiro256ss rng(0x5eedu);
  for (int trial = 0; trial < 300; ++trial) {
    const ScheduleSpec s = random_spec(rng);
    const double slack = 1e-12 * s.eta_max;

    // Endpoints.
    CHECK(std::abs(lr_at(s, s.warmup_steps) - s.eta_max) <= 1e-12 * s.eta_max);
    CHECK(std::abs(lr_at(s, s.total_steps()) - s.eta_min) <= 1e-12 * s.eta_max);

    // Continuity: each earlier-phase formula meets the boundary value.
    if (s.warmup_steps > 0)
      CHECK(std::abs(warmup_formula(s, s.warmup_end()) - lr_at(s, s.warmup_end())) <=
            1e-12 * s.eta_max);
    if (s.is_infinite()) {
      CHECK(std::abs(cooldown_formula(s, s.cooldown_end()) - lr_at(s, s.cooldown_end())) <=
            1e-12 * s.eta_max);
      CHECK(std::abs(s.eta_const - lr_at(s, s.constant_end())) <= 1e-12 * s.eta_max);
      CHECK(std::abs(anneal_formula(s, s.total_steps()) - s.eta_min) <= 1e-12 * s.eta_max);
    }

    // Monotonicity phase by phase, and cooldown stays in [eta_const, eta_max].
    double prev = lr_at(s, 0);
    for (int64_t t = 1; t <= s.total_steps(); ++t) {
      const double cur = lr_at(s, t);
      const Phase ph = phase_of(s, t);
      if (t <= s.warmup_steps) {
        CHECK(cur > prev);
      } else if (ph == Phase::Constant) {
        CHECK(cur == s.eta_const);
      } else {
        CHECK(cur <= prev + slack);
      }
      if (s.is_infinite() && ph == Phase::Cooldown) {
        CHECK(cur >= s.eta_const - slack);
        CHECK(cur <= s.eta_max + slack);
      }
      prev = cur;
    }
  }
}
