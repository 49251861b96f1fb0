#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctp/data.hpp"
#include "ctp/mixer.hpp"
#include "ctp/model.hpp"
#include "ctp/optim.hpp"
#include "ctp/rng.hpp"
#include "ctp/schedule.hpp"

using namespace ctp;

namespace {

ModelConfig scalar_config() {
  // Smallest possible model; b2 acts as the scalar parameter under test.
  ModelConfig cfg;
  cfg.vocab_size = 1;
  cfg.context_length = 1;
  cfg.embed_dim = 1;
  cfg.hidden_dim = 1;
  return cfg;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.context_length = 4;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 12;
  cfg.init_seed = 4;
  return cfg;
}

ParamSet random_grad(const ModelConfig& cfg, uint64_t seed) {
  ParamSet g = ParamSet::zeros(cfg);
  Xoshiro256ss rng(seed);
  g.for_each_tensor([&rng](std::vector<double>& t) {
    for (double& v : t) v = 2.0 * rng.next_double() - 1.0;
  });
  return g;
}

}  // namespace

TEST_CASE("clipping leaves small gradients untouched") {
  ModelConfig cfg = scalar_config();
  ParamSet g = ParamSet::zeros(cfg);
  g.b2[0] = 0.5;
  const ParamSet before = g;
  CHECK(clip_gradient(g, 1.0) == doctest::Approx(0.5));
  CHECK(g.b2 == before.b2);
}

TEST_CASE("clipping scales the global norm to the threshold") {
  ModelConfig cfg = tiny_config();
  ParamSet g = random_grad(cfg, 2);
  g.w1[0] = 4.0;  // make it large
  clip_gradient(g, 1.0);
  CHECK(grad_norm(g) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clipping preserves direction and is idempotent") {
  ModelConfig cfg = tiny_config();
  ParamSet g = random_grad(cfg, 3);
  ParamSet once = g;
  const double norm = clip_gradient(once, 1.0);
  REQUIRE(norm > 1.0);
  for (size_t i = 0; i < g.w2.size(); ++i)
    CHECK(once.w2[i] == doctest::Approx(g.w2[i] / norm).epsilon(1e-12));
  ParamSet twice = once;
  clip_gradient(twice, 1.0);
  for (size_t i = 0; i < twice.w2.size(); ++i)
    CHECK(twice.w2[i] == doctest::Approx(once.w2[i]).epsilon(1e-12));
}

TEST_CASE("adamw scalar hand example") {
  // param 0, g=1, lr=0.1, wd=0, step 1: m=0.1, v=0.05, mhat=1, vhat=1,
  // update = -0.1 / (1 + 1e-8).
  ModelConfig cfg = scalar_config();
  ModelState p = ParamSet::zeros(cfg);
  OptimState st = OptimState::zeros(cfg);
  ParamSet g = ParamSet::zeros(cfg);
  g.b2[0] = 1.0;
  OptimConfig oc;
  oc.weight_decay = 0.0;
  adamw_step(p, g, st, 0.1, oc);
  CHECK(st.m.b2[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(st.v.b2[0] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(p.b2[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(st.step_count == 1);
}

TEST_CASE("bias correction at step one recovers g and g^2") {
  ModelConfig cfg = scalar_config();
  OptimConfig oc;
  for (double gval : {0.3, -2.0, 7.5}) {
    ModelState p = ParamSet::zeros(cfg);
    OptimState st = OptimState::zeros(cfg);
    ParamSet g = ParamSet::zeros(cfg);
    g.b2[0] = gval;
    adamw_step(p, g, st, 0.0, oc);
    const double mhat = st.m.b2[0] / (1.0 - oc.beta1);
    const double vhat = st.v.b2[0] / (1.0 - oc.beta2);
    CHECK(mhat == doctest::Approx(gval).epsilon(1e-14));
    CHECK(vhat == doctest::Approx(gval * gval).epsilon(1e-14));
  }
}

TEST_CASE("zero gradient at fresh state leaves parameters unchanged") {
  ModelConfig cfg = tiny_config();
  ModelState p = init_model(cfg);
  const ModelState before = p;
  OptimState st = OptimState::zeros(cfg);
  OptimConfig oc;
  oc.weight_decay = 0.0;
  adamw_step(p, ParamSet::zeros(cfg), st, 0.1, oc);
  CHECK(p.w1 == before.w1);
  CHECK(p.embed == before.embed);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  ModelConfig cfg = tiny_config();
  ModelState p = init_model(cfg);
  const ModelState before = p;
  OptimState st = OptimState::zeros(cfg);
  adamw_step(p, random_grad(cfg, 5), st, 0.0, OptimConfig{});
  CHECK(p.w1 == before.w1);
  CHECK(p.b2 == before.b2);
}

TEST_CASE("per-coordinate update magnitude obeys the definitional bound") {
  ModelConfig cfg = tiny_config();
  ModelState p = init_model(cfg);
  OptimState st = OptimState::zeros(cfg);
  OptimConfig oc;
  const double lr = 0.01;
  for (int step = 0; step < 5; ++step) {
    ParamSet g = random_grad(cfg, 100 + uint64_t(step));
    ModelState before = p;
    OptimState st_before = st;
    adamw_step(p, g, st, lr, oc);
    const double bc1 = 1.0 - std::pow(oc.beta1, double(st.step_count));
    const double bc2 = 1.0 - std::pow(oc.beta2, double(st.step_count));
    for (size_t i = 0; i < p.w2.size(); ++i) {
      const double mhat = st.m.w2[i] / bc1;
      const double vhat = st.v.w2[i] / bc2;
      const double bound =
          lr * (std::abs(mhat) / (std::sqrt(vhat) + oc.epsilon) +
                oc.weight_decay * std::abs(before.w2[i]));
      CHECK(std::abs(p.w2[i] - before.w2[i]) <= bound * (1.0 + 1e-12) + 1e-300);
    }
    (void)st_before;
  }
}

TEST_CASE("reset zeroes moments and a post-reset step equals a fresh step") {
  ModelConfig cfg = tiny_config();
  OptimConfig oc;
  OptimState st = OptimState::zeros(cfg);
  ModelState p1 = init_model(cfg);
  for (int i = 0; i < 7; ++i) adamw_step(p1, random_grad(cfg, 50 + uint64_t(i)), st, 0.01, oc);
  reset_state(st);
  CHECK(st.step_count == 0);
  for (double v : st.m.w1) CHECK(v == 0.0);
  for (double v : st.v.b2) CHECK(v == 0.0);

  // One step from the reset state equals one step from a brand-new state.
  ModelState a = p1, b = p1;
  OptimState fresh = OptimState::zeros(cfg);
  const ParamSet g = random_grad(cfg, 60);
  adamw_step(a, g, st, 0.01, oc);
  adamw_step(b, g, fresh, 0.01, oc);
  CHECK(a.w1 == b.w1);
  CHECK(a.b2 == b.b2);
}

TEST_CASE("moment contribution decays as beta^k") {
  CHECK(moment_contribution(0.9, 0) == 1.0);
  // beta2=0.95 after 1000 steps is far below the documented 0.0044% bound.
  const double c95 = moment_contribution(0.95, 1000);
  CHECK(c95 == doctest::Approx(5.29e-23).epsilon(0.01));
  CHECK(c95 < 4.4e-5);
  // beta=0.99 lands almost exactly on that bound.
  CHECK(moment_contribution(0.99, 1000) == doctest::Approx(4.317e-5).epsilon(0.01));
}

TEST_CASE("kept vs reset optimizer states converge after a transition") {
  // Desk-scale rerun of the optimizer-reset ablation: train, transition to
  // fresh data, then compare keeping the moments against resetting them.
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.context_length = 4;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 24;
  cfg.init_seed = 9;

  CorpusSpec corpus;
  corpus.name = "optreset";
  corpus.vocab_size = cfg.vocab_size;
  corpus.transition_seed = 77;
  corpus.train_tokens = 600'000;
  corpus.val_tokens = 10'000;
  const Corpus c = gen_corpus(corpus);

  OptimConfig oc;
  ScheduleSpec warm = cosine_schedule(3e-3, 3e-4, 2000, 1.0);

  ModelState model = init_model(cfg);
  OptimState opt = OptimState::zeros(cfg);
  WindowCursor cursor("train", &c.train, cfg.context_length, true);
  auto run_steps = [&](ModelState& m, OptimState& o, WindowCursor& cur, const ScheduleSpec& s,
                       int64_t n, int64_t t0) {
    for (int64_t k = 1; k <= n; ++k) {
      Batch batch;
      batch.context_length = cfg.context_length;
      cur.append_to(batch, 16);
      ParamSet grad;
      loss_and_grad(cfg, m, batch, grad);
      clip_gradient(grad, oc.clip_norm);
      adamw_step(m, grad, o, lr_at(s, t0 + k), oc);
    }
  };
  run_steps(model, opt, cursor, warm, 2000, 0);

  // Transition: same model, fresh schedule, identical batches for both arms.
  ModelState kept_model = model, reset_model = model;
  OptimState kept_opt = opt;
  OptimState reset_opt = opt;
  reset_state(reset_opt);
  WindowCursor kept_cursor = cursor, reset_cursor = cursor;
  ScheduleSpec again = cosine_schedule(3e-3, 3e-4, 1000, 1.0);
  run_steps(kept_model, kept_opt, kept_cursor, again, 1000, 0);
  run_steps(reset_model, reset_opt, reset_cursor, again, 1000, 0);

  const double kept_loss = eval_loss(cfg, kept_model, c.val);
  const double reset_loss = eval_loss(cfg, reset_model, c.val);
  CHECK(std::abs(kept_loss - reset_loss) < 0.05);
}
