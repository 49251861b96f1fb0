#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>

#include "ctp/errors.hpp"
#include "ctp/trainer.hpp"

using namespace ctp;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 16;
  cfg.context_length = 4;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 16;
  cfg.init_seed = 5;
  return cfg;
}

Corpus tiny_corpus(int vocab, int64_t train_tokens, uint64_t seed = 11) {
  CorpusSpec spec;
  spec.name = "tiny";
  spec.vocab_size = vocab;
  spec.transition_seed = seed;
  spec.train_tokens = train_tokens;
  spec.val_tokens = 5'000;
  return gen_corpus(spec);
}

std::unique_ptr<BatchSource> plain_source(const Corpus& c, int context, int64_t batch) {
  MixPlan plan;
  plan.new_source = c.spec.name;
  plan.batch_size = batch;
  return std::make_unique<PlanReader>(plan, &c.train, std::vector<const TokenStream*>{},
                                      context, false);
}

TrainLoop make_loop(const ModelConfig& cfg, const Corpus& corpus, const PhaseSpec& phase,
                    int64_t batch, TrainOptions opts, const std::vector<EvalSet>& evals,
                    int64_t schedule_offset = 0) {
  PhaseInit init = fresh_init(cfg);
  return TrainLoop(cfg, std::move(init.model), OptimConfig{}, std::move(init.optim), phase,
                   schedule_offset, plain_source(corpus, cfg.context_length, batch), evals,
                   opts);
}

}  // namespace

TEST_CASE("a single zero-lr step changes nothing and logs one row") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 10'000);
  PhaseSpec phase;
  phase.name = "noop";
  phase.schedule = constant_schedule(0.0, 0, 1);
  phase.steps = 1;

  PhaseInit init = fresh_init(cfg);
  const ModelState before = init.model;
  TrainOptions opts;
  TrainLoop loop(cfg, std::move(init.model), OptimConfig{}, std::move(init.optim), phase, 0,
                 plain_source(corpus, cfg.context_length, 8),
                 {{"tiny", &corpus.val}}, opts);
  loop.run();
  CHECK(loop.model().w1 == before.w1);
  CHECK(loop.model().embed == before.embed);
  CHECK(loop.record().rows.size() == 1);
}

TEST_CASE("identical phases from the same start produce identical records") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 60'000);
  PhaseSpec phase;
  phase.schedule = cosine_schedule(1e-3, 1e-4, 200, 1.0);
  phase.steps = 200;
  TrainOptions opts;
  opts.eval_every = 20;

  auto run_once = [&] {
    TrainLoop loop = make_loop(cfg, corpus, phase, 8, opts, {{"tiny", &corpus.val}});
    loop.run();
    return loop.record();
  };
  const RunRecord a = run_once();
  const RunRecord b = run_once();
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].step == b.rows[i].step);
    CHECK(a.rows[i].lr == b.rows[i].lr);
    CHECK(a.rows[i].val_loss == b.rows[i].val_loss);
  }
}

TEST_CASE("training on a markov corpus beats the untrained baseline") {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.context_length = 8;
  cfg.embed_dim = 16;
  cfg.hidden_dim = 64;
  cfg.init_seed = 6;
  CorpusSpec spec;
  spec.name = "base";
  spec.vocab_size = 64;
  spec.transition_seed = 21;
  spec.train_tokens = 5000 * 32 * 9;
  spec.val_tokens = 20'000;
  const Corpus corpus = gen_corpus(spec);

  PhaseSpec phase;
  phase.schedule = cosine_schedule(3e-4, 3e-5, 5000, 1.0);
  phase.steps = 5000;
  TrainOptions opts;
  opts.eval_every = 1000;
  TrainLoop loop = make_loop(cfg, corpus, phase, 32, opts, {{"base", &corpus.val}});
  const double untrained = eval_loss(cfg, loop.model(), corpus.val);
  CHECK(untrained == doctest::Approx(std::log(64.0)).epsilon(0.02));
  loop.run();
  const double trained = eval_loss(cfg, loop.model(), corpus.val);
  CHECK(trained < untrained - 0.5);
}

TEST_CASE("final loss summary of a constant series is the constant") {
  RunRecord rec;
  rec.eval_names = {"a"};
  for (int64_t s = 10; s <= 500; s += 10) rec.rows.push_back({s, 1e-4, s * 10, {2.5}});
  const FinalSummary sum = final_loss_summary(rec);
  CHECK(sum.loss_of("a") == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("final loss summary of a linear series matches direct computation") {
  RunRecord rec;
  rec.eval_names = {"a"};
  for (int64_t s = 10; s <= 400; s += 10)
    rec.rows.push_back({s, 1e-4, s, {0.01 * double(s)}});
  const FinalSummary sum = final_loss_summary(rec);
  // Samples at steps 310, 320, ..., 400.
  double expect = 0.0;
  for (int64_t s = 310; s <= 400; s += 10) expect += 0.01 * double(s);
  expect /= 10.0;
  CHECK(sum.loss_of("a") == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("final loss summary requires enough history") {
  RunRecord rec;
  rec.eval_names = {"a"};
  rec.rows.push_back({50, 1e-4, 50, {1.0}});
  CHECK_THROWS(final_loss_summary(rec));
}

TEST_CASE("summary recomputed from the emitted CSV matches the in-memory one") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 80'000);
  PhaseSpec phase;
  phase.schedule = cosine_schedule(1e-3, 1e-4, 250, 1.0);
  phase.steps = 250;
  TrainOptions opts;
  TrainLoop loop = make_loop(cfg, corpus, phase, 8, opts, {{"tiny", &corpus.val}});
  loop.run();

  const auto path = (std::filesystem::temp_directory_path() / "ctp_trainer_test.csv").string();
  write_run_csv(path, loop.record());
  const RunRecord back = read_run_csv(path);
  const FinalSummary a = final_loss_summary(loop.record());
  const FinalSummary b = final_loss_summary(back);
  CHECK(a.loss_of("tiny") == b.loss_of("tiny"));
  std::filesystem::remove(path);
}

TEST_CASE("token accounting is exact and replay-independent") {
  ModelConfig cfg = tiny_config();
  const Corpus fresh = tiny_corpus(cfg.vocab_size, 40'000, 31);
  const Corpus old = tiny_corpus(cfg.vocab_size, 40'000, 32);

  for (double x : {0.0, 0.25}) {
    MixPlan plan;
    plan.new_source = "fresh";
    plan.batch_size = 8;
    if (x > 0) {
      plan.replay_sources = {{"old", 1.0}};
      plan.replay_fraction = x;
    }
    std::vector<const TokenStream*> replay;
    if (x > 0) replay.push_back(&old.train);
    PhaseSpec phase;
    phase.schedule = cosine_schedule(1e-3, 1e-4, 150, 1.0);
    phase.steps = 150;
    PhaseInit init = fresh_init(cfg);
    TrainLoop loop(cfg, std::move(init.model), OptimConfig{}, std::move(init.optim), phase, 0,
                   std::make_unique<PlanReader>(plan, &fresh.train, replay,
                                                cfg.context_length, true),
                   {{"fresh", &fresh.val}}, TrainOptions{});
    loop.run();
    CHECK(loop.make_checkpoint().tokens_consumed == 150 * 8 * (cfg.context_length + 1));
  }
}

TEST_CASE("checkpoint file round trip is bit exact") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 60'000);
  PhaseSpec phase;
  phase.schedule = cosine_schedule(1e-3, 1e-4, 200, 1.0);
  phase.steps = 200;
  TrainLoop loop = make_loop(cfg, corpus, phase, 8, TrainOptions{}, {{"tiny", &corpus.val}});
  for (int i = 0; i < 60; ++i) loop.step_once();

  const Checkpoint ckpt = loop.make_checkpoint();
  const auto path = (std::filesystem::temp_directory_path() / "ctp_ckpt_test.ctpc").string();
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(back.model.embed == ckpt.model.embed);
  CHECK(back.model.w1 == ckpt.model.w1);
  CHECK(back.optim.m.w1 == ckpt.optim.m.w1);
  CHECK(back.optim.v.b2 == ckpt.optim.v.b2);
  CHECK(back.optim.step_count == ckpt.optim.step_count);
  CHECK(back.phase_steps_done == ckpt.phase_steps_done);
  CHECK(back.schedule_step == ckpt.schedule_step);
  CHECK(back.source.cursors.size() == ckpt.source.cursors.size());
  for (size_t i = 0; i < back.source.cursors.size(); ++i) {
    CHECK(back.source.cursors[i].name == ckpt.source.cursors[i].name);
    CHECK(back.source.cursors[i].window_pos == ckpt.source.cursors[i].window_pos);
  }
}

TEST_CASE("save, load and one step equals no-save and one step") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 60'000);
  PhaseSpec phase;
  phase.schedule = cosine_schedule(1e-3, 1e-4, 200, 1.0);
  phase.steps = 200;

  TrainLoop direct = make_loop(cfg, corpus, phase, 8, TrainOptions{}, {{"tiny", &corpus.val}});
  for (int i = 0; i < 40; ++i) direct.step_once();
  const auto path = (std::filesystem::temp_directory_path() / "ctp_resume_test.ctpc").string();
  save_checkpoint(path, direct.make_checkpoint());
  direct.step_once();

  TrainLoop resumed = make_loop(cfg, corpus, phase, 8, TrainOptions{}, {{"tiny", &corpus.val}});
  resumed.restore(load_checkpoint(path));
  resumed.step_once();
  std::filesystem::remove(path);

  CHECK(resumed.model().embed == direct.model().embed);
  CHECK(resumed.model().w1 == direct.model().w1);
  CHECK(resumed.model().b2 == direct.model().b2);
  CHECK(resumed.optim().m.w2 == direct.optim().m.w2);
}

TEST_CASE("evaluation does not perturb training") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 60'000);
  PhaseSpec phase;
  phase.schedule = cosine_schedule(1e-3, 1e-4, 150, 1.0);
  phase.steps = 150;

  TrainOptions with_evals;
  with_evals.eval_every = 10;
  TrainLoop a = make_loop(cfg, corpus, phase, 8, with_evals, {{"tiny", &corpus.val}});
  a.run();

  TrainOptions no_evals;
  no_evals.eval_every = 10;
  TrainLoop b = make_loop(cfg, corpus, phase, 8, no_evals, {});
  b.run();

  CHECK(a.model().w1 == b.model().w1);
  CHECK(a.model().embed == b.model().embed);
}

TEST_CASE("continue_from re-warms cosine checkpoints and continues infinite constants") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 120'000);

  // Produce a checkpoint inside the constant phase of an infinite schedule.
  ScheduleSpec inf;
  inf.kind = ScheduleKind::InfiniteCosine;
  inf.eta_max = 1e-3;
  inf.eta_min = 1e-4;
  inf.eta_const = 5e-4;
  inf.warmup_steps = 5;
  inf.cooldown_steps = 45;
  inf.constant_steps = kUnboundedSteps;
  PhaseSpec first;
  first.schedule = inf;
  first.steps = 100;
  TrainLoop loop = make_loop(cfg, corpus, first, 8, TrainOptions{}, {});
  loop.run();
  const Checkpoint ckpt = loop.make_checkpoint();
  CHECK(ckpt.schedule_phase == Phase::Constant);

  PhaseSpec next;
  next.schedule = inf;
  next.steps = 50;
  next.continue_schedule = true;
  const PhaseInit cont = continue_from(ckpt, cfg, next);
  CHECK(cont.schedule_offset == 100);
  CHECK(lr_at(next.schedule, cont.schedule_offset + 1) == 5e-4);  // stays at eta_const

  PhaseSpec rewarm;
  rewarm.schedule = cosine_schedule(1e-3, 1e-4, 100, 10.0);
  rewarm.steps = 100;
  const PhaseInit re = continue_from(ckpt, cfg, rewarm);
  CHECK(re.schedule_offset == 0);  // restart and re-warm
  CHECK(lr_at(rewarm.schedule, 0) == 0.0);
  // Optimizer reset by default.
  for (double v : re.optim.m.w1) CHECK(v == 0.0);
}

TEST_CASE("post-anneal checkpoints are rejected without the override") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 120'000);
  ScheduleSpec inf;
  inf.kind = ScheduleKind::InfiniteCosine;
  inf.eta_max = 1e-3;
  inf.eta_min = 1e-4;
  inf.eta_const = 5e-4;
  inf.warmup_steps = 5;
  inf.cooldown_steps = 45;
  inf.constant_steps = 50;
  inf.anneal_steps = 50;
  PhaseSpec phase;
  phase.schedule = inf;
  phase.steps = 150;  // ends in the annealing phase
  TrainLoop loop = make_loop(cfg, corpus, phase, 8, TrainOptions{}, {});
  loop.run();
  const Checkpoint ckpt = loop.make_checkpoint();
  CHECK(ckpt.schedule_phase == Phase::Annealing);

  PhaseSpec next;
  next.schedule = cosine_schedule(1e-3, 1e-4, 100, 1.0);
  next.steps = 100;
  CHECK_THROWS_AS(continue_from(ckpt, cfg, next), std::runtime_error);
  next.allow_post_anneal = true;
  CHECK_NOTHROW(continue_from(ckpt, cfg, next));
}

TEST_CASE("config mismatch is rejected") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 30'000);
  PhaseSpec phase;
  phase.schedule = cosine_schedule(1e-3, 1e-4, 120, 1.0);
  phase.steps = 120;
  TrainLoop loop = make_loop(cfg, corpus, phase, 8, TrainOptions{}, {});
  loop.run();
  ModelConfig other = cfg;
  other.hidden_dim += 1;
  CHECK_THROWS_AS(continue_from(loop.make_checkpoint(), other, phase), std::invalid_argument);
}

TEST_CASE("divergence detector aborts with a diagnostic") {
  ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus(cfg.vocab_size, 120'000);
  PhaseSpec phase;
  phase.name = "explode";
  phase.schedule = constant_schedule(5.0, 0, 2000);  // absurd learning rate
  phase.steps = 2000;
  TrainOptions opts;
  opts.eval_every = 1;
  TrainLoop loop = make_loop(cfg, corpus, phase, 8, opts, {});
  CHECK_THROWS_AS(loop.run(), NumericalError);
}
