#include "ctp/config.hpp"

#include <fstream>
#include <stdexcept>

namespace ctp {

using nlohmann::json;

namespace {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine_decay") return ScheduleKind::CosineDecay;
  if (s == "infinite_cosine") return ScheduleKind::InfiniteCosine;
  if (s == "infinite_invsqrt") return ScheduleKind::InfiniteInvSqrt;
  if (s == "constant") return ScheduleKind::Constant;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

ShiftKind shift_kind_from_string(const std::string& s) {
  if (s == "base") return ShiftKind::Base;
  if (s == "weak_shift") return ShiftKind::WeakShift;
  if (s == "strong_shift") return ShiftKind::StrongShift;
  if (s == "iid_split") return ShiftKind::IidSplit;
  throw std::invalid_argument("unknown shift kind '" + s + "'");
}

int64_t span_steps(const json& j, const std::string& field, int64_t total, int64_t dflt) {
  if (j.contains(field + "_steps")) return j.at(field + "_steps").get<int64_t>();
  if (j.contains(field + "_percent")) {
    if (total < 0)
      throw std::invalid_argument("schedule: " + field + "_percent needs total_steps");
    return percent_steps(j.at(field + "_percent").get<double>(), total);
  }
  return dflt;
}

}  // namespace

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

ScheduleSpec schedule_from_json(const json& j) {
  ScheduleSpec s;
  s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  s.eta_max = j.at("eta_max").get<double>();
  s.eta_min = j.value("eta_min", s.eta_max);
  s.eta_const = j.value("eta_const", 0.0);
  s.invsqrt_steepness = j.value("invsqrt_steepness", 10.0);

  const int64_t total = j.value("total_steps", int64_t{-1});
  s.warmup_steps = span_steps(j, "warmup", total, 0);
  s.cooldown_steps = span_steps(j, "cooldown", total, 0);
  if (j.contains("constant_unbounded") && j.at("constant_unbounded").get<bool>()) {
    s.constant_steps = kUnboundedSteps;
  } else {
    s.constant_steps = span_steps(j, "constant", total, 0);
  }
  s.anneal_steps = span_steps(j, "anneal", total, -1);
  if (s.anneal_steps == -1) {
    // Remainder of total when given in percent form.
    if (total >= 0) {
      int64_t used = s.warmup_steps + s.cooldown_steps;
      if (!s.unbounded()) used += s.constant_steps;
      s.anneal_steps = total - used;
      if (s.kind == ScheduleKind::Constant) {
        s.constant_steps = s.anneal_steps;
        s.anneal_steps = 0;
      }
    } else {
      s.anneal_steps = 0;
    }
  }
  s.validate();
  return s;
}

json schedule_to_json(const ScheduleSpec& s) {
  json j;
  j["kind"] = to_string(s.kind);
  j["eta_max"] = s.eta_max;
  j["eta_min"] = s.eta_min;
  if (s.is_infinite()) j["eta_const"] = s.eta_const;
  if (s.kind == ScheduleKind::InfiniteInvSqrt) j["invsqrt_steepness"] = s.invsqrt_steepness;
  j["warmup_steps"] = s.warmup_steps;
  if (s.is_infinite()) j["cooldown_steps"] = s.cooldown_steps;
  if (s.unbounded()) {
    j["constant_unbounded"] = true;
  } else if (s.is_infinite() || s.kind == ScheduleKind::Constant) {
    j["constant_steps"] = s.constant_steps;
  }
  if (s.kind != ScheduleKind::Constant) j["anneal_steps"] = s.anneal_steps;
  return j;
}

CorpusSpec corpus_from_json(const json& j) {
  CorpusSpec c;
  c.name = j.at("name").get<std::string>();
  c.vocab_size = j.value("vocab_size", 64);
  c.transition_seed = j.value("transition_seed", uint64_t{0});
  const json& shift = j.at("shift");
  c.shift = shift_kind_from_string(shift.at("kind").get<std::string>());
  if (c.shift == ShiftKind::WeakShift) c.weak_lambda = shift.value("lambda", 0.5);
  if (c.shift == ShiftKind::IidSplit) c.iid_index = shift.value("index", 0);
  c.train_tokens = j.value("train_tokens", int64_t{2'000'000});
  c.val_tokens = j.value("val_tokens", int64_t{20'000});
  c.validate();
  return c;
}

json corpus_to_json(const CorpusSpec& c) {
  json j;
  j["name"] = c.name;
  j["vocab_size"] = c.vocab_size;
  j["transition_seed"] = c.transition_seed;
  json shift;
  shift["kind"] = to_string(c.shift);
  if (c.shift == ShiftKind::WeakShift) shift["lambda"] = c.weak_lambda;
  if (c.shift == ShiftKind::IidSplit) shift["index"] = c.iid_index;
  j["shift"] = shift;
  j["train_tokens"] = c.train_tokens;
  j["val_tokens"] = c.val_tokens;
  return j;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.vocab_size = j.value("vocab_size", 64);
  m.context_length = j.value("context_length", 8);
  m.embed_dim = j.value("embed_dim", 16);
  m.hidden_dim = j.value("hidden_dim", 64);
  m.init_seed = j.value("init_seed", uint64_t{1});
  m.validate();
  return m;
}

json model_to_json(const ModelConfig& m) {
  return json{{"vocab_size", m.vocab_size},
              {"context_length", m.context_length},
              {"embed_dim", m.embed_dim},
              {"hidden_dim", m.hidden_dim},
              {"init_seed", m.init_seed}};
}

OptimConfig optim_from_json(const json& j) {
  OptimConfig o;
  o.beta1 = j.value("beta1", 0.9);
  o.beta2 = j.value("beta2", 0.95);
  o.weight_decay = j.value("weight_decay", 0.1);
  o.clip_norm = j.value("clip_norm", 1.0);
  o.epsilon = j.value("epsilon", 1e-8);
  o.decay_all = j.value("decay_all", true);
  o.validate();
  return o;
}

json optim_to_json(const OptimConfig& o) {
  return json{{"beta1", o.beta1},         {"beta2", o.beta2},
              {"weight_decay", o.weight_decay}, {"clip_norm", o.clip_norm},
              {"epsilon", o.epsilon},     {"decay_all", o.decay_all}};
}

MixPlan mixplan_from_json(const json& j) {
  MixPlan p;
  p.new_source = j.value("new_source", std::string("new"));
  p.replay_fraction = j.value("replay_fraction", 0.0);
  p.batch_size = j.value("batch_size", int64_t{32});
  if (j.contains("replay_sources")) {
    for (const auto& r : j.at("replay_sources"))
      p.replay_sources.emplace_back(r.at("name").get<std::string>(),
                                    r.value("proportion", 1.0));
  }
  p.validate();
  return p;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.model = model_from_json(j.value("model", json::object()));
  t.optim = optim_from_json(j.value("optim", json::object()));
  t.schedule = schedule_from_json(j.at("schedule"));
  t.steps = j.at("steps").get<int64_t>();
  t.eval_every = j.value("eval_every", int64_t{50});
  t.seed = j.value("seed", uint64_t{0});

  const json& data = j.at("data");
  const std::string kind = data.value("kind", std::string("plan"));
  if (kind == "mixture") {
    t.use_mixture = true;
    for (const auto& s : data.at("sources"))
      t.mixture.emplace_back(s.at("path").get<std::string>(), s.at("weight").get<double>());
  } else if (kind == "plan") {
    t.plan.new_source = data.at("new_source").get<std::string>();
    t.plan_paths.push_back(t.plan.new_source);
    t.plan.replay_fraction = data.value("replay_fraction", 0.0);
    t.plan.batch_size = data.value("batch_size", int64_t{32});
    if (data.contains("replay_sources")) {
      for (const auto& r : data.at("replay_sources")) {
        t.plan.replay_sources.emplace_back(r.at("path").get<std::string>(),
                                           r.value("proportion", 1.0));
        t.plan_paths.push_back(r.at("path").get<std::string>());
      }
    }
    t.wrap_replay = data.value("wrap_replay", true);
    t.plan.validate();
  } else {
    throw std::invalid_argument("train config: unknown data kind '" + kind + "'");
  }

  if (j.contains("eval")) {
    for (const auto& e : j.at("eval"))
      t.eval_sets.emplace_back(e.at("name").get<std::string>(),
                               e.at("path").get<std::string>());
  }
  t.out_csv = j.value("out_csv", std::string());
  t.checkpoint_out = j.value("checkpoint_out", std::string());
  t.resume_from = j.value("resume", std::string());
  t.reset_optimizer = j.value("reset_optimizer", true);
  t.continue_schedule = j.value("continue_schedule", false);
  t.allow_post_anneal = j.value("allow_post_anneal", false);
  return t;
}

}  // namespace ctp
