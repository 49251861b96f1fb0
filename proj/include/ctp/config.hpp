#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ctp/data.hpp"
#include "ctp/mixer.hpp"
#include "ctp/model.hpp"
#include "ctp/optim.hpp"
#include "ctp/schedule.hpp"

namespace ctp {

// JSON schemas for the spec types (see the README for field lists).
// Schedules accept either absolute per-phase step counts or
// `total_steps` + `*_percent` fields (converted with round-half-up).
ScheduleSpec schedule_from_json(const nlohmann::json& j);
nlohmann::json schedule_to_json(const ScheduleSpec& spec);

CorpusSpec corpus_from_json(const nlohmann::json& j);
nlohmann::json corpus_to_json(const CorpusSpec& spec);

ModelConfig model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const ModelConfig& cfg);

OptimConfig optim_from_json(const nlohmann::json& j);
nlohmann::json optim_to_json(const OptimConfig& cfg);

MixPlan mixplan_from_json(const nlohmann::json& j);

/// Config for `train --config`: one phase over token-stream files.
struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  ScheduleSpec schedule;
  int64_t steps = 0;
  int64_t eval_every = 50;
  uint64_t seed = 0;

  // data: either a replay plan over stream files or a weighted mixture
  bool use_mixture = false;
  MixPlan plan;                                           // plan mode
  std::vector<std::string> plan_paths;                    // new source, then replay sources
  std::vector<std::pair<std::string, double>> mixture;    // (path, weight)
  bool wrap_replay = true;

  std::vector<std::pair<std::string, std::string>> eval_sets;  // (name, path)

  std::string out_csv;
  std::string checkpoint_out;
  std::string resume_from;
  bool reset_optimizer = true;
  bool continue_schedule = false;
  bool allow_post_anneal = false;
};
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json load_json_file(const std::string& path);

}  // namespace ctp
