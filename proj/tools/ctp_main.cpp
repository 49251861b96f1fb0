// ctp — desk-scale continual pre-training toolkit.
//
// Subcommands: gen-data, schedule-dump, mix-audit, train, experiment,
// report, plot. Config files are UTF-8 JSON (see README for the schemas).
// The environment variable CTP_SEED overrides the root seed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctp/config.hpp"
#include "ctp/harness.hpp"
#include "ctp/trainer.hpp"

namespace {

uint64_t root_seed(uint64_t cli_seed) {
  if (const char* env = std::getenv("CTP_SEED")) return std::strtoull(env, nullptr, 0);
  return cli_seed;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
  const nlohmann::json j = ctp::load_json_file(spec_path);
  std::filesystem::create_directories(out_dir);
  const nlohmann::json list = j.is_array() ? j : nlohmann::json::array({j});
  nlohmann::json sums;
  for (const auto& item : list) {
    const ctp::CorpusSpec spec = ctp::corpus_from_json(item);
    const ctp::Corpus corpus = ctp::gen_corpus(spec);
    ctp::write_token_stream(out_dir + "/" + spec.name + ".train.ctpt", corpus.train);
    ctp::write_token_stream(out_dir + "/" + spec.name + ".val.ctpt", corpus.val);
    sums[spec.name] = {{"train", ctp::stream_checksum(corpus.train)},
                       {"val", ctp::stream_checksum(corpus.val)}};
    std::cout << spec.name << ": " << corpus.train.size() << " train / " << corpus.val.size()
              << " val tokens\n";
  }
  std::ofstream(out_dir + "/checksums.json") << sums.dump(2) << "\n";
  return 0;
}

int cmd_schedule_dump(const std::string& config_path, int64_t steps_override) {
  const ctp::ScheduleSpec spec = ctp::schedule_from_json(ctp::load_json_file(config_path));
  int64_t last;
  if (spec.unbounded()) {
    if (steps_override < 0) {
      std::cerr << "schedule has an open-ended constant phase; pass --steps\n";
      return 1;
    }
    last = steps_override;
  } else {
    last = steps_override >= 0 ? std::min(steps_override, spec.total_steps())
                               : spec.total_steps();
  }
  std::cout << "step,lr,phase\n";
  for (int64_t t = 0; t <= last; ++t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", ctp::lr_at(spec, t));
    std::cout << t << "," << buf << "," << ctp::to_string(ctp::phase_of(spec, t)) << "\n";
  }
  return 0;
}

int cmd_mix_audit(const std::string& config_path, int64_t steps) {
  const ctp::MixPlan plan = ctp::mixplan_from_json(ctp::load_json_file(config_path));
  std::cout << "batch,replay,new";
  for (const auto& [name, p] : plan.replay_sources) std::cout << "," << name;
  std::cout << "\n";
  for (int64_t b = 1; b <= steps; ++b) {
    const auto [replay, fresh] = ctp::batch_composition(plan, b);
    std::cout << b << "," << replay << "," << fresh;
    if (!plan.replay_sources.empty()) {
      std::vector<double> props;
      for (const auto& [name, p] : plan.replay_sources) props.push_back(p);
      for (int64_t c : ctp::largest_remainder(props, replay)) std::cout << "," << c;
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path) {
  const ctp::TrainConfig cfg = ctp::train_config_from_json(ctp::load_json_file(config_path));

  std::vector<ctp::TokenStream> streams;
  std::vector<ctp::EvalSet> evals;
  std::unique_ptr<ctp::BatchSource> source;
  std::vector<ctp::TokenStream> eval_streams;

  if (cfg.use_mixture) {
    std::vector<const ctp::TokenStream*> ptrs;
    streams.reserve(cfg.mixture.size());
    for (const auto& [path, w] : cfg.mixture) streams.push_back(ctp::read_token_stream(path));
    for (const auto& s : streams) ptrs.push_back(&s);
    source = std::make_unique<ctp::MixtureReader>(cfg.mixture, ptrs, cfg.model.context_length,
                                                  cfg.plan.batch_size, root_seed(cfg.seed));
  } else {
    streams.reserve(cfg.plan_paths.size());
    for (const auto& path : cfg.plan_paths) streams.push_back(ctp::read_token_stream(path));
    std::vector<const ctp::TokenStream*> replay_ptrs;
    for (size_t i = 1; i < streams.size(); ++i) replay_ptrs.push_back(&streams[i]);
    source = std::make_unique<ctp::PlanReader>(cfg.plan, &streams[0], replay_ptrs,
                                               cfg.model.context_length, cfg.wrap_replay);
  }

  eval_streams.reserve(cfg.eval_sets.size());
  for (const auto& [name, path] : cfg.eval_sets) {
    eval_streams.push_back(ctp::read_token_stream(path));
    evals.push_back({name, &eval_streams.back()});
  }

  ctp::PhaseSpec phase;
  phase.name = "train";
  phase.schedule = cfg.schedule;
  phase.steps = cfg.steps;
  phase.reset_optimizer = cfg.reset_optimizer;
  phase.continue_schedule = cfg.continue_schedule;
  phase.allow_post_anneal = cfg.allow_post_anneal;

  ctp::PhaseInit init;
  if (!cfg.resume_from.empty()) {
    init = ctp::continue_from(ctp::load_checkpoint(cfg.resume_from), cfg.model, phase);
  } else {
    ctp::ModelConfig mcfg = cfg.model;
    if (mcfg.init_seed == 1 && cfg.seed != 0) mcfg.init_seed = root_seed(cfg.seed);
    init.model = ctp::init_model(mcfg);
    init.optim = ctp::OptimState::zeros(cfg.model);
  }

  ctp::TrainOptions opts;
  opts.eval_every = cfg.eval_every;
  ctp::TrainLoop loop(cfg.model, std::move(init.model), cfg.optim, std::move(init.optim),
                      phase, init.schedule_offset, std::move(source), evals, opts);
  loop.run();

  if (!cfg.out_csv.empty()) ctp::write_run_csv(cfg.out_csv, loop.record());
  if (!cfg.checkpoint_out.empty()) ctp::save_checkpoint(cfg.checkpoint_out, loop.make_checkpoint());

  const ctp::FinalSummary summary = ctp::final_loss_summary(loop.record());
  for (size_t i = 0; i < summary.names.size(); ++i)
    std::cout << summary.names[i] << " final loss " << summary.loss[i] << "\n";
  if (!summary.names.empty()) std::cout << "avg " << summary.avg() << "\n";
  return 0;
}

void print_report(const ctp::ComparisonReport& report) {
  std::printf("%-18s %-16s", "arm", "tag");
  bool header_done = false;
  for (const auto& row : report.rows) {
    if (!header_done) {
      for (const auto& name : row.summary.names) std::printf(" %12s", name.c_str());
      std::printf(" %12s\n", "AVG");
      header_done = true;
    }
    std::printf("%-18s %-16s", row.arm.c_str(), row.tag.c_str());
    for (double v : row.summary.loss) std::printf(" %12.4f", v);
    std::printf(" %12.4f\n", row.avg);
  }
  for (const auto& check : report.checks)
    std::printf("[%s] %s: %s\n", check.pass ? "PASS" : "FAIL", check.name.c_str(),
                check.detail.c_str());
}

int cmd_experiment(const std::string& name, double scale, const std::string& out,
                   uint64_t seed) {
  ctp::DeskConfig desk;
  desk.seed = root_seed(seed);
  desk.scale = scale;
  ctp::ExperimentSpec spec = ctp::preset(name, desk);
  spec.out_dir = out;
  spec.verbose = true;
  const ctp::ExperimentResult result = ctp::run_experiment(spec);
  print_report(result.report);
  bool all = true;
  for (const auto& c : result.report.checks) all = all && c.pass;
  return all ? 0 : 2;
}

int cmd_report(const std::string& dir) {
  const nlohmann::json j = ctp::load_json_file(dir + "/report.json");
  std::cout << "experiment: " << j.at("experiment").get<std::string>() << "\n";
  std::printf("%-18s %-16s %-40s %12s\n", "arm", "tag", "final loss (recomputed from CSV)",
              "AVG");
  for (const auto& row : j.at("rows")) {
    const std::string arm = row.at("arm").get<std::string>();
    const std::string tag = row.at("tag").get<std::string>();
    // Recompute the Table-style summary from the emitted CSV as a cross
    // check against the stored values.
    std::string csv = dir + "/" + arm + ".csv";
    if (tag.rfind("anneal@", 0) == 0) {
      std::string file_tag = tag;
      std::replace(file_tag.begin(), file_tag.end(), '@', '_');
      csv = dir + "/" + arm + "." + file_tag + ".csv";
    }
    std::string cells;
    double avg = row.at("avg").get<double>();
    if (std::filesystem::exists(csv) && tag != "final") {
      // Phase rows of multi-phase arms share one CSV; summaries recompute
      // only for single-record files (arm CSV end or branch CSV).
    }
    if (std::filesystem::exists(csv)) {
      try {
        const ctp::RunRecord rec = ctp::read_run_csv(csv);
        const ctp::FinalSummary s = ctp::final_loss_summary(rec);
        for (size_t i = 0; i < s.names.size(); ++i)
          cells += s.names[i] + "=" + std::to_string(s.loss[i]) + " ";
      } catch (const std::exception&) {
        cells = "(no trailing summary window in this CSV)";
      }
    }
    std::printf("%-18s %-16s %-40s %12.4f\n", arm.c_str(), tag.c_str(), cells.c_str(), avg);
  }
  for (const auto& c : j.at("checks"))
    std::printf("[%s] %s: %s\n", c.at("pass").get<bool>() ? "PASS" : "FAIL",
                c.at("name").get<std::string>().c_str(),
                c.at("detail").get<std::string>().c_str());
  return 0;
}

int cmd_plot(const std::string& dir) {
  std::vector<std::pair<std::string, ctp::RunRecord>> runs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".csv") continue;
    runs.emplace_back(entry.path().stem().string(), ctp::read_run_csv(entry.path().string()));
  }
  std::sort(runs.begin(), runs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  if (runs.empty()) {
    std::cerr << "no CSV files under " << dir << "\n";
    return 1;
  }
  ctp::emit_plots(dir, runs);
  std::cout << "wrote SVG charts to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale continual pre-training toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out_dir = "out", config_path, dir;
  int64_t steps = -1;
  double scale = 1.0;
  uint64_t seed = 7;
  std::string preset_name;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic corpora");
  gen->add_option("--spec", spec_path, "corpus spec JSON (object or array)")->required();
  gen->add_option("--out", out_dir, "output directory");

  auto* dump = app.add_subcommand("schedule-dump", "emit step,lr,phase CSV for a schedule");
  dump->add_option("--config", config_path, "schedule JSON")->required();
  dump->add_option("--steps", steps, "last step to dump (required for open-ended)");

  auto* audit = app.add_subcommand("mix-audit", "print per-batch replay composition");
  audit->add_option("--config", config_path, "mix plan JSON")->required();
  audit->add_option("--steps", steps, "number of batches")->required();

  auto* train = app.add_subcommand("train", "run one training phase from a config");
  train->add_option("--config", config_path, "train config JSON")->required();

  auto* exp = app.add_subcommand("experiment", "run a preset experiment");
  exp->add_option("--preset", preset_name, "preset name, e.g. replay-sweep-strong")->required();
  exp->add_option("--scale", scale, "step-budget scale factor (default 1.0)");
  exp->add_option("--out", out_dir, "output directory");
  exp->add_option("--seed", seed, "root seed (CTP_SEED env overrides)");

  auto* report = app.add_subcommand("report", "print the report of a finished experiment");
  report->add_option("--dir", dir, "experiment output directory")->required();

  auto* plot = app.add_subcommand("plot", "render SVG charts from run CSVs");
  plot->add_option("--dir", dir, "directory with run CSVs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir);
    if (dump->parsed()) return cmd_schedule_dump(config_path, steps);
    if (audit->parsed()) return cmd_mix_audit(config_path, steps);
    if (train->parsed()) return cmd_train(config_path);
    if (exp->parsed()) return cmd_experiment(preset_name, scale, out_dir, seed);
    if (report->parsed()) return cmd_report(dir);
    if (plot->parsed()) return cmd_plot(dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
