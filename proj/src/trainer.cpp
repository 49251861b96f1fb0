#include "ctp/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ctp/errors.hpp"

namespace ctp {

namespace {

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double d) { append_u64(out, std::bit_cast<uint64_t>(d)); }

void append_str(std::string& out, const std::string& s) {
  append_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

class Parser {
 public:
  Parser(const char* data, size_t size) : data_(data), size_(size) {}
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(size_t n) {
    if (pos_ + n > size_) throw std::runtime_error("checkpoint: truncated section");
  }
  const char* data_;
  size_t size_;
  size_t pos_ = 0;
};

void append_tensors(std::string& out, const ParamSet& p) {
  p.for_each_tensor([&out](const std::vector<double>& t) {
    append_u64(out, t.size());
    for (double d : t) append_f64(out, d);
  });
}

void parse_tensors(Parser& in, ParamSet& p) {
  p.for_each_tensor([&in](std::vector<double>& t) {
    const uint64_t n = in.u64();
    t.resize(n);
    for (uint64_t i = 0; i < n; ++i) t[i] = in.f64();
  });
}

constexpr uint32_t kSecModelConfig = 1;
constexpr uint32_t kSecModel = 2;
constexpr uint32_t kSecOptim = 3;
constexpr uint32_t kSecSource = 4;
constexpr uint32_t kSecMeta = 5;

constexpr char kCkptMagic[9] = "CTPCKPT1";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_run_csv(const std::string& path, const RunRecord& record) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,lr,tokens";
  for (const auto& name : record.eval_names) out << "," << name << "_val_loss";
  out << "\n";
  for (const auto& row : record.rows) {
    out << row.step << "," << format_double(row.lr) << "," << row.tokens;
    for (double v : row.val_loss) out << "," << format_double(v);
    out << "\n";
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

RunRecord read_run_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty metrics file");
  RunRecord record;
  {
    std::stringstream ss(line);
    std::string col;
    int idx = 0;
    const std::string suffix = "_val_loss";
    while (std::getline(ss, col, ',')) {
      if (idx >= 3) {
        if (col.size() <= suffix.size() || col.substr(col.size() - suffix.size()) != suffix)
          throw std::runtime_error(path + ": unexpected column " + col);
        record.eval_names.push_back(col.substr(0, col.size() - suffix.size()));
      }
      ++idx;
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    RunRecord::Row row;
    std::getline(ss, cell, ',');
    row.step = std::stoll(cell);
    std::getline(ss, cell, ',');
    row.lr = std::stod(cell);
    std::getline(ss, cell, ',');
    row.tokens = std::stoll(cell);
    while (std::getline(ss, cell, ',')) row.val_loss.push_back(std::stod(cell));
    if (row.val_loss.size() != record.eval_names.size())
      throw std::runtime_error(path + ": ragged row");
    record.rows.push_back(std::move(row));
  }
  return record;
}

double FinalSummary::avg() const {
  double sum = 0.0;
  for (double v : loss) sum += v;
  return sum / static_cast<double>(loss.size());
}

double FinalSummary::loss_of(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return loss[i];
  throw std::invalid_argument("final summary: no dataset named " + name);
}

FinalSummary final_loss_summary(const RunRecord& record, int64_t window, int64_t stride) {
  if (record.rows.empty()) throw std::invalid_argument("final_loss_summary: empty record");
  if (window <= 0 || stride <= 0 || window % stride != 0)
    throw std::invalid_argument("final_loss_summary: window must be a multiple of stride");
  const int64_t last = record.rows.back().step;
  const int64_t samples = window / stride;

  FinalSummary summary;
  summary.names = record.eval_names;
  summary.loss.assign(record.eval_names.size(), 0.0);
  for (int64_t i = 1; i <= samples; ++i) {
    const int64_t want = last - window + i * stride;
    auto it = std::lower_bound(record.rows.begin(), record.rows.end(), want,
                               [](const RunRecord::Row& r, int64_t s) { return r.step < s; });
    if (it == record.rows.end() || it->step != want)
      throw std::runtime_error("final_loss_summary: insufficient history, no row at step " +
                               std::to_string(want));
    for (size_t d = 0; d < summary.loss.size(); ++d) summary.loss[d] += it->val_loss[d];
  }
  for (double& v : summary.loss) v /= static_cast<double>(samples);
  return summary;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string body;

  std::string cfg;
  append_u32(cfg, static_cast<uint32_t>(ckpt.model_config.vocab_size));
  append_u32(cfg, static_cast<uint32_t>(ckpt.model_config.context_length));
  append_u32(cfg, static_cast<uint32_t>(ckpt.model_config.embed_dim));
  append_u32(cfg, static_cast<uint32_t>(ckpt.model_config.hidden_dim));
  append_u64(cfg, ckpt.model_config.init_seed);

  std::string model;
  append_tensors(model, ckpt.model);

  std::string optim;
  if (ckpt.has_optim) {
    append_u64(optim, static_cast<uint64_t>(ckpt.optim.step_count));
    append_tensors(optim, ckpt.optim.m);
    append_tensors(optim, ckpt.optim.v);
  }

  std::string source;
  append_u32(source, static_cast<uint32_t>(ckpt.source.cursors.size()));
  for (const auto& c : ckpt.source.cursors) {
    append_str(source, c.name);
    append_u64(source, static_cast<uint64_t>(c.window_pos));
    append_u64(source, static_cast<uint64_t>(c.wraps));
  }
  append_u32(source, static_cast<uint32_t>(ckpt.source.rng_words.size()));
  for (uint64_t w : ckpt.source.rng_words) append_u64(source, w);
  append_u64(source, static_cast<uint64_t>(ckpt.source.counter));

  std::string meta;
  append_u64(meta, static_cast<uint64_t>(ckpt.phase_steps_done));
  append_u64(meta, static_cast<uint64_t>(ckpt.global_step));
  append_u64(meta, static_cast<uint64_t>(ckpt.tokens_consumed));
  append_u32(meta, static_cast<uint32_t>(ckpt.schedule_kind));
  append_u64(meta, static_cast<uint64_t>(ckpt.schedule_step));
  append_u32(meta, static_cast<uint32_t>(ckpt.schedule_phase));
  append_u32(meta, ckpt.has_optim ? 1 : 0);

  auto section = [&body](uint32_t tag, const std::string& payload) {
    append_u32(body, tag);
    append_u64(body, payload.size());
    body += payload;
  };
  section(kSecModelConfig, cfg);
  section(kSecModel, model);
  if (ckpt.has_optim) section(kSecOptim, optim);
  section(kSecSource, source);
  section(kSecMeta, meta);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kCkptMagic, 8);
  std::string head;
  append_u32(head, 1);  // version
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 12 || std::string(blob.data(), 8) != std::string(kCkptMagic, 8))
    throw std::runtime_error(path + ": bad checkpoint magic");
  Parser head(blob.data() + 8, 4);
  if (head.u32() != 1) throw std::runtime_error(path + ": unsupported checkpoint version");

  Checkpoint ckpt;
  size_t pos = 12;
  while (pos < blob.size()) {
    Parser tagp(blob.data() + pos, blob.size() - pos);
    const uint32_t tag = tagp.u32();
    const uint64_t len = tagp.u64();
    pos += 12;
    if (pos + len > blob.size()) throw std::runtime_error(path + ": truncated section");
    Parser sec(blob.data() + pos, len);
    pos += len;
    switch (tag) {
      case kSecModelConfig:
        ckpt.model_config.vocab_size = static_cast<int>(sec.u32());
        ckpt.model_config.context_length = static_cast<int>(sec.u32());
        ckpt.model_config.embed_dim = static_cast<int>(sec.u32());
        ckpt.model_config.hidden_dim = static_cast<int>(sec.u32());
        ckpt.model_config.init_seed = sec.u64();
        break;
      case kSecModel:
        parse_tensors(sec, ckpt.model);
        break;
      case kSecOptim:
        ckpt.optim.step_count = static_cast<int64_t>(sec.u64());
        parse_tensors(sec, ckpt.optim.m);
        parse_tensors(sec, ckpt.optim.v);
        break;
      case kSecSource: {
        const uint32_t n = sec.u32();
        for (uint32_t i = 0; i < n; ++i) {
          SourceState::Cursor c;
          c.name = sec.str();
          c.window_pos = static_cast<int64_t>(sec.u64());
          c.wraps = static_cast<int64_t>(sec.u64());
          ckpt.source.cursors.push_back(std::move(c));
        }
        const uint32_t r = sec.u32();
        for (uint32_t i = 0; i < r; ++i) ckpt.source.rng_words.push_back(sec.u64());
        ckpt.source.counter = static_cast<int64_t>(sec.u64());
        break;
      }
      case kSecMeta:
        ckpt.phase_steps_done = static_cast<int64_t>(sec.u64());
        ckpt.global_step = static_cast<int64_t>(sec.u64());
        ckpt.tokens_consumed = static_cast<int64_t>(sec.u64());
        ckpt.schedule_kind = static_cast<ScheduleKind>(sec.u32());
        ckpt.schedule_step = static_cast<int64_t>(sec.u64());
        ckpt.schedule_phase = static_cast<Phase>(sec.u32());
        ckpt.has_optim = sec.u32() != 0;
        break;
      default:
        throw std::runtime_error(path + ": unknown checkpoint section");
    }
  }
  return ckpt;
}

TrainLoop::TrainLoop(ModelConfig model_config, ModelState model, OptimConfig optim_config,
                     OptimState optim, PhaseSpec phase, int64_t schedule_offset,
                     std::unique_ptr<BatchSource> source, std::vector<EvalSet> evals,
                     TrainOptions options)
    : model_config_(model_config),
      model_(std::move(model)),
      optim_config_(optim_config),
      optim_(std::move(optim)),
      phase_(std::move(phase)),
      schedule_offset_(schedule_offset),
      source_(std::move(source)),
      evals_(std::move(evals)),
      options_(options) {
  model_config_.validate();
  optim_config_.validate();
  phase_.schedule.validate();
  if (phase_.steps < 1) throw std::invalid_argument("train loop: phase steps must be >= 1");
  for (const auto& e : evals_) record_.eval_names.push_back(e.name);
}

bool TrainLoop::should_log(int64_t k) const {
  if (k == phase_.steps) return true;
  if (options_.eval_every > 0 && k % options_.eval_every == 0) return true;
  // Final-summary sampling grid: the last `window` steps every `stride`.
  if (k > phase_.steps - options_.summary_window &&
      (phase_.steps - k) % options_.summary_stride == 0)
    return true;
  return false;
}

void TrainLoop::run() {
  while (!step_once()) {
  }
}

bool TrainLoop::step_once() {
  if (steps_done_ >= phase_.steps) return true;
  const int64_t k = steps_done_ + 1;
  const double lr = lr_at(phase_.schedule, schedule_offset_ + k);

  Batch batch = source_->next_batch();
  ParamSet grad;
  last_train_loss_ = loss_and_grad(model_config_, model_, batch, grad);
  clip_gradient(grad, optim_config_.clip_norm);
  adamw_step(model_, grad, optim_, lr, optim_config_);
  steps_done_ = k;
  // One example = L context tokens + 1 target, independent of replay mix.
  tokens_done_ += batch.count * (model_config_.context_length + 1);

  if (should_log(k)) {
    RunRecord::Row row;
    row.step = options_.step_base + k;
    row.lr = lr;
    row.tokens = options_.token_base + tokens_done_;
    for (const auto& e : evals_) row.val_loss.push_back(eval_loss(model_config_, model_, *e.stream));
    record_.rows.push_back(std::move(row));

    const double limit = options_.divergence_factor * std::log(model_config_.vocab_size);
    if (last_train_loss_ > limit) {
      if (++divergent_logs_ >= options_.divergence_logs)
        throw NumericalError("training diverged: loss " + std::to_string(last_train_loss_) +
                             " > " + std::to_string(limit) + " for " +
                             std::to_string(divergent_logs_) + " consecutive logs (phase '" +
                             phase_.name + "', step " + std::to_string(k) + ")");
    } else {
      divergent_logs_ = 0;
    }
  }
  return steps_done_ >= phase_.steps;
}

Checkpoint TrainLoop::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.model_config = model_config_;
  ckpt.model = model_;
  ckpt.has_optim = true;
  ckpt.optim = optim_;
  ckpt.source = source_->state();
  ckpt.phase_steps_done = steps_done_;
  ckpt.global_step = options_.step_base + steps_done_;
  ckpt.tokens_consumed = options_.token_base + tokens_done_;
  ckpt.schedule_kind = phase_.schedule.kind;
  ckpt.schedule_step = schedule_offset_ + steps_done_;
  ckpt.schedule_phase = phase_of(phase_.schedule, ckpt.schedule_step);
  return ckpt;
}

void TrainLoop::restore(const Checkpoint& ckpt) {
  if (!(ckpt.model_config == model_config_))
    throw std::invalid_argument("train loop: checkpoint model config mismatch");
  if (!ckpt.has_optim)
    throw std::invalid_argument("train loop: mid-phase restore needs optimizer state");
  model_ = ckpt.model;
  optim_ = ckpt.optim;
  source_->restore(ckpt.source);
  steps_done_ = ckpt.phase_steps_done;
  tokens_done_ = ckpt.tokens_consumed - options_.token_base;
}

PhaseInit continue_from(const Checkpoint& ckpt, const ModelConfig& cfg, const PhaseSpec& next) {
  if (!(ckpt.model_config == cfg))
    throw std::invalid_argument("continue_from: checkpoint was produced by a different model "
                                "configuration");
  const bool ckpt_infinite = ckpt.schedule_kind == ScheduleKind::InfiniteCosine ||
                             ckpt.schedule_kind == ScheduleKind::InfiniteInvSqrt;
  if (ckpt_infinite && ckpt.schedule_phase == Phase::Annealing && !next.allow_post_anneal)
    throw std::runtime_error(
        "continue_from: checkpoint is past its annealing point; resume from the "
        "pre-annealing checkpoint or pass --allow-post-anneal");

  PhaseInit init;
  init.model = ckpt.model;
  if (next.reset_optimizer || !ckpt.has_optim) {
    init.optim = OptimState::zeros(cfg);
  } else {
    init.optim = ckpt.optim;
  }
  if (next.continue_schedule) {
    if (!next.schedule.is_infinite())
      throw std::invalid_argument("continue_from: only infinite schedules can continue");
    if (ckpt.schedule_phase != Phase::Constant && ckpt.schedule_phase != Phase::Cooldown)
      throw std::runtime_error(
          "continue_from: schedule continuation requires a cooldown- or constant-phase "
          "checkpoint");
    init.schedule_offset = ckpt.schedule_step;
  } else {
    init.schedule_offset = 0;  // re-warm from the start of the new spec
  }
  return init;
}

PhaseInit fresh_init(const ModelConfig& cfg) {
  PhaseInit init;
  init.model = init_model(cfg);
  init.optim = OptimState::zeros(cfg);
  init.schedule_offset = 0;
  return init;
}

}  // namespace ctp
