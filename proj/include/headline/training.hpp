#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headline/beam_search.hpp"
#include "headline/bleu.hpp"
#include "headline/errors.hpp"
#include "headline/params.hpp"
#include "headline/seq2seq.hpp"

namespace headline {

// ------------------------------------------------------------- optimizer

struct RmsPropHyper {
  double lr = 0.01;
  double decay = 0.9;
  double momentum = 0.9;
  double epsilon = 1e-8;

  friend bool operator==(const RmsPropHyper&, const RmsPropHyper&) = default;
};

/// Running mean of squared gradients and the momentum buffer, one slot per
/// parameter.
template <class Real>
struct OptimizerState {
  RmsPropHyper hyper;
  ModelParams<Real> cache;
  ModelParams<Real> momentum;

  static OptimizerState fresh(const Arch& arch, RmsPropHyper hyper = {}) {
    return {hyper, ModelParams<Real>::zeros(arch), ModelParams<Real>::zeros(arch)};
  }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// cache <- decay*cache + (1-decay)*g^2
/// step  <- momentum*step - lr*g/sqrt(cache + eps)
/// w     <- w + step
template <class Real>
void rmsprop_update(std::span<Real> w, std::span<const Real> g, std::span<Real> cache, std::span<Real> step,
                    const RmsPropHyper& hyper, double lr) {
  require(w.size() == g.size() && w.size() == cache.size() && w.size() == step.size(),
          "rmsprop: shape mismatch");
  const Real decay = Real(hyper.decay), mom = Real(hyper.momentum), eps = Real(hyper.epsilon), rate = Real(lr);
  for (std::size_t i = 0; i < w.size(); ++i) {
    cache[i] = decay * cache[i] + (Real(1) - decay) * g[i] * g[i];
    step[i] = mom * step[i] - rate * g[i] / std::sqrt(cache[i] + eps);
    w[i] += step[i];
  }
}

template <class Real>
void rmsprop_step(ModelParams<Real>& params, const ModelParams<Real>& grads, OptimizerState<Real>& state, double lr) {
  auto tp = params.tensors();
  auto tg = grads.tensors();
  auto tc = state.cache.tensors();
  auto tm = state.momentum.tensors();
  require(tp.size() == tg.size() && tp.size() == tc.size() && tp.size() == tm.size(),
          "rmsprop_step: layout mismatch");
  std::vector<std::string> names;
  grads.for_each([&](const std::string& n, const Tensor<Real>&) { names.push_back(n); });
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tg[k]->all_finite()) throw DivergenceError("rmsprop_step: non-finite gradient in " + names[k]);
    rmsprop_update<Real>(tp[k]->values(), tg[k]->values(), tc[k]->values(), tm[k]->values(), state.hyper, lr);
  }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping. max_norm <= 0 disables clipping.
template <class Real>
double clip_global_norm(ModelParams<Real>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0 && norm > max_norm) scale(grads, Real(max_norm / norm));
  return norm;
}

// ---------------------------------------------------------------- config

struct TrainConfig {
  std::size_t epochs = 9;
  std::size_t halve_after_epoch = 5;
  std::size_t halve_interval = 1;  // epochs between halvings
  std::size_t batch_size = 384;
  double sampling_rate = 0.1;
  RmsPropHyper optimizer;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // steps; 0 = epoch ends only
  std::size_t holdout_eval_size = 384;
  bool evaluate_bleu = true;
  bool bleu_smoothing = false;
  BeamConfig eval_beam;
  std::size_t threads = 0;
  bool log_wall_time = true;
  std::size_t stop_after_epoch = 0;  // 0 = run to the end

  void validate() const {
    require(epochs >= 1, "train: epochs must be >= 1");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(halve_interval >= 1, "train: halve_interval must be >= 1");
    require(sampling_rate >= 0 && sampling_rate <= 1, "train: sampling_rate outside [0, 1]");
    require(optimizer.lr > 0, "train: learning rate must be positive");
    eval_beam.validate();
  }
};

/// Full rate through `halve_after_epoch`, then halved at the start of every
/// `halve_interval`-th following epoch.
inline double lr_for_epoch(std::size_t epoch, const TrainConfig& cfg) {
  require(epoch >= 1 && epoch <= cfg.epochs, "lr_for_epoch: epoch outside 1..epochs");
  if (epoch <= cfg.halve_after_epoch) return cfg.optimizer.lr;
  const std::size_t halvings = (epoch - cfg.halve_after_epoch - 1) / cfg.halve_interval + 1;
  return cfg.optimizer.lr * std::pow(0.5, double(halvings));
}

// ------------------------------------------------------------ metric log

struct MetricRecord {
  double wall_time = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string split;
  double loss = 0;
  std::optional<double> bleu;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

inline std::string to_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["wall_time"] = r.wall_time;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["split"] = r.split;
  j["loss"] = r.loss;
  j["bleu"] = r.bleu ? nlohmann::ordered_json(*r.bleu) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

inline MetricRecord parse_metric_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.wall_time = j.at("wall_time").get<double>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.step = j.at("step").get<std::size_t>();
    r.split = j.at("split").get<std::string>();
    r.loss = j.at("loss").get<double>();
    if (!j.at("bleu").is_null()) r.bleu = j.at("bleu").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metric log: ") + e.what());
  }
}

/// Append-only JSON-lines log. Records are also kept in memory.
class MetricLog {
 public:
  MetricLog() = default;

  /// Opens `path` for appending, first truncating it to `truncate_to` bytes
  /// when given (used when resuming from a checkpoint).
  explicit MetricLog(std::string path, std::optional<std::uint64_t> truncate_to = std::nullopt)
      : path_(std::move(path)) {
    std::string kept;
    if (truncate_to) {
      std::ifstream in(path_, std::ios::binary);
      if (!in) throw DataError("cannot reopen metric log " + path_);
      kept.assign(std::istreambuf_iterator<char>(in), {});
      if (kept.size() < *truncate_to) throw DataError("metric log is shorter than the checkpoint offset");
      kept.resize(*truncate_to);
      std::ofstream out(path_, std::ios::binary | std::ios::trunc);
      out << kept;
    } else {
      std::ofstream out(path_, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot create metric log " + path_);
    }
    offset_ = kept.size();
    std::istringstream lines(kept);
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty()) records_.push_back(parse_metric_line(line));
    }
  }

  void append(const MetricRecord& r) {
    records_.push_back(r);
    const std::string line = to_json_line(r) + "\n";
    offset_ += line.size();
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      out << line;
      if (!out) throw DataError("cannot append to metric log " + path_);
    }
  }

  const std::vector<MetricRecord>& records() const { return records_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string path_;
  std::vector<MetricRecord> records_;
  std::uint64_t offset_ = 0;
};

inline std::vector<MetricRecord> read_metric_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metric log " + path);
  std::vector<MetricRecord> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(parse_metric_line(line));
  }
  return out;
}

// --------------------------------------------------------------- trainer

struct HoldoutMetrics {
  double loss = 0;
  std::optional<BleuReport> bleu;
};

/// Teacher-forced loss and BLEU over the first `limit` holdout examples.
template <class Real>
HoldoutMetrics evaluate_model(const ModelParams<Real>& p, std::span<const Example> holdout, std::size_t limit,
                              const BeamConfig& beam, bool with_bleu, bool smoothing, std::size_t threads) {
  const std::size_t n = std::min(limit, holdout.size());
  require(n > 0, "evaluate: no holdout examples");
  const auto subset = holdout.subspan(0, n);
  HoldoutMetrics m;
  m.loss = holdout_loss<Real>(Batch::from_examples(subset), p, threads);
  if (with_bleu) m.bleu = evaluate_holdout<Real>(p, subset, beam, threads, {smoothing, kEosId});
  return m;
}

/// Mini-batch training loop. The training set is shuffled once, at
/// construction; every epoch walks it in that order.
template <class Real>
class Trainer {
 public:
  using EpochHook = std::function<void(const Trainer&, MetricLog&)>;

  Trainer(TrainConfig cfg, ModelParams<Real> params, std::vector<Example> train, std::vector<Example> holdout)
      : cfg_(std::move(cfg)),
        params_(std::move(params)),
        optimizer_(OptimizerState<Real>::fresh(params_.arch, cfg_.optimizer)),
        holdout_(std::move(holdout)),
        rng_(cfg_.seed) {
    cfg_.validate();
    require(!train.empty(), "train: empty training set");
    std::mt19937_64 shuffle_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(train.begin(), train.end(), shuffle_rng);
    train_ = std::move(train);
  }

  /// Restores optimizer state and progress saved by a checkpoint.
  void restore(OptimizerState<Real> optimizer, std::size_t epochs_completed, std::size_t global_step,
               const std::string& rng_state) {
    optimizer_ = std::move(optimizer);
    epochs_completed_ = epochs_completed;
    global_step_ = global_step;
    std::istringstream is(rng_state);
    is >> rng_;
    if (!is) throw DataError("checkpoint: bad rng state");
  }

  /// Trains until cfg.epochs (or cfg.stop_after_epoch) epochs are done.
  /// `on_epoch_end` runs after each epoch's holdout evaluation.
  void run(MetricLog& log, const EpochHook& on_epoch_end = {}) {
    while (epochs_completed_ < cfg_.epochs) {
      const std::size_t epoch = epochs_completed_ + 1;
      const double lr = lr_for_epoch(epoch, cfg_);
      for (std::size_t lo = 0; lo < train_.size(); lo += cfg_.batch_size) {
        const std::size_t hi = std::min(lo + cfg_.batch_size, train_.size());
        const Batch batch = Batch::from_examples(std::span<const Example>(train_).subspan(lo, hi - lo));
        auto result = batch_forward_backward<Real>(batch, cfg_.sampling_rate, rng_(), params_, cfg_.threads, true);
        if (!std::isfinite(result.mean_loss)) {
          throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                std::to_string(global_step_ + 1));
        }
        clip_global_norm(result.grads, cfg_.clip_norm);
        rmsprop_step(params_, result.grads, optimizer_, lr);
        ++global_step_;
        sampled_feeds_ += result.sampled_feeds;
        feed_decisions_ += result.feed_decisions;
        log.append({now(), epoch, global_step_, "train", result.mean_loss, std::nullopt});
        const bool epoch_end = hi == train_.size();
        if (cfg_.eval_every != 0 && global_step_ % cfg_.eval_every == 0 && !epoch_end) evaluate_into(log, epoch);
      }
      ++epochs_completed_;
      evaluate_into(log, epoch);
      if (on_epoch_end) on_epoch_end(*this, log);
      if (cfg_.stop_after_epoch != 0 && epochs_completed_ >= cfg_.stop_after_epoch) break;
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const ModelParams<Real>& params() const { return params_; }
  ModelParams<Real>& params() { return params_; }
  const OptimizerState<Real>& optimizer() const { return optimizer_; }
  std::size_t epochs_completed() const { return epochs_completed_; }
  std::size_t global_step() const { return global_step_; }
  const std::vector<Example>& training_order() const { return train_; }
  std::size_t sampled_feeds() const { return sampled_feeds_; }
  std::size_t feed_decisions() const { return feed_decisions_; }

  std::string rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }

 private:
  double now() const {
    if (!cfg_.log_wall_time) return 0.0;
    const auto t = std::chrono::system_clock::now().time_since_epoch();
    return std::chrono::duration<double>(t).count();
  }

  void evaluate_into(MetricLog& log, std::size_t epoch) {
    if (holdout_.empty()) return;
    const auto m = evaluate_model<Real>(params_, holdout_, cfg_.holdout_eval_size, cfg_.eval_beam, cfg_.evaluate_bleu,
                                        cfg_.bleu_smoothing, cfg_.threads);
    std::optional<double> bleu;
    if (m.bleu) bleu = m.bleu->bleu;
    log.append({now(), epoch, global_step_, "holdout", m.loss, bleu});
  }

  TrainConfig cfg_;
  ModelParams<Real> params_;
  OptimizerState<Real> optimizer_;
  std::vector<Example> train_;
  std::vector<Example> holdout_;
  std::mt19937_64 rng_;
  std::size_t epochs_completed_ = 0;
  std::size_t global_step_ = 0;
  std::size_t sampled_feeds_ = 0;
  std::size_t feed_decisions_ = 0;
};

}  // namespace headline
