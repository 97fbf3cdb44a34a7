#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cslb/csv.hpp"
#include "cslb/error.hpp"
#include "cslb/gating.hpp"
#include "cslb/model.hpp"
#include "cslb/optim.hpp"

namespace cslb {

struct TrainConfig {
  std::int64_t steps = 2000;
  int batch_size = 4;
  int seq_len = 32;
  double lr_peak = 3e-4;
  std::int64_t warmup_steps = -1;  // -1: 2% of steps
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::uint64_t seed = 42;
  std::int64_t eval_every = 100;
  std::int64_t eval_windows = 32;  // cap on validation windows, 0 = all
  std::string corpus_path;

  std::int64_t resolved_warmup() const {
    return warmup_steps >= 0 ? warmup_steps : steps / 50;
  }

  void validate(const ModelConfig& model) const {
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (batch_size < 1 || seq_len < 1)
      throw ConfigError("train: batch_size and seq_len must be >= 1");
    if (seq_len > model.max_seq_len)
      throw ConfigError("train: seq_len " + std::to_string(seq_len) +
                        " exceeds max_seq_len " +
                        std::to_string(model.max_seq_len));
    if (steps > 0 && resolved_warmup() >= steps)
      throw ConfigError("train: warmup_steps must be smaller than steps");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (eval_windows < 0) throw ConfigError("train: eval_windows must be >= 0");
    AdamWConfig a;
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("train: betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train: eps must be > 0");
    (void)a;
  }

  AdamWConfig adamw() const {
    return AdamWConfig{lr_peak, beta1, beta2, eps, weight_decay};
  }
};

// Linear warmup to lr_peak, then cosine decay to 0.1 * lr_peak at `steps`.
inline double lr_at(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.steps)
    throw ContractError("lr_at: step outside [0, steps]");
  const std::int64_t warmup = cfg.resolved_warmup();
  if (step < warmup)
    return cfg.lr_peak * static_cast<double>(step) /
           static_cast<double>(warmup);
  if (cfg.steps == warmup) return cfg.lr_peak;
  const double tau = static_cast<double>(step - warmup) /
                     static_cast<double>(cfg.steps - warmup);
  return cfg.lr_peak * (0.55 + 0.45 * std::cos(M_PI * tau));
}

// Uniformly sampled training windows over the train split of the corpus:
// inputs are tokens[s, s+T), targets the window shifted by one.
class Batcher {
 public:
  Batcher(std::span<const std::int32_t> tokens, std::int64_t train_len,
          int seq_len, int batch_size, std::uint64_t seed)
      : tokens_(tokens.begin(), tokens.end()),
        seq_len_(seq_len),
        batch_size_(batch_size),
        rng_(seed) {
    // A window consumes seq_len+1 tokens and must stay inside the train split.
    starts_ = train_len - seq_len;
    if (starts_ < 1)
      throw ConfigError("batcher: train split of " +
                        std::to_string(train_len) +
                        " tokens cannot fit a window of " +
                        std::to_string(seq_len + 1));
  }

  void next(std::vector<std::int32_t>& inputs,
            std::vector<std::int32_t>& targets) {
    const size_t n = static_cast<size_t>(batch_size_) * seq_len_;
    inputs.resize(n);
    targets.resize(n);
    for (int b = 0; b < batch_size_; ++b) {
      const std::int64_t s =
          static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(starts_));
      for (int i = 0; i < seq_len_; ++i) {
        inputs[b * seq_len_ + i] = tokens_[s + i];
        targets[b * seq_len_ + i] = tokens_[s + i + 1];
      }
    }
  }

  std::string rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
  }

  void set_rng_state(const std::string& state) {
    std::istringstream is(state);
    is >> rng_;
    if (!is) throw IoError("batcher: malformed rng state");
  }

 private:
  std::vector<std::int32_t> tokens_;
  int seq_len_, batch_size_;
  std::int64_t starts_;
  std::mt19937_64 rng_;
};

struct MetricsRow {
  std::int64_t step;
  double train_loss;
  std::optional<double> val_loss;
  double lr;
  double wall_ms;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  void append(MetricsRow row) {
    if (!rows.empty() && row.step <= rows.back().step)
      throw ContractError("metrics: steps must be strictly increasing");
    rows.push_back(std::move(row));
  }

  std::string to_csv() const {
    std::string out = "step,train_loss,val_loss,lr,wall_ms\n";
    for (const auto& r : rows) {
      out += csv::row({std::to_string(r.step), csv::fmt(r.train_loss),
                       r.val_loss ? csv::fmt(*r.val_loss) : std::string(),
                       csv::fmt(r.lr), csv::fmt(r.wall_ms)});
    }
    return out;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : rows) {
      out += "{\"step\":" + std::to_string(r.step);
      out += ",\"train_loss\":" + csv::fmt(r.train_loss);
      out += ",\"val_loss\":";
      out += r.val_loss ? csv::fmt(*r.val_loss) : "null";
      out += ",\"lr\":" + csv::fmt(r.lr);
      out += ",\"wall_ms\":" + csv::fmt(r.wall_ms) + "}\n";
    }
    return out;
  }
};

inline std::string gate_trajectory_csv(const GateTrajectory& traj,
                                       int n_layers) {
  std::string out = "step";
  for (int l = 0; l < n_layers; ++l) out += ",p_" + std::to_string(l);
  out += '\n';
  for (const auto& row : traj.rows) {
    out += std::to_string(row.step);
    for (double p : row.p) out += ',' + csv::fmt(p);
    out += '\n';
  }
  return out;
}

template <typename S>
struct TrainResult {
  MetricsLog log;
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::optional<GateTrajectory> trajectory;
  std::int64_t completed_steps = 0;
  bool aborted = false;
  std::string abort_reason;
  std::string batcher_rng_state;
};

namespace detail {

// Mean next-token loss over evenly spaced windows of the validation split.
template <typename S>
double validation_loss(const TransformerModel<S>& model,
                       std::span<const std::int32_t> tokens,
                       std::int64_t val_start, const TrainConfig& cfg) {
  const std::int64_t n = static_cast<std::int64_t>(tokens.size());
  const int t = cfg.seq_len;
  std::vector<std::int64_t> starts;
  for (std::int64_t s = val_start; s + t < n; s += t) starts.push_back(s);
  if (starts.empty())
    throw ConfigError("validation split cannot fit a window of " +
                      std::to_string(t + 1) + " tokens");
  if (cfg.eval_windows > 0 &&
      static_cast<std::int64_t>(starts.size()) > cfg.eval_windows)
    starts.resize(cfg.eval_windows);

  double total = 0.0;
  std::int64_t count = 0;
  std::vector<std::int32_t> inputs, targets;
  for (size_t w0 = 0; w0 < starts.size();
       w0 += static_cast<size_t>(cfg.batch_size)) {
    const size_t w1 =
        std::min(starts.size(), w0 + static_cast<size_t>(cfg.batch_size));
    const std::int64_t b = static_cast<std::int64_t>(w1 - w0);
    inputs.clear();
    targets.clear();
    for (size_t w = w0; w < w1; ++w)
      for (int i = 0; i < t; ++i) {
        inputs.push_back(tokens[starts[w] + i]);
        targets.push_back(tokens[starts[w] + i + 1]);
      }
    Tape<S> tape;
    auto bound = model.bind(tape, false);
    auto loss = model.loss_on_tokens(tape, bound, inputs, targets, b, t);
    total += static_cast<double>(loss.at(0)) * static_cast<double>(b * t);
    count += b * t;
  }
  return total / static_cast<double>(count);
}

}  // namespace detail

// Deterministic next-token training with a held-out tail split (final 10%).
// The caller owns the optimizer so its state can be checkpointed.
template <typename S>
TrainResult<S> train(TransformerModel<S>& model, AdamW<S>& opt,
                     const TrainConfig& cfg,
                     std::span<const std::int32_t> corpus) {
  cfg.validate(model.config());
  const std::int64_t n = static_cast<std::int64_t>(corpus.size());
  const std::int64_t val_start = n - n / 10;
  Batcher batcher(corpus, val_start, cfg.seq_len, cfg.batch_size, cfg.seed);

  TrainResult<S> result;
  result.initial_val_loss = detail::validation_loss(model, corpus, val_start, cfg);
  result.final_val_loss = result.initial_val_loss;
  GateTrajectory trajectory;
  if (model.gated())
    trajectory.record(0, gate_probabilities(model.gate_theta()));

  std::vector<std::int32_t> inputs, targets;
  std::vector<std::span<const S>> grads(model.num_params());
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    batcher.next(inputs, targets);

    Tape<S> tape;
    auto bound = model.bind(tape, true);
    auto loss = model.loss_on_tokens(tape, bound, inputs, targets,
                                     cfg.batch_size, cfg.seq_len);
    const double train_loss = static_cast<double>(loss.at(0));
    if (!std::isfinite(train_loss)) {
      result.aborted = true;
      result.abort_reason =
          "non-finite training loss at step " + std::to_string(step);
      break;
    }
    tape.backward(loss);
    for (size_t p = 0; p < model.num_params(); ++p) grads[p] = tape.grad(bound[p]);
    const double lr = lr_at(step, cfg);
    opt.update(model.params(), grads, model.decay_mask(), model.names(), lr);

    MetricsRow row{step, train_loss, std::nullopt, lr, 0.0};
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      row.val_loss = detail::validation_loss(model, corpus, val_start, cfg);
      result.final_val_loss = *row.val_loss;
      if (model.gated())
        trajectory.record(step, gate_probabilities(model.gate_theta()));
    }
    const auto t1 = std::chrono::steady_clock::now();
    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.log.append(std::move(row));
    result.completed_steps = step;
  }

  if (model.gated()) result.trajectory = std::move(trajectory);
  result.batcher_rng_state = batcher.rng_state();
  return result;
}

struct AblationRow {
  std::string label;  // "baseline" or the cut layer index
  double final_val_loss;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "cut_layer,final_val_loss\n";
  for (const auto& r : rows)
    out += csv::row({r.label, csv::fmt(r.final_val_loss)});
  return out;
}

// Trains one baseline plus one run per cut layer (alpha at that layer only),
// all with identical seeds and data order.
template <typename S>
std::vector<AblationRow> ablation_sweep(const ModelConfig& base_model,
                                        const TrainConfig& cfg,
                                        std::span<const std::int32_t> corpus,
                                        double alpha_cut) {
  if (!(alpha_cut > 0.0) || alpha_cut > 1.0)
    throw ConfigError("ablation: alpha must lie in (0, 1]");
  std::vector<AblationRow> rows;
  auto run_one = [&](AttenuationSpec att, std::string label) {
    ModelConfig mc = base_model;
    mc.attenuation = std::move(att);
    TransformerModel<S> model(mc);
    AdamW<S> opt(cfg.adamw(), model.params());
    auto result = train(model, opt, cfg, corpus);
    if (result.aborted)
      throw NumericError("ablation run '" + label + "' aborted: " +
                         result.abort_reason);
    rows.push_back({std::move(label), result.final_val_loss});
  };
  run_one(AttenuationSpec::baseline(), "baseline");
  for (int l = 0; l < base_model.n_layers; ++l)
    run_one(AttenuationSpec::fixed_cut(base_model.n_layers, l, alpha_cut),
            std::to_string(l));
  return rows;
}

}  // namespace cslb
