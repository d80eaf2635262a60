#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/checkpoint.hpp"
#include "langxpand/random.hpp"
#include "langxpand/tokenizer.hpp"

namespace langxpand {

struct TrainConfig {
  double peak_lr = 3e-3;
  std::size_t warmup_steps = 20;
  std::size_t total_steps = 200;
  double min_lr_ratio = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::size_t snapshot_every = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

// Linear warmup from 0 to peak_lr, then cosine decay to peak_lr * min_lr_ratio
// at total_steps.
double lr_at(const TrainConfig& cfg, std::size_t step);

struct OptimizerState {
  TensorStore m;
  TensorStore v;
  std::size_t t = 0;

  static OptimizerState zeros_like(const TensorStore& params);
  TensorStore to_store() const;  // "m.<name>" / "v.<name>"
  static OptimizerState from_store(const TensorStore& store, std::size_t t);
};

// Values held while training a parameter set with AdamW: parameters,
// gradients, first and second moments.
std::size_t optimizer_resident_values(const TensorStore& params);

// AdamW with bias correction and decoupled weight decay (matrices only), at
// the learning rate lr_at(cfg, step). Requires step == state.t + 1.
// Non-finite gradients raise DataError naming the tensor.
void adamw_step(TensorStore& params, const TensorStore& grads, OptimizerState& state, const TrainConfig& cfg,
                std::size_t step);

// Same update with an explicit learning rate.
void adamw_update(TensorStore& params, const TensorStore& grads, OptimizerState& state, const TrainConfig& cfg,
                  double lr);

// Scales grads in place so their global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(TensorStore& grads, double max_norm);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;

  bool operator==(const StepRecord&) const = default;
};

struct TrainReport {
  std::vector<StepRecord> steps;
  double wall_seconds = 0.0;  // this process only; not persisted
  std::size_t tokens_consumed = 0;

  std::string csv() const;  // step,lr,loss
  static TrainReport parse_csv(const std::string& text);
  nlohmann::ordered_json summary_json() const;
};

// Continual pre-training over a token stream split into non-overlapping
// seq_len chunks, visited in a seeded per-epoch shuffle.
class Trainer {
 public:
  Trainer(ModelCheckpoint ckpt, std::vector<std::int32_t> tokens, TrainConfig cfg);

  // Restores params, optimizer state, data cursor and RNG from a snapshot
  // directory written by save_snapshot.
  static Trainer resume(const std::filesystem::path& snapshot_dir, std::vector<std::int32_t> tokens);

  StepRecord step();
  // Runs until `until_step` (default total_steps). Writes a snapshot into
  // snapshot_dir every cfg.snapshot_every steps and at the end, if given.
  void run(std::optional<std::size_t> until_step = std::nullopt,
           const std::optional<std::filesystem::path>& snapshot_dir = std::nullopt);
  void save_snapshot(const std::filesystem::path& dir) const;

  const ModelCheckpoint& checkpoint() const { return ckpt_; }
  const OptimizerState& optimizer() const { return opt_; }
  const TrainReport& report() const { return report_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t current_step() const { return opt_.t; }

 private:
  void start_epoch();
  std::vector<std::size_t> next_batch();

  ModelCheckpoint ckpt_;
  std::vector<std::int32_t> tokens_;
  TrainConfig cfg_;
  OptimizerState opt_;
  TrainReport report_;
  std::size_t num_chunks_ = 0;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  Rng rng_;
  std::string epoch_rng_state_;  // RNG state before this epoch's shuffle
  std::vector<std::size_t> order_;
  std::uint64_t token_digest_ = 0;
};

// Documents encoded in order and concatenated, each followed by EOS.
std::vector<std::int32_t> tokenize_corpus(std::span<const Document> docs, const TokenizerModel& tokenizer,
                                          bool append_eos = true);

struct TrainResult {
  ModelCheckpoint ckpt;
  TrainReport report;
};

TrainResult train_clm(const ModelCheckpoint& ckpt, std::vector<std::int32_t> tokens, const TrainConfig& cfg);

}  // namespace langxpand
