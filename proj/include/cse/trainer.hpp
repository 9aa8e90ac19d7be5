#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include "cse/config.hpp"
#include "cse/model.hpp"
#include "cse/vocab.hpp"

namespace cse {

// 0 at step 0, linear to the peak across the warmup, cosine from the peak to
// 0 at the final step, 0 beyond it.
double lr_schedule(long long step, double peak_lr, long long warmup_steps,
                   long long total_steps);

// One bias-corrected Adam update from the current gradients; t is the 1-based
// update count.
void adam_step(ParamStore& store, double lr, double beta1, double beta2,
               double eps, long long t);

struct StepRecord {
  long long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> l_rps;  // absent while the selection head is off
  std::optional<double> l_sti;  // absent while the token head is off
  std::optional<double> l_rg;
  double grad_norm = 0.0;  // measured after clipping

  // One log line; keys for absent components are omitted entirely.
  nlohmann::json to_json() const;
};

// Checkpoint directory layout: config.json, weights.bin, ema.bin,
// optimizer.bin, step, vocab.txt. Every file is written to a temp name and
// renamed into place so a crash never leaves a half-written checkpoint.
void save_checkpoint(const std::filesystem::path& dir,
                     const ModelConfig& model_config,
                     const TrainConfig& train_config, const Vocabulary& vocab,
                     const ParamStore& store, long long step);

struct CheckpointMeta {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t vocab_fingerprint = 0;
  long long step = 0;
};

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

// Restores weights, EMA shadow and optimizer state. The vocabulary must
// fingerprint-match the one the checkpoint was written with.
void load_checkpoint(const std::filesystem::path& dir, ParamStore& store,
                     const Vocabulary& vocab);

class Trainer {
 public:
  // The config's ablation flags choose which losses run; λ weights combine
  // them. A non-finite loss or gradient raises RuntimeFailure naming the
  // component, leaving the last checkpoint on disk.
  Trainer(Model& model, const TrainConfig& config, const Vocabulary& vocab);

  // Runs steps start_step+1 .. total_steps. `weak` aligns with `examples`
  // and is required when the token identification loss is active. Writes one
  // JSON object per logged step to `log` (if non-null) and checkpoints into
  // `checkpoint_dir` (if non-empty). Returns the last completed step.
  long long train(const std::vector<EncodedExample>& examples,
                  const std::vector<WeakSupportLabels>* weak,
                  const std::filesystem::path& checkpoint_dir,
                  std::ostream* log, long long start_step = 0);

  const std::vector<StepRecord>& history() const { return history_; }

 private:
  std::vector<std::size_t> next_batch(std::size_t n);

  Model& model_;
  TrainConfig config_;
  const Vocabulary& vocab_;
  std::mt19937_64 shuffle_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<StepRecord> history_;
};

}  // namespace cse
