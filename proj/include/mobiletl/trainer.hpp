// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mobiletl/policy.hpp"

namespace mobiletl {

// ------------------------------------------------------------- optimizer ---

enum class OptimizerKind { SGD, Adam };
enum class LrSchedule { Constant, Cosine };

struct OptimizerCfg {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.0;  // SGD
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::Cosine;
  std::int64_t total_steps = 0;
  double lr_min = 0.0;
};

/// Throws ConfigError on out-of-range hyperparameters.
void validate_optimizer_cfg(const OptimizerCfg& cfg);

/// lr_min + (lr - lr_min) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::int64_t step, const OptimizerCfg& cfg);
/// Learning rate for `step` under the configured schedule.
double scheduled_lr(std::int64_t step, const OptimizerCfg& cfg);

class Optimizer {
 public:
  explicit Optimizer(OptimizerCfg cfg);

  /// Updates every trainable parameter that has an entry in `grads`.
  void step(const std::vector<Parameter*>& params, const GradMap& grads, double lr);
  std::int64_t steps() const { return t_; }
  const OptimizerCfg& cfg() const { return cfg_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  OptimizerCfg cfg_;
  std::map<std::string, Slot> state_;
  std::int64_t t_ = 0;
};

// --------------------------------------------------------------- dataset ---

struct Dataset {
  std::int64_t count = 0;
  std::int64_t channels = 0, height = 0, width = 0;
  std::int64_t num_classes = 0;
  std::vector<std::uint16_t> labels;
  std::vector<float> pixels;  ///< count * C * H * W
  std::string source;

  std::int64_t sample_size() const { return channels * height * width; }
};

/// TLDS: "TLDS", u32 version=1, u32 count, C, H, W, num_classes, then per
/// sample a u16 label and C*H*W f32 pixels, all little endian.
Dataset load_tlds(const std::string& path);
void save_tlds(const Dataset& ds, const std::string& path);

/// Class-conditional Gaussian bumps plus pixel noise; deterministic by seed.
Dataset synthetic_blobs(std::int64_t n, std::int64_t classes, std::uint64_t seed,
                        std::int64_t channels = 3, std::int64_t height = 16,
                        std::int64_t width = 16);

struct Split {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> eval;
};

/// Deterministic 80/20 shuffle split.
Split split_dataset(const Dataset& ds, std::uint64_t seed);

struct Batch {
  Tensor x;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices,
                 DType dtype = DType::F32);

// --------------------------------------------------------------- training ---

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;  ///< Frobenius norm over all gradients of the step
  std::int64_t saved_bytes = 0;
  GradMap grads;
};

/// Forward, backward and one optimizer update on a single batch.
StepResult train_step(Model& model, Optimizer& opt, const Batch& batch, double lr);

/// Mean loss of a training-mode forward that leaves every state untouched.
double probe_loss(Model& model, const Batch& batch);

/// Classification accuracy in inference mode.
double evaluate(Model& model, const Dataset& ds, const std::vector<std::int64_t>& indices);

struct TrainConfig {
  OptimizerCfg opt;
  std::int64_t epochs = 1;
  std::int64_t steps = 0;  ///< overrides epochs when > 0
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<double> step_loss;
  double final_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::int64_t steps = 0;
  std::int64_t peak_tape_bytes = 0;
};

/// Trains `pm.model` in place. Throws ValueError on an empty dataset or a
/// non-finite loss.
TrainReport train(PartitionedModel& pm, const Dataset& ds, const TrainConfig& cfg);

}  // namespace mobiletl
