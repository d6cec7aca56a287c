// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "mobiletl/trainer.hpp"

namespace mobiletl {

namespace {

std::size_t argmax_row(const Tensor& logits, std::int64_t row) {
  const std::int64_t k = logits.dim(1);
  std::size_t best = 0;
  double bv = logits.get(row * k);
  for (std::int64_t j = 1; j < k; ++j) {
    if (logits.get(row * k + j) > bv) {
      bv = logits.get(row * k + j);
      best = static_cast<std::size_t>(j);
    }
  }
  return best;
}

}  // namespace

StepResult train_step(Model& model, Optimizer& opt, const Batch& batch, double lr) {
  Tape tape;
  ForwardContext ctx{&tape, true, true};
  const Var x = Var::make(batch.x, model.spec().input_requires_grad);
  const Var logits = model.forward(x, ctx);
  const Var loss = cross_entropy_loss(logits, batch.labels, ctx);
  StepResult r;
  r.loss = loss.value().get(0);
  r.saved_bytes = tape.saved_bytes();
  if (!std::isfinite(r.loss)) return r;
  if (loss.requires_grad) r.grads = tape.backward(loss);
  double sq = 0.0;
  for (const auto& [name, g] : r.grads) {
    const double n = frobenius_norm(g);
    sq += n * n;
  }
  r.grad_norm = std::sqrt(sq);
  opt.step(model.parameters(), r.grads, lr);
  return r;
}

double probe_loss(Model& model, const Batch& batch) {
  ForwardContext ctx{nullptr, true, false};
  const Var logits = model.forward(Var::make(batch.x), ctx);
  return cross_entropy_loss(logits, batch.labels, ctx).value().get(0);
}

double evaluate(Model& model, const Dataset& ds, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) return 0.0;
  std::int64_t correct = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < indices.size(); s += kChunk) {
    std::vector<std::int64_t> part(indices.begin() + static_cast<std::ptrdiff_t>(s),
                                   indices.begin() + static_cast<std::ptrdiff_t>(
                                                         std::min(indices.size(), s + kChunk)));
    const Batch b = make_batch(ds, part, model.dtype());
    ForwardContext ctx{nullptr, false, false};
    const Var logits = model.forward(Var::make(b.x), ctx);
    for (std::size_t i = 0; i < part.size(); ++i) {
      correct += argmax_row(logits.value(), static_cast<std::int64_t>(i)) ==
                 static_cast<std::size_t>(b.labels[i]);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

TrainReport train(PartitionedModel& pm, const Dataset& ds, const TrainConfig& cfg) {
  Model& model = pm.model;
  const auto& spec = model.spec();
  if (ds.count == 0) throw ValueError("cannot train on an empty dataset");
  if (spec.num_classes != ds.num_classes) {
    throw ValueError("dataset has " + std::to_string(ds.num_classes) +
                     " classes but the model head has " + std::to_string(spec.num_classes));
  }
  if (spec.input_shape[1] != ds.channels || spec.input_shape[2] != ds.height ||
      spec.input_shape[3] != ds.width) {
    throw ValueError("dataset samples do not match the model input shape");
  }
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");

  const Split split = split_dataset(ds, cfg.seed);
  if (split.train.empty()) throw ValueError("training split is empty");
  const auto n_train = static_cast<std::int64_t>(split.train.size());
  const std::int64_t per_epoch = std::max<std::int64_t>(1, n_train / cfg.batch_size);
  const std::int64_t total = cfg.steps > 0 ? cfg.steps : cfg.epochs * per_epoch;
  if (total < 1) throw ConfigError("nothing to train: steps and epochs are both zero");

  OptimizerCfg ocfg = cfg.opt;
  ocfg.total_steps = total;
  Optimizer opt(ocfg);

  TrainReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0xE70Cu);
  std::vector<std::int64_t> order = split.train;
  std::int64_t cursor = n_train;
  double epoch_loss = 0.0;
  std::int64_t epoch_steps = 0, epoch_correct = 0, epoch_seen = 0;

  auto close_epoch = [&] {
    EpochStats e;
    e.epoch = static_cast<std::int64_t>(rep.epochs.size());
    e.mean_loss = epoch_loss / static_cast<double>(epoch_steps);
    e.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(epoch_seen);
    e.eval_accuracy = evaluate(model, ds, split.eval.empty() ? split.train : split.eval);
    rep.epochs.push_back(e);
    epoch_loss = 0.0;
    epoch_steps = epoch_correct = epoch_seen = 0;
  };

  for (std::int64_t step = 0; step < total; ++step) {
    std::vector<std::int64_t> idx;
    while (static_cast<std::int64_t>(idx.size()) < cfg.batch_size) {
      if (cursor >= n_train) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[static_cast<std::size_t>(cursor++)]);
    }
    const Batch batch = make_batch(ds, idx, model.dtype());
    const double lr = scheduled_lr(step, ocfg);

    // Train-batch accuracy comes from the same forward the step uses.
    {
      ForwardContext ctx{nullptr, true, false};
      const Var logits = model.forward(Var::make(batch.x), ctx);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        epoch_correct += argmax_row(logits.value(), static_cast<std::int64_t>(i)) ==
                         static_cast<std::size_t>(batch.labels[i]);
      }
      epoch_seen += static_cast<std::int64_t>(idx.size());
    }
    const StepResult r = train_step(model, opt, batch, lr);
    if (!std::isfinite(r.loss)) {
      throw ValueError("training diverged: loss is " + std::to_string(r.loss) + " at step " +
                       std::to_string(step) + " (lr " + std::to_string(lr) + ")");
    }
    rep.step_loss.push_back(r.loss);
    rep.peak_tape_bytes = std::max(rep.peak_tape_bytes, r.saved_bytes);
    epoch_loss += r.loss;
    ++epoch_steps;
    if ((step + 1) % per_epoch == 0 || step + 1 == total) close_epoch();
  }
  rep.steps = total;
  rep.final_accuracy = rep.epochs.back().eval_accuracy;
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace mobiletl
