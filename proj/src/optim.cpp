// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "mobiletl/trainer.hpp"

namespace mobiletl {

void validate_optimizer_cfg(const OptimizerCfg& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0, 1)");
  }
  if (!(cfg.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (cfg.total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (!(cfg.lr_min >= 0.0 && cfg.lr_min <= cfg.lr)) throw ConfigError("lr_min must be in [0, lr]");
}

double cosine_lr(std::int64_t step, const OptimizerCfg& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw ValueError("step " + std::to_string(step) + " outside [0, " +
                     std::to_string(cfg.total_steps) + "]");
  }
  if (cfg.total_steps == 0) return cfg.lr;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr_min + (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

double scheduled_lr(std::int64_t step, const OptimizerCfg& cfg) {
  return cfg.schedule == LrSchedule::Cosine ? cosine_lr(step, cfg) : cfg.lr;
}

Optimizer::Optimizer(OptimizerCfg cfg) : cfg_(cfg) { validate_optimizer_cfg(cfg_); }

void Optimizer::step(const std::vector<Parameter*>& params, const GradMap& grads, double lr) {
  ++t_;
  for (auto* p : params) {
    if (!p->trainable) continue;
    auto it = grads.find(p->name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (g.shape() != p->value.shape()) {
      throw StateError("gradient for " + p->name + " has shape " + shape_str(g.shape()) +
                       ", parameter has " + shape_str(p->value.shape()));
    }
    if (!is_float(p->value.dtype())) throw StateError(p->name + " is not a float parameter");
    const auto n = static_cast<std::size_t>(p->value.numel());
    Slot& s = state_[p->name];
    if (cfg_.kind == OptimizerKind::SGD) {
      if (cfg_.momentum > 0.0 && s.m.empty()) s.m.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<std::int64_t>(i);
        double d = g.get(ii);
        if (cfg_.momentum > 0.0) {
          s.m[i] = cfg_.momentum * s.m[i] + d;
          d = s.m[i];
        }
        p->value.set(ii, p->value.get(ii) - lr * d);
      }
      continue;
    }
    if (s.m.empty()) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<std::int64_t>(i);
      const double gi = g.get(ii);
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      p->value.set(ii, p->value.get(ii) - lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
}

}  // namespace mobiletl
