// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mobiletl {

double geometric_inner(double psi, std::int64_t L) {
  if (L <= 0) return 0.0;
  const double d = psi - 1.0;
  if (std::abs(d) <= 1e-12) return static_cast<double>(L);
  // psi*(psi^L - 1)/(psi - 1) without cancellation near psi = 1.
  return psi * std::expm1(static_cast<double>(L) * std::log1p(d)) / d;
}

double bound_eval(const BoundParams& p) {
  if (!(p.lambda > 0.0)) throw ValueError("bound: learning rate must be positive");
  if (p.N < 1) throw ValueError("bound: N must be >= 1");
  if (!(p.M >= 0.0) || !(p.G >= 0.0) || p.T < 0 || p.L < 0) {
    throw ValueError("bound: M, G, T and L must be non-negative");
  }
  const double root_n = std::sqrt(static_cast<double>(p.N));
  const double psi = 1.5 * root_n * p.G;
  const double psi_t = root_n * p.G;
  return p.lambda * p.M * static_cast<double>(p.T) * p.G *
         (geometric_inner(psi, p.L) + geometric_inner(psi_t, p.L));
}

PropositionResult proposition_check(std::int64_t n1, std::int64_t n2, std::int64_t n3, double G,
                                    std::uint64_t seed, std::int64_t trials) {
  if (n1 < 1 || n2 < 1 || n3 < 1) throw ValueError("proposition: dims must be >= 1");
  if (trials < 1) throw ValueError("proposition: trials must be >= 1");
  if (!(G > 0.0)) throw ValueError("proposition: G must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto hswish_slope = [](double a) {
    const double r = std::clamp(a + 3.0, 0.0, 6.0) / 6.0;
    return r + ((a >= -3.0 && a <= 3.0) ? a / 6.0 : 0.0);
  };

  PropositionResult res;
  res.trials = trials;
  std::vector<double> a(static_cast<std::size_t>(n1 * n2));
  std::vector<double> w(static_cast<std::size_t>(n2 * n3));
  for (std::int64_t t = 0; t < trials; ++t) {
    const double spread = 1.0 + 5.0 * unit(rng);
    for (auto& v : a) v = spread * gauss(rng);
    double norm = 0.0;
    for (auto& v : w) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    // Every fourth trial sits on the boundary ||W||_F = G.
    const double radius = (t % 4 == 0) ? G : G * unit(rng);
    for (auto& v : w) v = norm > 0.0 ? v * radius / norm : 0.0;

    double sq_exact = 0.0, sq_signed = 0.0;
    for (std::int64_t i = 0; i < n1; ++i) {
      for (std::int64_t k = 0; k < n2; ++k) {
        const double av = a[static_cast<std::size_t>(i * n2 + k)];
        const double de = hswish_slope(av);
        const double ds = av >= 0.0 ? 1.0 : 0.0;
        for (std::int64_t j = 0; j < n3; ++j) {
          const double wv = w[static_cast<std::size_t>(k * n3 + j)];
          sq_exact += de * de * wv * wv;
          sq_signed += ds * ds * wv * wv;
        }
      }
    }
    const double root_n1 = std::sqrt(static_cast<double>(n1));
    res.max_ratio_exact = std::max(res.max_ratio_exact, std::sqrt(sq_exact) / (1.5 * root_n1 * G));
    res.max_ratio_signed = std::max(res.max_ratio_signed, std::sqrt(sq_signed) / (root_n1 * G));
  }
  res.max_ratio = std::max(res.max_ratio_exact, res.max_ratio_signed);
  res.pass = res.max_ratio <= 1.0;
  return res;
}

namespace {

std::vector<Parameter*> trainable(Model& m) {
  std::vector<Parameter*> v;
  for (auto* p : m.parameters()) {
    if (p->trainable) v.push_back(p);
  }
  return v;
}

double weight_distance(Model& a, Model& b) {
  auto pa = trainable(a);
  auto pb = trainable(b);
  double sq = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::int64_t k = 0; k < pa[i]->value.numel(); ++k) {
      const double d = pa[i]->value.get(k) - pb[i]->value.get(k);
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

// Largest output of any layer that sits in the trainable part of the model.
std::int64_t max_trainable_output(PartitionedModel& pm, const Tensor& x) {
  ForwardContext ctx{nullptr, false, false};
  std::int64_t n = 0;
  Var h = Var::make(x);
  auto body = pm.model.body();
  for (std::size_t i = 0; i < body.size(); ++i) {
    const Var in = h;
    for (auto* l : body[i]->layers()) {
      h = l->forward(h, ctx);
      if (i >= pm.first_trainable_block) n = std::max(n, h.value().numel());
    }
    if (has_residual(body[i]->spec())) h = residual_add(h, in, ctx, "probe.add");
  }
  for (auto* l : pm.model.head_layers()) {
    h = l->forward(h, ctx);
    n = std::max(n, h.value().numel());
  }
  return n;
}

std::int64_t approximated_layers(PartitionedModel& pm) {
  std::int64_t n = 0;
  auto body = pm.model.body();
  for (std::size_t i = pm.first_trainable_block; i < body.size(); ++i) {
    for (auto* l : body[i]->layers()) {
      auto* act = dynamic_cast<ActivationLayer*>(l);
      if (act && act->mode() == ActBackwardMode::ApproxSigned) ++n;
    }
  }
  return n;
}

}  // namespace

DivergenceReport twin_divergence(const ModelSpec& spec, const TrainPolicy& exact,
                                 const TrainPolicy& approx, const Dataset& ds,
                                 const TwinConfig& cfg) {
  if (exact.preset != approx.preset || exact.k_blocks != approx.k_blocks ||
      exact.quantize_frozen != approx.quantize_frozen || exact.train_head != approx.train_head) {
    throw ConfigError("twin policies may differ only in act_backward");
  }
  if (exact.act_backward != ActBackwardMode::Exact ||
      approx.act_backward != ActBackwardMode::ApproxSigned) {
    throw ConfigError("twin pair must be (exact, approx) activation backward");
  }
  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (ds.count == 0) throw ValueError("cannot train on an empty dataset");
  if (ds.num_classes != spec.num_classes) {
    throw ValueError("dataset classes do not match the model head");
  }

  Model base = build_model(spec, cfg.seed);
  if (cfg.init) cfg.init(base);
  PartitionedModel me = apply_policy(base.clone(), exact);
  PartitionedModel ma = apply_policy(base.clone(), approx);

  OptimizerCfg ocfg;
  ocfg.kind = OptimizerKind::SGD;
  ocfg.lr = cfg.lr;
  ocfg.schedule = LrSchedule::Constant;
  Optimizer oe(ocfg), oa(ocfg);

  const Split split = split_dataset(ds, cfg.seed);
  std::vector<std::int64_t> probe_idx;
  const auto& probe_pool = split.eval.empty() ? split.train : split.eval;
  for (std::size_t i = 0; i < probe_pool.size() &&
                          static_cast<std::int64_t>(i) < cfg.batch_size;
       ++i) {
    probe_idx.push_back(probe_pool[i]);
  }
  const Batch probe = make_batch(ds, probe_idx);

  DivergenceReport rep;
  std::mt19937_64 rng(cfg.seed ^ 0x7715u);
  std::vector<std::int64_t> order = split.train;
  std::size_t cursor = order.size();
  for (std::int64_t t = 0; t < cfg.steps; ++t) {
    std::vector<std::int64_t> idx;
    while (static_cast<std::int64_t>(idx.size()) < cfg.batch_size) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const Batch b = make_batch(ds, idx);
    const StepResult re = train_step(me.model, oe, b, cfg.lr);
    const StepResult ra = train_step(ma.model, oa, b, cfg.lr);
    if (!std::isfinite(re.loss) || !std::isfinite(ra.loss)) {
      throw ValueError("twin training diverged at step " + std::to_string(t));
    }
    rep.measured_G = std::max({rep.measured_G, re.grad_norm, ra.grad_norm});
    rep.per_step_distance.push_back(weight_distance(me.model, ma.model));
  }

  const double fe = probe_loss(me.model, probe);
  const double fa = probe_loss(ma.model, probe);
  rep.final_output_distance = std::abs(fa - fe);

  // Empirical Lipschitz constant of F around the exact run's final weights.
  const double wdist = rep.per_step_distance.empty() ? 0.0 : rep.per_step_distance.back();
  if (wdist > 0.0) rep.estimated_M = rep.final_output_distance / wdist;
  const double radius = wdist > 0.0 ? wdist : 1e-4;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::int64_t s = 0; s < cfg.lipschitz_samples; ++s) {
    Model pert = me.model.clone();
    auto params = trainable(pert);
    std::vector<std::vector<double>> dir;
    double norm = 0.0;
    for (auto* p : params) {
      std::vector<double> d(static_cast<std::size_t>(p->value.numel()));
      for (auto& v : d) {
        v = gauss(rng);
        norm += v * v;
      }
      dir.push_back(std::move(d));
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::int64_t k = 0; k < params[i]->value.numel(); ++k) {
        params[i]->value.set(
            k, params[i]->value.get(k) + radius * dir[i][static_cast<std::size_t>(k)] / norm);
      }
    }
    // The perturbation is applied in the parameter dtype; measure what landed.
    const double actual = weight_distance(pert, me.model);
    if (actual > 0.0) {
      rep.estimated_M =
          std::max(rep.estimated_M, std::abs(probe_loss(pert, probe) - fe) / actual);
    }
  }

  rep.N = max_trainable_output(ma, probe.x);
  rep.L = approximated_layers(ma);
  rep.bound = bound_eval({cfg.lr, rep.estimated_M, cfg.steps, rep.measured_G, rep.N, rep.L});
  const double root_n = std::sqrt(static_cast<double>(rep.N));
  const double per_step_coef =
      cfg.lr * rep.measured_G *
      (geometric_inner(1.5 * root_n * rep.measured_G, rep.L) +
       geometric_inner(root_n * rep.measured_G, rep.L));
  rep.pass = rep.final_output_distance <= rep.bound;
  for (std::size_t t = 0; t < rep.per_step_distance.size(); ++t) {
    const double b = per_step_coef * static_cast<double>(t + 1);
    rep.per_step_bound.push_back(b);
    if (rep.per_step_distance[t] > b) rep.pass = false;
  }
  return rep;
}

}  // namespace mobiletl
