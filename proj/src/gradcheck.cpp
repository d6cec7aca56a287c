// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "mobiletl/layers.hpp"

namespace mobiletl {

namespace {

constexpr double kStep = 1e-5;
constexpr std::int64_t kMaxCoords = 48;

struct Probe {
  std::shared_ptr<void> keep;  // owns the layers
  std::function<Var(const Var&, ForwardContext&)> fwd;
  std::vector<Parameter*> params;
  Tensor x;
  bool training = false;
};

Tensor randn(const Shape& s, std::mt19937_64& rng, double mean = 0.0, double sd = 1.0) {
  return Tensor::rand_normal(s, rng(), mean, sd, DType::F64);
}

// Pushes values off the kinks of piecewise activations.
Tensor avoid_kinks(Tensor t, std::initializer_list<double> kinks, double margin = 2e-2) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = t.get(i);
    for (double k : kinks) {
      if (std::abs(v - k) < margin) v = k + (v >= k ? margin : -margin);
    }
    t.set(i, v);
  }
  return t;
}

double objective(Probe& p, const Tensor& x, const Tensor& r) {
  ForwardContext ctx{nullptr, p.training, false};
  const Var y = p.fwd(Var::make(x), ctx);
  double s = 0.0;
  for (std::int64_t i = 0; i < r.numel(); ++i) s += y.value().get(i) * r.get(i);
  return s;
}

std::vector<std::int64_t> coords(std::int64_t n, std::mt19937_64& rng) {
  std::vector<std::int64_t> c(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = i;
  if (n > kMaxCoords) {
    std::shuffle(c.begin(), c.end(), rng);
    c.resize(kMaxCoords);
  }
  return c;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom < 1e-12) return std::sqrt(diff);
  return std::sqrt(diff) / denom;
}

double check(Probe& p, std::mt19937_64& rng) {
  Tape tape;
  ForwardContext ctx{&tape, p.training, false};
  const Var xv = Var::make(p.x, true);
  const Var y = p.fwd(xv, ctx);
  const Tensor r = randn(y.value().shape(), rng);
  const GradMap grads = tape.backward(y, r);
  const auto gx = tape.grad_of(xv);
  if (!gx) throw StateError("gradcheck: input gradient missing");

  double worst = 0.0;
  {
    std::vector<double> a, n;
    for (auto i : coords(p.x.numel(), rng)) {
      Tensor xp = p.x, xm = p.x;
      xp.set(i, p.x.get(i) + kStep);
      xm.set(i, p.x.get(i) - kStep);
      a.push_back(gx->get(i));
      n.push_back((objective(p, xp, r) - objective(p, xm, r)) / (2.0 * kStep));
    }
    worst = std::max(worst, rel_error(a, n));
  }
  for (auto* prm : p.params) {
    if (!prm->trainable) continue;
    auto it = grads.find(prm->name);
    if (it == grads.end()) throw StateError("gradcheck: no gradient for " + prm->name);
    std::vector<double> a, n;
    for (auto i : coords(prm->value.numel(), rng)) {
      const double v = prm->value.get(i);
      prm->value.set(i, v + kStep);
      const double fp = objective(p, p.x, r);
      prm->value.set(i, v - kStep);
      const double fm = objective(p, p.x, r);
      prm->value.set(i, v);
      a.push_back(it->second.get(i));
      n.push_back((fp - fm) / (2.0 * kStep));
    }
    worst = std::max(worst, rel_error(a, n));
  }
  return worst;
}

template <class L>
Probe layer_probe(std::unique_ptr<L> layer, Tensor x, bool training) {
  Probe p;
  L* raw = layer.get();
  p.params = raw->parameters();
  p.keep = std::shared_ptr<void>(layer.release(), [](void* q) { delete static_cast<L*>(q); });
  p.fwd = [raw](const Var& v, ForwardContext& c) { return raw->forward(v, c); };
  p.x = std::move(x);
  p.training = training;
  return p;
}

Probe conv_probe(std::mt19937_64& rng, bool depthwise) {
  std::uniform_int_distribution<int> pick(0, 1);
  const int k = pick(rng) ? 3 : 1;
  const int stride = pick(rng) + 1;
  const std::int64_t cin = depthwise ? 3 : 2 + pick(rng);
  const std::int64_t cout = depthwise ? cin : 2 + pick(rng);
  auto l = std::make_unique<Conv2dLayer>("gc.conv", cin, cout, depthwise ? 3 : k, stride,
                                         depthwise ? static_cast<int>(cin) : 1, DType::F64);
  l->weight().value = randn(l->weight().value.shape(), rng);
  return layer_probe(std::move(l), randn({2, cin, 5, 5}, rng), true);
}

Probe bn_probe(std::mt19937_64& rng, BNMode mode) {
  const std::int64_t c = 3;
  auto l = std::make_unique<BatchNormLayer>("gc.bn", LayerRole::FinalNorm, c, DType::F64);
  l->set_mode(mode);
  l->gamma().value = randn({c}, rng, 1.0, 0.5);
  l->beta().value = randn({c}, rng);
  l->running_mean().value = randn({c}, rng);
  Tensor var = Tensor::rand_uniform({c}, rng(), 0.5, 2.0, DType::F64);
  l->running_var().value = var;
  return layer_probe(std::move(l), randn({4, c, 2, 2}, rng, 0.3, 1.5), mode == BNMode::Full);
}

Probe act_probe(std::mt19937_64& rng, ActivationKind kind) {
  auto l = std::make_unique<ActivationLayer>("gc.act", kind, ActBackwardMode::Exact);
  Tensor x = kind == ActivationKind::ReLU6
                 ? avoid_kinks(Tensor::rand_uniform({2, 3, 3, 3}, rng(), -2.0, 8.0, DType::F64),
                               {0.0, 6.0})
                 : avoid_kinks(Tensor::rand_uniform({2, 3, 3, 3}, rng(), -5.0, 5.0, DType::F64),
                               {-3.0, 3.0});
  return layer_probe(std::move(l), std::move(x), true);
}

Probe hsigmoid_probe(std::mt19937_64& rng) {
  auto l = std::make_unique<HardSigmoidLayer>("gc.hsig");
  Tensor x = avoid_kinks(Tensor::rand_uniform({2, 3, 2, 2}, rng(), -2.9, 2.9, DType::F64),
                         {-3.0, 3.0});
  return layer_probe(std::move(l), std::move(x), true);
}

Probe se_probe(std::mt19937_64& rng) {
  for (;;) {
    auto l = std::make_unique<SqueezeExciteLayer>("gc.se", 4, 2, DType::F64);
    l->fc1_weight().value = randn({2, 4}, rng);
    l->fc1_bias().value = randn({2}, rng, 0.0, 0.5);
    l->fc2_weight().value = randn({4, 2}, rng, 0.0, 0.7);
    l->fc2_bias().value = randn({4}, rng, 0.0, 0.5);
    Tensor x = randn({2, 4, 3, 3}, rng, 0.2, 1.0);
    // Reject instances whose internal pre-activations sit near a kink.
    const Tensor pooled = global_avg_pool_forward(x);
    const Tensor z1 = linear_forward(pooled, l->fc1_weight().value, &l->fc1_bias().value);
    const Tensor z2 =
        linear_forward(relu_forward(z1).y, l->fc2_weight().value, &l->fc2_bias().value);
    bool ok = true;
    for (std::int64_t i = 0; i < z1.numel(); ++i) ok = ok && std::abs(z1.get(i)) > 1e-3;
    for (std::int64_t i = 0; i < z2.numel(); ++i) {
      ok = ok && std::abs(std::abs(z2.get(i)) - 3.0) > 1e-3;
    }
    if (ok) return layer_probe(std::move(l), std::move(x), true);
  }
}

Probe linear_probe(std::mt19937_64& rng) {
  auto l = std::make_unique<LinearLayer>("gc.fc", 5, 4, true, DType::F64);
  l->weight().value = randn({4, 5}, rng);
  l->bias()->value = randn({4}, rng);
  return layer_probe(std::move(l), randn({3, 5}, rng), true);
}

Probe ce_probe(std::mt19937_64& rng) {
  Probe p;
  std::uniform_int_distribution<int> lab(0, 3);
  auto labels = std::make_shared<std::vector<int>>();
  for (int i = 0; i < 3; ++i) labels->push_back(lab(rng));
  p.keep = labels;
  p.fwd = [labels](const Var& v, ForwardContext& c) { return cross_entropy_loss(v, *labels, c); };
  p.x = randn({3, 4}, rng, 0.0, 2.0);
  p.training = true;
  return p;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, std::int64_t instances, double tolerance) {
  using Maker = std::function<Probe(std::mt19937_64&)>;
  const std::vector<std::pair<std::string, Maker>> makers{
      {"conv", [](auto& r) { return conv_probe(r, false); }},
      {"dwconv", [](auto& r) { return conv_probe(r, true); }},
      {"bn_full", [](auto& r) { return bn_probe(r, BNMode::Full); }},
      {"bn_shift_only", [](auto& r) { return bn_probe(r, BNMode::ShiftOnly); }},
      {"bn_frozen", [](auto& r) { return bn_probe(r, BNMode::Frozen); }},
      {"relu6", [](auto& r) { return act_probe(r, ActivationKind::ReLU6); }},
      {"hswish", [](auto& r) { return act_probe(r, ActivationKind::HardSwish); }},
      {"hsigmoid", [](auto& r) { return hsigmoid_probe(r); }},
      {"se", [](auto& r) { return se_probe(r); }},
      {"linear", [](auto& r) { return linear_probe(r); }},
      {"softmax_ce", [](auto& r) { return ce_probe(r); }},
  };
  GradcheckReport rep;
  rep.tolerance = tolerance;
  rep.pass = true;
  std::uint64_t case_seed = seed;
  for (const auto& [name, make] : makers) {
    GradcheckCase c;
    c.name = name;
    std::mt19937_64 rng(case_seed++ * 0x9E3779B97F4A7C15ull + 17);
    for (std::int64_t i = 0; i < instances; ++i) {
      Probe p = make(rng);
      c.max_rel_error = std::max(c.max_rel_error, check(p, rng));
      ++c.instances;
    }
    c.pass = c.max_rel_error <= tolerance;
    rep.pass = rep.pass && c.pass;
    rep.cases.push_back(std::move(c));
  }
  return rep;
}

}  // namespace mobiletl
