// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/layers.hpp"

namespace mobiletl {

bool Layer::any_trainable() {
  for (auto* p : parameters()) {
    if (p->trainable) return true;
  }
  return false;
}

bool Layer::should_record(const Var& x, const ForwardContext& ctx) {
  return ctx.tape != nullptr && (x.requires_grad || any_trainable());
}

namespace {

std::vector<std::optional<Tensor>> single(std::optional<Tensor> g) {
  std::vector<std::optional<Tensor>> v;
  v.push_back(std::move(g));
  return v;
}

}  // namespace

// ------------------------------------------------------------------ conv ---

Conv2dLayer::Conv2dLayer(std::string id, std::int64_t cin, std::int64_t cout, int kernel,
                         int stride, int groups, DType dtype)
    : Layer(std::move(id), LayerRole::Conv),
      geom_{stride, kernel / 2, groups},
      kernel_(kernel),
      groups_(groups) {
  if (groups < 1 || cin % groups != 0 || cout % groups != 0) {
    throw ShapeError("conv " + this->id() + ": channels not divisible by groups");
  }
  weight_.name = this->id() + ".weight";
  weight_.value = Tensor::zeros({cout, cin / groups, kernel, kernel}, dtype);
  weight_.trainable = true;
}

Var Conv2dLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) {
    ctx.tape->set_scope(id());
    ctx.tape->note_temp_bytes(
        conv_temp_bytes(x.value().shape(), weight_.value.shape(), geom_, x.value().dtype()));
  }
  Tensor y = conv2d_forward(x.value(), weight_.value, geom_);
  if (!should_record(x, ctx)) return produce(std::move(y), false);

  Tape& tape = *ctx.tape;
  tape.register_param(weight_);
  Var out = produce(std::move(y), true);
  Node node;
  node.op = kind();
  node.inputs = {x};
  node.output = out.id;
  std::optional<SavedRef> saved_x;
  if (weight_.trainable) {
    saved_x = tape.save(x, SavedKind::FullMap);
    node.saved.push_back(*saved_x);
  }
  const bool want_gx = x.requires_grad;
  const Shape x_shape = x.value().shape();
  Parameter* w = &weight_;
  const ConvGeometry geom = geom_;
  Tape* tp = &tape;
  node.backward = [=](const Tensor& gy, GradSink& sink) {
    const Tensor* xs = saved_x ? &tp->saved(*saved_x) : nullptr;
    auto g = conv2d_backward(gy, xs, w->value, geom, x_shape, want_gx, w->trainable);
    if (g.grad_w) sink.accumulate(*w, *g.grad_w);
    return single(std::move(g.grad_x));
  };
  tape.record(std::move(node));
  return out;
}

// ------------------------------------------------------------ batch norm ---

const char* bn_mode_name(BNMode m) {
  switch (m) {
    case BNMode::Full: return "full";
    case BNMode::ShiftOnly: return "shift_only";
    case BNMode::Frozen: return "frozen";
  }
  return "?";
}

BatchNormLayer::BatchNormLayer(std::string id, LayerRole role, std::int64_t channels,
                               DType dtype, double eps, double momentum)
    : Layer(std::move(id), role), eps_(eps), momentum_(momentum) {
  if (!(eps > 0.0)) throw ValueError("batch norm eps must be positive");
  gamma_ = {this->id() + ".gamma", Tensor::full({channels}, dtype, 1.0), true};
  beta_ = {this->id() + ".beta", Tensor::zeros({channels}, dtype), true};
  running_mean_ = {this->id() + ".running_mean", Tensor::zeros({channels}, dtype), false};
  running_var_ = {this->id() + ".running_var", Tensor::full({channels}, dtype, 1.0), false};
}

void BatchNormLayer::set_mode(BNMode mode) {
  mode_ = mode;
  gamma_.trainable = mode == BNMode::Full;
  beta_.trainable = mode != BNMode::Frozen;
}

Var BatchNormLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) ctx.tape->set_scope(id());
  const bool batch_stats = ctx.training && mode_ == BNMode::Full;

  if (batch_stats) {
    auto r = batch_norm_train(x.value(), gamma_.value, beta_.value, eps_);
    if (ctx.update_running_stats) {
      const double n = static_cast<double>(x.value().numel() / gamma_.value.numel());
      const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
      for (std::int64_t c = 0; c < gamma_.value.numel(); ++c) {
        const auto ci = static_cast<std::size_t>(c);
        running_mean_.value.set(
            c, (1.0 - momentum_) * running_mean_.value.get(c) + momentum_ * r.mean[ci]);
        running_var_.value.set(
            c, (1.0 - momentum_) * running_var_.value.get(c) + momentum_ * r.var[ci] * unbias);
      }
    }
    if (!should_record(x, ctx)) return produce(std::move(r.y), false);
    Tape& tape = *ctx.tape;
    tape.register_param(gamma_);
    tape.register_param(beta_);
    Var out = produce(std::move(r.y), true);
    Node node;
    node.op = "bn_train";
    node.inputs = {x};
    node.output = out.id;
    const SavedRef xhat = tape.save_new(std::move(r.xhat), SavedKind::FullMap);
    node.saved.push_back(xhat);
    // Per-channel batch statistics live with the node as layer state.
    std::vector<double> inv_std = std::move(r.inv_std);
    const bool want_gx = x.requires_grad;
    Parameter* gamma = &gamma_;
    Parameter* beta = &beta_;
    Tape* tp = &tape;
    node.backward = [=](const Tensor& gy, GradSink& sink) {
      auto g = batch_norm_backward_train(gy, tp->saved(xhat), gamma->value, inv_std, want_gx);
      sink.accumulate(*gamma, *g.grad_gamma);
      sink.accumulate(*beta, g.grad_beta);
      return single(std::move(g.grad_x));
    };
    tape.record(std::move(node));
    return out;
  }

  Tensor y = batch_norm_eval(x.value(), gamma_.value, beta_.value, running_mean_.value,
                             running_var_.value, eps_);
  if (!should_record(x, ctx)) return produce(std::move(y), false);
  Tape& tape = *ctx.tape;
  tape.register_param(gamma_);
  tape.register_param(beta_);
  Var out = produce(std::move(y), true);
  Node node;
  node.op = "bn_eval";
  node.inputs = {x};
  node.output = out.id;
  const bool want_gx = x.requires_grad;
  Parameter* gamma = &gamma_;
  Parameter* beta = &beta_;
  Parameter* var = &running_var_;
  const double eps = eps_;
  const std::string lid = id();
  node.backward = [=](const Tensor& gy, GradSink& sink) {
    if (gamma->trainable) {
      throw StateError(lid + ": scale gradient needs the normalized input, which was not saved");
    }
    auto g = batch_norm_backward_frozen_stats(gy, gamma->value, var->value, eps, want_gx);
    sink.accumulate(*beta, g.grad_beta);
    return single(std::move(g.grad_x));
  };
  tape.record(std::move(node));
  return out;
}

// ----------------------------------------------------------- activations ---

Var ActivationLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) ctx.tape->set_scope(id());
  const bool relu6 = act_ == ActivationKind::ReLU6;
  ActForward f = relu6 ? relu6_forward(x.value(), mode_) : hardswish_forward(x.value(), mode_);
  if (!should_record(x, ctx)) return produce(std::move(f.y), false);

  Tape& tape = *ctx.tape;
  Var out = produce(std::move(f.y), true);
  Node node;
  node.op = kind();
  node.inputs = {x};
  node.output = out.id;
  const SavedKind kind = f.kind;
  const SavedRef ref =
      kind == SavedKind::FullMap ? tape.save(x, kind) : tape.save_new(std::move(f.saved), kind);
  node.saved.push_back(ref);
  const ActBackwardMode mode = mode_;
  Tape* tp = &tape;
  node.backward = [=](const Tensor& gy, GradSink&) {
    const Tensor& s = tp->saved(ref);
    return single(relu6 ? relu6_backward(gy, s, kind, mode)
                        : hardswish_backward(gy, s, kind, mode));
  };
  tape.record(std::move(node));
  return out;
}

Var HardSigmoidLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) ctx.tape->set_scope(id());
  ActForward f = hardsigmoid_forward(x.value());
  if (!should_record(x, ctx)) return produce(std::move(f.y), false);
  Tape& tape = *ctx.tape;
  Var out = produce(std::move(f.y), true);
  Node node;
  node.op = kind();
  node.inputs = {x};
  node.output = out.id;
  const SavedRef ref = tape.save_new(std::move(f.saved), SavedKind::Mask2);
  node.saved.push_back(ref);
  Tape* tp = &tape;
  node.backward = [=](const Tensor& gy, GradSink&) {
    return single(hardsigmoid_backward(gy, tp->saved(ref)));
  };
  tape.record(std::move(node));
  return out;
}

// ---------------------------------------------------------------- linear ---

LinearLayer::LinearLayer(std::string id, std::int64_t in, std::int64_t out, bool bias,
                         DType dtype)
    : Layer(std::move(id), LayerRole::Linear), has_bias_(bias) {
  weight_ = {this->id() + ".weight", Tensor::zeros({out, in}, dtype), true};
  if (bias) bias_ = {this->id() + ".bias", Tensor::zeros({out}, dtype), true};
}

std::vector<Parameter*> LinearLayer::parameters() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

Var LinearLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) ctx.tape->set_scope(id());
  Tensor y = linear_forward(x.value(), weight_.value, has_bias_ ? &bias_.value : nullptr);
  if (!should_record(x, ctx)) return produce(std::move(y), false);
  Tape& tape = *ctx.tape;
  tape.register_param(weight_);
  if (has_bias_) tape.register_param(bias_);
  Var out = produce(std::move(y), true);
  Node node;
  node.op = kind();
  node.inputs = {x};
  node.output = out.id;
  std::optional<SavedRef> saved_x;
  if (weight_.trainable) {
    saved_x = tape.save(x, SavedKind::SmallVector);
    node.saved.push_back(*saved_x);
  }
  const bool want_gx = x.requires_grad;
  Parameter* w = &weight_;
  Parameter* b = has_bias_ ? &bias_ : nullptr;
  Tape* tp = &tape;
  node.backward = [=](const Tensor& gy, GradSink& sink) {
    const Tensor* xs = saved_x ? &tp->saved(*saved_x) : nullptr;
    auto g = linear_backward(gy, xs, w->value, want_gx, w->trainable, b && b->trainable);
    if (g.grad_w) sink.accumulate(*w, *g.grad_w);
    if (g.grad_b) sink.accumulate(*b, *g.grad_b);
    return single(std::move(g.grad_x));
  };
  tape.record(std::move(node));
  return out;
}

// ------------------------------------------------------------------ pool ---

Var GlobalAvgPoolLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) ctx.tape->set_scope(id());
  Tensor y = global_avg_pool_forward(x.value());
  if (!should_record(x, ctx)) return produce(std::move(y), false);
  Var out = produce(std::move(y), true);
  Node node;
  node.op = kind();
  node.inputs = {x};
  node.output = out.id;
  const Shape x_shape = x.value().shape();
  node.backward = [=](const Tensor& gy, GradSink&) {
    return single(global_avg_pool_backward(gy, x_shape));
  };
  ctx.tape->record(std::move(node));
  return out;
}

// ------------------------------------------------------------------- SE ---

SqueezeExciteLayer::SqueezeExciteLayer(std::string id, std::int64_t channels, int reduce_ratio,
                                       DType dtype)
    : Layer(std::move(id), LayerRole::SqueezeExcite), channels_(channels) {
  if (reduce_ratio < 1 || channels % reduce_ratio != 0) {
    throw ShapeError("SE " + this->id() + ": channels " + std::to_string(channels) +
                     " not divisible by reduce ratio " + std::to_string(reduce_ratio));
  }
  reduced_ = channels / reduce_ratio;
  w1_ = {this->id() + ".fc1.weight", Tensor::zeros({reduced_, channels}, dtype), true};
  b1_ = {this->id() + ".fc1.bias", Tensor::zeros({reduced_}, dtype), true};
  w2_ = {this->id() + ".fc2.weight", Tensor::zeros({channels, reduced_}, dtype), true};
  b2_ = {this->id() + ".fc2.bias", Tensor::zeros({channels}, dtype), true};
}

namespace {

// Sum over H,W of gy * x, per (b, c).
Tensor gate_gradient(const Tensor& gy, const Tensor& x) {
  const std::int64_t BC = x.dim(0) * x.dim(1);
  const std::int64_t HW = x.dim(2) * x.dim(3);
  Tensor g({x.dim(0), x.dim(1)}, x.dtype());
  for (std::int64_t i = 0; i < BC; ++i) {
    double s = 0.0;
    for (std::int64_t k = 0; k < HW; ++k) s += gy.get(i * HW + k) * x.get(i * HW + k);
    g.set(i, s);
  }
  return g;
}

Tensor hardsigmoid_slope(const Tensor& gy, const Tensor& z) {
  Tensor g(z.shape(), z.dtype());
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    const double v = z.get(i);
    g.set(i, (v >= -3.0 && v <= 3.0) ? gy.get(i) / 6.0 : 0.0);
  }
  return g;
}

}  // namespace

Var SqueezeExciteLayer::forward(const Var& x, ForwardContext& ctx) {
  if (ctx.tape) ctx.tape->set_scope(id());
  if (x.value().rank() != 4 || x.value().dim(1) != channels_) {
    throw ShapeError("SE " + id() + ": expected " + std::to_string(channels_) +
                     " channels, got input " + shape_str(x.value().shape()));
  }
  Tensor pooled = global_avg_pool_forward(x.value());
  Tensor z1 = linear_forward(pooled, w1_.value, &b1_.value);
  ActForward r = relu_forward(z1);
  Tensor z2 = linear_forward(r.y, w2_.value, &b2_.value);
  ActForward gate = hardsigmoid_forward(z2);
  Tensor y = channel_scale(x.value(), gate.y);
  if (!should_record(x, ctx)) return produce(std::move(y), false);

  Tape& tape = *ctx.tape;
  for (auto* p : parameters()) tape.register_param(*p);
  Var out = produce(std::move(y), true);
  Node node;
  node.op = kind();
  node.inputs = {x};
  node.output = out.id;
  const SavedRef sx = tape.save(x, SavedKind::FullMap);
  const SavedRef sp = tape.save_new(std::move(pooled), SavedKind::SmallVector);
  const SavedRef sz1 = tape.save_new(std::move(z1), SavedKind::SmallVector);
  const SavedRef smask = tape.save_new(std::move(r.saved), SavedKind::SmallVector);
  const SavedRef sz2 = tape.save_new(std::move(z2), SavedKind::SmallVector);
  node.saved = {sx, sp, sz1, smask, sz2};
  const bool want_gx = x.requires_grad;
  Parameter* w1 = &w1_;
  Parameter* b1 = &b1_;
  Parameter* w2 = &w2_;
  Parameter* b2 = &b2_;
  Tape* tp = &tape;
  node.backward = [=](const Tensor& gy, GradSink& sink) {
    const Tensor& xv = tp->saved(sx);
    const Tensor& z2v = tp->saved(sz2);
    const Tensor& mask = tp->saved(smask);
    const bool need_gate = want_gx || w1->trainable || b1->trainable || w2->trainable ||
                           b2->trainable;
    std::optional<Tensor> gx;
    if (want_gx) gx = channel_scale(gy, hardsigmoid_forward(z2v).y);
    if (!need_gate) return single(std::move(gx));

    const Tensor gz2 = hardsigmoid_slope(gate_gradient(gy, xv), z2v);
    const Tensor relu_out = [&] {
      Tensor t = tp->saved(sz1);
      for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, t.get(i) * mask.get(i));
      return t;
    }();
    const bool deeper = want_gx || w1->trainable || b1->trainable;
    auto g2 = linear_backward(gz2, &relu_out, w2->value, deeper, w2->trainable, b2->trainable);
    if (g2.grad_w) sink.accumulate(*w2, *g2.grad_w);
    if (g2.grad_b) sink.accumulate(*b2, *g2.grad_b);
    if (!deeper) return single(std::move(gx));

    const Tensor gz1 = relu_backward(*g2.grad_x, mask);
    auto g1 = linear_backward(gz1, &tp->saved(sp), w1->value, want_gx, w1->trainable,
                              b1->trainable);
    if (g1.grad_w) sink.accumulate(*w1, *g1.grad_w);
    if (g1.grad_b) sink.accumulate(*b1, *g1.grad_b);
    if (want_gx) add_into(*gx, global_avg_pool_backward(*g1.grad_x, xv.shape()));
    return single(std::move(gx));
  };
  tape.record(std::move(node));
  return out;
}

// ------------------------------------------------------- free functions ---

Var residual_add(const Var& a, const Var& b, ForwardContext& ctx, const std::string& layer_id) {
  if (ctx.tape) ctx.tape->set_scope(layer_id);
  Tensor y = residual_add(a.value(), b.value());
  const bool record = ctx.tape && (a.requires_grad || b.requires_grad);
  Var out = Var::make(std::move(y), record);
  if (!record) return out;
  Node node;
  node.op = "add";
  node.inputs = {a, b};
  node.output = out.id;
  node.backward = [](const Tensor& gy, GradSink&) {
    std::vector<std::optional<Tensor>> v;
    v.emplace_back(gy);
    v.emplace_back(gy);
    return v;
  };
  ctx.tape->record(std::move(node));
  return out;
}

Var cross_entropy_loss(const Var& logits, const std::vector<int>& labels, ForwardContext& ctx,
                       const std::string& layer_id) {
  if (ctx.tape) ctx.tape->set_scope(layer_id);
  auto ce = softmax_cross_entropy(logits.value(), labels);
  const bool record = ctx.tape && logits.requires_grad;
  Var out = Var::make(std::move(ce.loss), record);
  if (!record) return out;
  Tape& tape = *ctx.tape;
  Node node;
  node.op = "softmax_ce";
  node.inputs = {logits};
  node.output = out.id;
  const SavedRef probs = tape.save_new(std::move(ce.probs), SavedKind::SmallVector);
  node.saved.push_back(probs);
  Tape* tp = &tape;
  node.backward = [=](const Tensor& gy, GradSink&) {
    return single(softmax_cross_entropy_backward(tp->saved(probs), labels, gy.get(0)));
  };
  tape.record(std::move(node));
  return out;
}

}  // namespace mobiletl
