// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

// Closed-form cost model. It walks shapes and trainability flags only and
// never touches the engine's layer classes, so the tape audit below is a
// genuine cross-check rather than a tautology.

#include "mobiletl/profiler.hpp"

#include <algorithm>
#include <set>

namespace mobiletl {

namespace {

// FLOPs per element (or per MAC for the dense ops).
constexpr std::int64_t kMac = 2;
constexpr std::int64_t kBnTrainFwd = 4;
constexpr std::int64_t kBnTrainBwdParams = 3;
constexpr std::int64_t kBnTrainBwdInput = 4;
constexpr std::int64_t kBnEvalFwd = 2;
constexpr std::int64_t kRelu6Fwd = 1;
constexpr std::int64_t kRelu6Bwd = 1;
constexpr std::int64_t kHswishFwd = 3;
constexpr std::int64_t kHswishBwdExact = 4;
constexpr std::int64_t kHswishBwdApprox = 1;
constexpr std::int64_t kHsigmoidFwd = 2;
constexpr std::int64_t kHsigmoidBwd = 2;
constexpr std::int64_t kSoftmaxCeFwd = 4;

enum class Save { FullMap, Mask1, Mask2, SmallVector };

std::int64_t save_bytes(Save s, std::int64_t elems, int float_bytes) {
  switch (s) {
    case Save::Mask1: return (elems + 7) / 8;
    case Save::Mask2: return (2 * elems + 7) / 8;
    default: return elems * float_bytes;
  }
}

struct Walker {
  ProfileReport& rep;
  int fb;  // bytes per float element
  std::int64_t B, C, H, W;
  bool rg;

  std::int64_t numel() const { return B * C * H * W; }

  LayerProfile& row(const std::string& id, const char* kind) {
    rep.rows.push_back(LayerProfile{id, kind, 0, 0, 0, 0, 0});
    return rep.rows.back();
  }

  void conv(const std::string& id, std::int64_t cout, int k, int stride, int groups,
            bool trainable, bool quantized) {
    const int pad = k / 2;
    const std::int64_t ho = (H + 2 * pad - k) / stride + 1;
    const std::int64_t wo = (W + 2 * pad - k) / stride + 1;
    auto& r = row(id, groups == 1 ? "conv" : "dwconv");
    const std::int64_t wnum = cout * (C / groups) * k * k;
    r.param_bytes = quantized ? wnum + 4 : wnum * fb;
    r.fwd_flops = kMac * k * k * (C / groups) * cout * ho * wo * B;
    const bool recorded = rg || trainable;
    if (recorded) {
      r.bwd_flops = r.fwd_flops * ((rg ? 1 : 0) + (trainable ? 1 : 0));
      if (trainable) r.saved_act_bytes = save_bytes(Save::FullMap, numel(), fb);
    }
    if (groups == 1 && !(k == 1 && stride == 1)) r.temp_bytes = C * k * k * ho * wo * fb;
    C = cout;
    H = ho;
    W = wo;
    rg = recorded;
  }

  void bn(const std::string& id, BNMode mode) {
    auto& r = row(id, "bn");
    const std::int64_t e = numel();
    r.param_bytes = 2 * C * fb;
    if (mode == BNMode::Full) {
      r.fwd_flops = kBnTrainFwd * e;
      r.bwd_flops = kBnTrainBwdParams * e + (rg ? kBnTrainBwdInput * e : 0);
      r.saved_act_bytes = save_bytes(Save::FullMap, e, fb);
      rg = true;
    } else if (mode == BNMode::ShiftOnly) {
      r.fwd_flops = kBnEvalFwd * e;
      r.bwd_flops = e + (rg ? e : 0);
      rg = true;
    } else {
      r.fwd_flops = kBnEvalFwd * e;
      r.bwd_flops = rg ? e : 0;
    }
  }

  void act(const std::string& id, Activation a, ActBackwardMode mode) {
    const bool relu6 = a == Activation::ReLU6;
    auto& r = row(id, relu6 ? "relu6" : "hswish");
    const std::int64_t e = numel();
    const bool exact = mode == ActBackwardMode::Exact;
    r.fwd_flops = (relu6 ? kRelu6Fwd : kHswishFwd) * e;
    if (!rg) return;
    if (relu6) {
      r.bwd_flops = kRelu6Bwd * e;
      r.saved_act_bytes = save_bytes(exact ? Save::Mask2 : Save::Mask1, e, fb);
    } else {
      r.bwd_flops = (exact ? kHswishBwdExact : kHswishBwdApprox) * e;
      r.saved_act_bytes = save_bytes(exact ? Save::FullMap : Save::Mask1, e, fb);
    }
  }

  void se(const std::string& id, int ratio, bool w_trainable, bool b_trainable,
          bool quantized) {
    auto& r = row(id, "se");
    const std::int64_t red = C / ratio;
    const std::int64_t map = numel();
    const std::int64_t wnum = 2 * C * red;
    r.param_bytes = (quantized ? wnum + 8 : wnum * fb) + (red + C) * fb;
    const std::int64_t fc1 = kMac * C * red * B;
    const std::int64_t fc2 = kMac * red * C * B;
    r.fwd_flops = map + fc1 + red * B + red * B + fc2 + C * B + kHsigmoidFwd * C * B + map;
    const bool trainable = w_trainable || b_trainable;
    if (!(rg || trainable)) return;
    // x, then pooled, fc1 output, relu mask and gate logits.
    r.saved_act_bytes = save_bytes(Save::FullMap, map, fb) +
                        save_bytes(Save::SmallVector, 2 * C * B + 2 * red * B, fb);
    std::int64_t bwd = rg ? map : 0;                      // grad through the scale
    bwd += 2 * map + kHsigmoidBwd * C * B;                // gate gradient
    const bool deeper = rg || trainable;
    if (deeper) bwd += fc2 + red * B;                     // into fc1 output, relu
    if (w_trainable) bwd += fc2 + fc1;
    if (b_trainable) bwd += C * B + red * B;
    if (rg) bwd += fc1 + 2 * map;                         // back through the pool
    r.bwd_flops = bwd;
    rg = true;
  }

  void add(const std::string& id, bool skip_rg) {
    auto& r = row(id, "add");
    r.fwd_flops = numel();
    rg = rg || skip_rg;
  }

  void gap(const std::string& id) {
    auto& r = row(id, "gap");
    r.fwd_flops = numel();
    if (rg) r.bwd_flops = numel();
    H = W = 1;
  }

  void linear(const std::string& id, std::int64_t out) {
    auto& r = row(id, "linear");
    const std::int64_t in = C;
    r.param_bytes = (in * out + out) * fb;
    r.fwd_flops = kMac * in * out * B + out * B;
    r.bwd_flops = (rg ? kMac * in * out * B : 0) + kMac * in * out * B + out * B;
    r.saved_act_bytes = save_bytes(Save::SmallVector, in * B, fb);
    C = out;
    rg = true;
  }

  void head_act(const std::string& id, Activation a) {
    act(id, a, ActBackwardMode::Exact);
  }

  void loss(std::int64_t k) {
    auto& r = row("loss", "softmax_ce");
    r.fwd_flops = kSoftmaxCeFwd * B * k;
    r.bwd_flops = B * k;
    r.saved_act_bytes = save_bytes(Save::SmallVector, B * k, fb);
  }
};

void walk_block(Walker& w, const BlockSpec& b, const std::string& p,
                const BlockTrainConfig& cfg, ActBackwardMode act_mode) {
  const bool in_rg = w.rg;
  const bool residual = has_residual(b);
  switch (b.kind) {
    case BlockKind::ConvBlock:
      w.conv(p + ".conv", b.out_ch, b.kernel, b.stride, 1, cfg.conv_trainable, cfg.quantize);
      w.bn(p + ".bn", cfg.final_bn);
      if (b.activation != Activation::None) w.act(p + ".act", b.activation, act_mode);
      break;
    case BlockKind::IRBv2:
    case BlockKind::IRBv3: {
      const auto hid = hidden_channels(b);
      if (b.expand) {
        w.conv(p + ".expand", hid, 1, 1, 1, cfg.conv_trainable, cfg.quantize);
        w.bn(p + ".bn1", cfg.intermediary_bn);
        w.act(p + ".act1", b.activation, act_mode);
      }
      w.conv(p + ".dw", hid, b.kernel, b.stride, static_cast<int>(hid), cfg.conv_trainable,
             cfg.quantize);
      w.bn(p + ".bn2", cfg.intermediary_bn);
      w.act(p + ".act2", b.activation, act_mode);
      if (b.use_se) {
        w.se(p + ".se", b.se_ratio, cfg.se_weights_trainable, cfg.se_bias_trainable,
             cfg.quantize);
      }
      w.conv(p + ".project", b.out_ch, 1, 1, 1, cfg.conv_trainable, cfg.quantize);
      w.bn(p + ".bn3", cfg.final_bn);
      break;
    }
    case BlockKind::Head:
      break;
  }
  if (residual) w.add(p + ".add", in_rg);
}

}  // namespace

const std::map<std::string, double>& flop_coefficients() {
  static const std::map<std::string, double> c{
      {"mac", kMac},
      {"bn_train_fwd_per_elem", kBnTrainFwd},
      {"bn_train_bwd_params_per_elem", kBnTrainBwdParams},
      {"bn_train_bwd_input_per_elem", kBnTrainBwdInput},
      {"bn_eval_fwd_per_elem", kBnEvalFwd},
      {"bn_eval_bwd_per_elem", 1},
      {"relu6_fwd_per_elem", kRelu6Fwd},
      {"relu6_bwd_per_elem", kRelu6Bwd},
      {"hswish_fwd_per_elem", kHswishFwd},
      {"hswish_bwd_exact_per_elem", kHswishBwdExact},
      {"hswish_bwd_approx_per_elem", kHswishBwdApprox},
      {"hsigmoid_fwd_per_elem", kHsigmoidFwd},
      {"hsigmoid_bwd_per_elem", kHsigmoidBwd},
      {"add_fwd_per_elem", 1},
      {"gap_per_elem", 1},
      {"softmax_ce_fwd_per_logit", kSoftmaxCeFwd},
      {"softmax_ce_bwd_per_logit", 1},
  };
  return c;
}

ProfileReport profile_model(const ModelSpec& spec_in, const TrainPolicy& policy,
                            const Shape& input_shape, DType dtype) {
  ModelSpec spec = spec_in;
  if (!input_shape.empty()) spec.input_shape = input_shape;
  validate_model_spec(spec);
  validate_policy(policy, spec);
  if (!is_float(dtype)) throw ValueError("profile dtype must be f32 or f64");

  ProfileReport rep;
  rep.policy = policy;
  rep.input_shape = spec.input_shape;
  const auto& s = spec.input_shape;
  Walker w{rep, dtype == DType::F64 ? 8 : 4, s[0], s[1], s[2], s[3], spec.input_requires_grad};

  const std::size_t n = body_block_count(spec);
  std::size_t idx = 0;
  bool has_head = false;
  for (const auto& b : spec.blocks) {
    if (b.kind == BlockKind::Head) {
      has_head = true;
      w.gap("head.pool");
      w.linear("head.fc", b.out_ch);
      if (b.activation != Activation::None) w.head_act("head.act", b.activation);
      continue;
    }
    const auto cfg = resolve_block_config(policy, idx, n);
    walk_block(w, b, "b" + std::to_string(idx), cfg, cfg.act);
    ++idx;
  }
  if (spec.num_classes > 0) {
    if (!has_head) w.gap("cls.pool");
    w.linear("cls.fc", spec.num_classes);
    w.loss(spec.num_classes);
  }

  rep.totals.layer_id = "total";
  rep.totals.kind = "";
  for (const auto& r : rep.rows) {
    rep.totals.fwd_flops += r.fwd_flops;
    rep.totals.bwd_flops += r.bwd_flops;
    rep.totals.param_bytes += r.param_bytes;
    rep.totals.saved_act_bytes += r.saved_act_bytes;
    rep.totals.temp_bytes = std::max(rep.totals.temp_bytes, r.temp_bytes);
  }
  rep.trainable_params = policy_trainable_param_count(spec, policy);
  rep.total_params = param_count(spec);
  return rep;
}

Reduction profile_reduction(const ModelSpec& spec, const Shape& input_shape) {
  if (body_block_count(spec) != 1 ||
      (spec.blocks.front().kind != BlockKind::IRBv2 &&
       spec.blocks.front().kind != BlockKind::IRBv3)) {
    throw SpecError("reduction analysis needs a spec holding exactly one IRB");
  }
  Reduction r;
  r.ft_all_bytes =
      profile_model(spec, make_policy(Preset::FT_All), input_shape).totals.saved_act_bytes;
  r.mobiletl_bytes = profile_model(spec, make_policy(Preset::MobileTL_KBLKs, 1), input_shape)
                         .totals.saved_act_bytes;
  r.percent = r.ft_all_bytes == 0
                  ? 0.0
                  : 100.0 * (1.0 - static_cast<double>(r.mobiletl_bytes) /
                                       static_cast<double>(r.ft_all_bytes));
  return r;
}

AuditResult audit_against_tape(const ModelSpec& spec, const TrainPolicy& policy,
                               std::uint64_t seed, DType dtype) {
  const ProfileReport rep = profile_model(spec, policy, {}, dtype);
  auto pm = apply_policy(build_model(spec, seed, dtype), policy);

  Tape tape;
  ForwardContext ctx{&tape, true, true};
  const Var x = Var::make(Tensor::rand_normal(spec.input_shape, seed ^ 0xA5A5u, 0.0, 1.0, dtype),
                          spec.input_requires_grad);
  Var out = pm.model.forward(x, ctx);
  if (spec.num_classes > 0) {
    std::vector<int> labels(static_cast<std::size_t>(spec.input_shape[0]));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
    }
    out = cross_entropy_loss(out, labels, ctx);
  }

  const auto measured_saved = tape.saved_bytes_by_layer();
  const auto measured_temp = tape.temp_bytes_by_layer();
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> predicted;
  std::set<std::string> ids;
  for (const auto& r : rep.rows) {
    predicted[r.layer_id] = {r.saved_act_bytes, r.temp_bytes};
    ids.insert(r.layer_id);
  }
  for (const auto& [k, v] : measured_saved) ids.insert(k);
  for (const auto& [k, v] : measured_temp) ids.insert(k);

  AuditResult res;
  res.predicted_total = rep.totals.saved_act_bytes;
  res.measured_total = tape.saved_bytes();
  for (const auto& id : ids) {
    AuditMismatch m;
    m.layer_id = id;
    if (auto it = predicted.find(id); it != predicted.end()) {
      m.predicted_saved = it->second.first;
      m.predicted_temp = it->second.second;
    }
    if (auto it = measured_saved.find(id); it != measured_saved.end()) m.measured_saved = it->second;
    if (auto it = measured_temp.find(id); it != measured_temp.end()) m.measured_temp = it->second;
    ++res.layers_checked;
    if (m.predicted_saved != m.measured_saved || m.predicted_temp != m.measured_temp) {
      res.mismatches.push_back(std::move(m));
    }
  }
  res.pass = res.mismatches.empty() && res.predicted_total == res.measured_total;
  return res;
}

std::vector<StrategyRow> compare_strategies(const ModelSpec& spec,
                                            const std::vector<TrainPolicy>& policies,
                                            const Shape& input_shape) {
  std::vector<StrategyRow> rows;
  for (const auto& p : policies) {
    const auto rep = profile_model(spec, p, input_shape);
    StrategyRow r;
    r.label = p.label();
    r.policy = p;
    r.saved_act_bytes = rep.totals.saved_act_bytes;
    r.fwd_flops = rep.totals.fwd_flops;
    r.bwd_flops = rep.totals.bwd_flops;
    r.trainable_params = rep.trainable_params;
    r.param_bytes = rep.totals.param_bytes;
    r.temp_bytes = rep.totals.temp_bytes;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mobiletl
