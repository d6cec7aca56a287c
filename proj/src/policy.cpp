// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mobiletl {

using nlohmann::json;

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::FT_All: return "ft_all";
    case Preset::FT_BN: return "ft_bn";
    case Preset::FT_Bias: return "ft_bias";
    case Preset::FT_Last: return "ft_last";
    case Preset::FT_KBLKs: return "ft_kblks";
    case Preset::MobileTL_KBLKs: return "mobiletl_kblks";
  }
  return "?";
}

Preset parse_preset(const std::string& s) {
  for (auto p : {Preset::FT_All, Preset::FT_BN, Preset::FT_Bias, Preset::FT_Last,
                 Preset::FT_KBLKs, Preset::MobileTL_KBLKs}) {
    if (s == preset_name(p)) return p;
  }
  throw PolicyError("unknown preset '" + s + "'");
}

std::string TrainPolicy::label() const {
  switch (preset) {
    case Preset::FT_All: return "FT-All";
    case Preset::FT_BN: return "FT-BN";
    case Preset::FT_Bias: return "FT-Bias";
    case Preset::FT_Last: return "FT-Last";
    case Preset::FT_KBLKs: return "FT-" + std::to_string(k_blocks) + "BLKs";
    case Preset::MobileTL_KBLKs: return "MobileTL-" + std::to_string(k_blocks) + "BLKs";
  }
  return "?";
}

TrainPolicy make_policy(Preset preset, int k_blocks) {
  TrainPolicy p;
  p.preset = preset;
  p.k_blocks = k_blocks;
  const bool mtl = preset == Preset::MobileTL_KBLKs;
  p.act_backward = mtl ? ActBackwardMode::ApproxSigned : ActBackwardMode::Exact;
  p.quantize_frozen = mtl;
  return p;
}

TrainPolicy parse_policy(const std::string& json_text) {
  TrainPolicy p;
  try {
    const json j = json::parse(json_text);
    p = make_policy(parse_preset(j.at("preset").get<std::string>()),
                    j.value("k_blocks", 0));
    if (j.contains("act_backward")) {
      const auto s = j.at("act_backward").get<std::string>();
      if (s == "exact") {
        p.act_backward = ActBackwardMode::Exact;
      } else if (s == "approx") {
        p.act_backward = ActBackwardMode::ApproxSigned;
      } else {
        throw PolicyError("act_backward must be 'exact' or 'approx', got '" + s + "'");
      }
    }
    p.quantize_frozen = j.value("quantize_frozen", p.quantize_frozen);
    p.train_head = j.value("train_head", true);
  } catch (const json::exception& e) {
    throw PolicyError(std::string("malformed policy: ") + e.what());
  }
  if (p.k_blocks < 0) throw PolicyError("k_blocks must be >= 0");
  if (!p.train_head) throw PolicyError("the classifier head is always trained");
  return p;
}

TrainPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open policy '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_policy(ss.str());
}

std::string policy_to_json(const TrainPolicy& p) {
  json j{{"preset", preset_name(p.preset)},
         {"k_blocks", p.k_blocks},
         {"act_backward", p.act_backward == ActBackwardMode::Exact ? "exact" : "approx"},
         {"quantize_frozen", p.quantize_frozen},
         {"train_head", p.train_head}};
  return j.dump();
}

BlockTrainConfig resolve_block_config(const TrainPolicy& p, std::size_t index,
                                      std::size_t n_blocks) {
  BlockTrainConfig c;
  const bool in_top = index + static_cast<std::size_t>(p.k_blocks) >= n_blocks;
  auto full = [&] {
    c.frozen = false;
    c.conv_trainable = true;
    c.intermediary_bn = BNMode::Full;
    c.final_bn = BNMode::Full;
    c.act = p.act_backward;
    c.se_weights_trainable = true;
    c.se_bias_trainable = true;
  };
  switch (p.preset) {
    case Preset::FT_All:
      full();
      break;
    case Preset::FT_BN:
      c.frozen = false;
      c.intermediary_bn = c.final_bn = BNMode::Full;
      c.act = p.act_backward;
      break;
    case Preset::FT_Bias:
      c.frozen = false;
      c.intermediary_bn = c.final_bn = BNMode::ShiftOnly;
      c.act = p.act_backward;
      c.se_bias_trainable = true;
      break;
    case Preset::FT_Last:
      break;
    case Preset::FT_KBLKs:
      if (in_top) full();
      break;
    case Preset::MobileTL_KBLKs:
      if (in_top) {
        full();
        c.intermediary_bn = BNMode::ShiftOnly;
      }
      break;
  }
  c.quantize = c.frozen && p.quantize_frozen;
  return c;
}

void validate_policy(const TrainPolicy& p, const ModelSpec& spec) {
  if (p.k_blocks < 0) throw PolicyError("k_blocks must be >= 0");
  const auto n = body_block_count(spec);
  if (static_cast<std::size_t>(p.k_blocks) > n) {
    throw PolicyError("k_blocks " + std::to_string(p.k_blocks) + " exceeds the " +
                      std::to_string(n) + " blocks of the model");
  }
  if (!p.train_head) throw PolicyError("the classifier head is always trained");
}

Tensor QuantizedTensor::dequantize() const {
  Tensor out(values.shape(), DType::F32);
  const auto q = values.span<std::int8_t>();
  auto o = out.span<float>();
  for (std::size_t i = 0; i < q.size(); ++i) o[i] = static_cast<float>(q[i]) * scale;
  return out;
}

QuantizedTensor quantize_per_tensor_i8(const Tensor& t) {
  if (!is_float(t.dtype())) throw ValueError("quantize: input must be a float tensor");
  double max_abs = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double v = t.get(i);
    if (!std::isfinite(v)) throw ValueError("quantize: tensor contains NaN or Inf");
    max_abs = std::max(max_abs, std::abs(v));
  }
  QuantizedTensor q;
  q.scale = max_abs > 0.0 ? static_cast<float>(max_abs / 127.0) : 1.0f;
  q.values = Tensor(t.shape(), DType::I8);
  q.values.set_scale(q.scale);
  auto out = q.values.span<std::int8_t>();
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double r = std::round(t.get(i) / static_cast<double>(q.scale));
    out[static_cast<std::size_t>(i)] = static_cast<std::int8_t>(std::clamp(r, -127.0, 127.0));
  }
  return q;
}

namespace {

void quantize_param(Parameter& p) {
  if (p.value.dtype() == DType::I8) return;
  p.value = quantize_per_tensor_i8(p.value).values;
}

}  // namespace

PartitionedModel apply_policy(Model model, const TrainPolicy& policy) {
  validate_policy(policy, model.spec());
  auto body = model.body();
  const std::size_t n = body.size();
  std::size_t first = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto cfg = resolve_block_config(policy, i, n);
    if (!cfg.frozen && first == n) first = i;
    for (auto* l : body[i]->layers()) {
      if (auto* conv = dynamic_cast<Conv2dLayer*>(l)) {
        conv->weight().trainable = cfg.conv_trainable;
        if (cfg.quantize) quantize_param(conv->weight());
      } else if (auto* bn = dynamic_cast<BatchNormLayer*>(l)) {
        bn->set_mode(l->role() == LayerRole::FinalNorm ? cfg.final_bn : cfg.intermediary_bn);
      } else if (auto* act = dynamic_cast<ActivationLayer*>(l)) {
        act->set_mode(cfg.act);
      } else if (auto* se = dynamic_cast<SqueezeExciteLayer*>(l)) {
        se->fc1_weight().trainable = cfg.se_weights_trainable;
        se->fc2_weight().trainable = cfg.se_weights_trainable;
        se->fc1_bias().trainable = cfg.se_bias_trainable;
        se->fc2_bias().trainable = cfg.se_bias_trainable;
        if (cfg.quantize) {
          quantize_param(se->fc1_weight());
          quantize_param(se->fc2_weight());
        }
      }
    }
  }
  for (auto* l : model.head_layers()) {
    for (auto* p : l->parameters()) p->trainable = true;
    if (auto* act = dynamic_cast<ActivationLayer*>(l)) act->set_mode(ActBackwardMode::Exact);
  }
  return PartitionedModel{std::move(model), policy, first};
}

std::int64_t policy_trainable_param_count(const ModelSpec& spec, const TrainPolicy& policy) {
  validate_policy(policy, spec);
  const std::size_t n = body_block_count(spec);
  std::int64_t total = 0;
  std::int64_t ch = spec.input_shape[1];
  std::size_t idx = 0;
  for (const auto& b : spec.blocks) {
    ch = b.out_ch;
    if (b.kind == BlockKind::Head) {
      total += param_count(b);
      continue;
    }
    const auto cfg = resolve_block_config(policy, idx++, n);
    const auto bn = [](BNMode m, std::int64_t c) -> std::int64_t {
      return m == BNMode::Full ? 2 * c : m == BNMode::ShiftOnly ? c : 0;
    };
    const std::int64_t k2 = static_cast<std::int64_t>(b.kernel) * b.kernel;
    if (b.kind == BlockKind::ConvBlock) {
      if (cfg.conv_trainable) total += k2 * b.in_ch * b.out_ch;
      total += bn(cfg.final_bn, b.out_ch);
      continue;
    }
    const auto h = hidden_channels(b);
    if (b.expand) {
      if (cfg.conv_trainable) total += b.in_ch * h;
      total += bn(cfg.intermediary_bn, h);
    }
    if (cfg.conv_trainable) total += k2 * h + h * b.out_ch;
    total += bn(cfg.intermediary_bn, h) + bn(cfg.final_bn, b.out_ch);
    if (b.use_se) {
      const auto r = h / b.se_ratio;
      if (cfg.se_weights_trainable) total += 2 * h * r;
      if (cfg.se_bias_trainable) total += r + h;
    }
  }
  if (spec.num_classes > 0) total += ch * spec.num_classes + spec.num_classes;
  return total;
}

std::int64_t trainable_param_count(Model& model) {
  std::int64_t n = 0;
  for (auto* p : model.parameters()) {
    if (p->trainable) n += p->value.numel();
  }
  return n;
}

}  // namespace mobiletl
