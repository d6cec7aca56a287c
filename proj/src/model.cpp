// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/model.hpp"

#include <cmath>

namespace mobiletl {

const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::ConvBlock: return "conv";
    case BlockKind::IRBv2: return "irb_v2";
    case BlockKind::IRBv3: return "irb_v3";
    case BlockKind::Head: return "head";
  }
  return "?";
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU6: return "relu6";
    case Activation::HardSwish: return "hswish";
  }
  return "?";
}

std::int64_t hidden_channels(const BlockSpec& b) {
  if (b.hidden_ch > 0) return b.hidden_ch;
  return static_cast<std::int64_t>(std::llround(static_cast<double>(b.in_ch) * b.expansion));
}

bool has_residual(const BlockSpec& b) {
  if (b.kind == BlockKind::Head) return false;
  if (b.use_residual) return *b.use_residual;
  if (b.kind == BlockKind::ConvBlock) return false;
  return b.stride == 1 && b.in_ch == b.out_ch;
}

void validate_block(const BlockSpec& b) {
  const std::string where = std::string(block_kind_name(b.kind)) + " block: ";
  if (b.in_ch < 1 || b.out_ch < 1) throw SpecError(where + "channel counts must be >= 1");
  if (b.kind == BlockKind::Head) return;
  if (b.kernel < 1 || b.kernel % 2 == 0) throw SpecError(where + "kernel must be odd");
  if (b.stride != 1 && b.stride != 2) throw SpecError(where + "stride must be 1 or 2");
  if (b.use_residual && *b.use_residual && !(b.stride == 1 && b.in_ch == b.out_ch)) {
    throw SpecError(where + "residual needs stride 1 and in_ch == out_ch");
  }
  if (b.kind == BlockKind::ConvBlock) {
    if (b.use_se) throw SpecError(where + "squeeze-excite is only available in irb_v3");
    return;
  }
  if (!(b.expansion >= 1.0)) throw SpecError(where + "expansion must be >= 1");
  const auto h = hidden_channels(b);
  if (h < b.in_ch) throw SpecError(where + "hidden width smaller than input width");
  if (!b.expand && h != b.in_ch) {
    throw SpecError(where + "a block without expansion needs hidden_ch == in_ch");
  }
  if (b.activation == Activation::None) throw SpecError(where + "IRBs need an activation");
  if (b.kind == BlockKind::IRBv2 && b.use_se) {
    throw SpecError(where + "squeeze-excite is only available in irb_v3");
  }
  if (b.use_se && (b.se_ratio < 1 || h % b.se_ratio != 0)) {
    throw SpecError(where + "hidden width " + std::to_string(h) +
                    " not divisible by SE ratio " + std::to_string(b.se_ratio));
  }
}

void validate_model_spec(const ModelSpec& spec) {
  if (spec.input_shape.size() != 4) throw SpecError("input_shape must be [B,C,H,W]");
  for (auto d : spec.input_shape) {
    if (d < 1) throw SpecError("input_shape dimensions must be >= 1");
  }
  if (spec.num_classes < 0) throw SpecError("num_classes must be >= 0");
  std::int64_t ch = spec.input_shape[1];
  std::int64_t h = spec.input_shape[2];
  std::int64_t w = spec.input_shape[3];
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    validate_block(b);
    if (b.in_ch != ch) {
      throw SpecError("block " + std::to_string(i) + " expects " + std::to_string(b.in_ch) +
                      " input channels but receives " + std::to_string(ch));
    }
    if (b.kind == BlockKind::Head) {
      if (i + 1 != spec.blocks.size()) throw SpecError("the head block must be last");
      ch = b.out_ch;
      continue;
    }
    const int pad = b.kernel / 2;
    if (h + 2 * pad < b.kernel || w + 2 * pad < b.kernel) {
      throw SpecError("block " + std::to_string(i) + ": spatial size collapses");
    }
    h = (h + 2 * pad - b.kernel) / b.stride + 1;
    w = (w + 2 * pad - b.kernel) / b.stride + 1;
    ch = b.out_ch;
  }
}

std::size_t body_block_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& b : spec.blocks) n += b.kind != BlockKind::Head;
  return n;
}

// ----------------------------------------------------------------- Block ---

Block::Block(const BlockSpec& spec, std::string prefix, DType dtype)
    : spec_(spec), prefix_(std::move(prefix)) {
  validate_block(spec_);
  const auto id = [&](const char* s) { return prefix_ + "." + s; };
  const auto act_kind = [&] {
    return spec_.activation == Activation::HardSwish ? ActivationKind::HardSwish
                                                     : ActivationKind::ReLU6;
  };
  const int k = spec_.kernel;

  switch (spec_.kind) {
    case BlockKind::ConvBlock:
      layers_.push_back(std::make_unique<Conv2dLayer>(id("conv"), spec_.in_ch, spec_.out_ch, k,
                                                      spec_.stride, 1, dtype));
      layers_.push_back(
          std::make_unique<BatchNormLayer>(id("bn"), LayerRole::FinalNorm, spec_.out_ch, dtype));
      if (spec_.activation != Activation::None) {
        layers_.push_back(
            std::make_unique<ActivationLayer>(id("act"), act_kind(), ActBackwardMode::Exact));
      }
      break;
    case BlockKind::IRBv2:
    case BlockKind::IRBv3: {
      const auto hid = hidden_channels(spec_);
      if (spec_.expand) {
        layers_.push_back(
            std::make_unique<Conv2dLayer>(id("expand"), spec_.in_ch, hid, 1, 1, 1, dtype));
        layers_.push_back(std::make_unique<BatchNormLayer>(id("bn1"), LayerRole::IntermediaryNorm,
                                                           hid, dtype));
        layers_.push_back(
            std::make_unique<ActivationLayer>(id("act1"), act_kind(), ActBackwardMode::Exact));
      }
      layers_.push_back(
          std::make_unique<Conv2dLayer>(id("dw"), hid, hid, k, spec_.stride, hid, dtype));
      layers_.push_back(
          std::make_unique<BatchNormLayer>(id("bn2"), LayerRole::IntermediaryNorm, hid, dtype));
      layers_.push_back(
          std::make_unique<ActivationLayer>(id("act2"), act_kind(), ActBackwardMode::Exact));
      if (spec_.use_se) {
        layers_.push_back(
            std::make_unique<SqueezeExciteLayer>(id("se"), hid, spec_.se_ratio, dtype));
      }
      layers_.push_back(
          std::make_unique<Conv2dLayer>(id("project"), hid, spec_.out_ch, 1, 1, 1, dtype));
      layers_.push_back(std::make_unique<BatchNormLayer>(id("bn3"), LayerRole::FinalNorm,
                                                         spec_.out_ch, dtype));
      break;
    }
    case BlockKind::Head:
      layers_.push_back(std::make_unique<GlobalAvgPoolLayer>(id("pool")));
      layers_.push_back(
          std::make_unique<LinearLayer>(id("fc"), spec_.in_ch, spec_.out_ch, true, dtype));
      if (spec_.activation != Activation::None) {
        layers_.push_back(
            std::make_unique<ActivationLayer>(id("act"), act_kind(), ActBackwardMode::Exact));
      }
      break;
  }
  residual_ = has_residual(spec_);
}

Var Block::forward(const Var& x, ForwardContext& ctx) {
  Var h = x;
  for (auto& l : layers_) h = l->forward(h, ctx);
  if (residual_) h = residual_add(h, x, ctx, prefix_ + ".add");
  return h;
}

std::vector<Layer*> Block::layers() {
  std::vector<Layer*> v;
  for (auto& l : layers_) v.push_back(l.get());
  return v;
}

std::vector<Parameter*> Block::parameters() {
  std::vector<Parameter*> v;
  for (auto& l : layers_) {
    for (auto* p : l->parameters()) v.push_back(p);
  }
  return v;
}

std::vector<Parameter*> Block::buffers() {
  std::vector<Parameter*> v;
  for (auto& l : layers_) {
    for (auto* p : l->buffers()) v.push_back(p);
  }
  return v;
}

Block build_block(const BlockSpec& spec, DType dtype) { return Block(spec, "b0", dtype); }

// ----------------------------------------------------------------- Model ---

Model::Model(ModelSpec spec, DType dtype) : spec_(std::move(spec)), dtype_(dtype) {
  validate_model_spec(spec_);
  std::int64_t ch = spec_.input_shape[1];
  std::size_t idx = 0;
  for (const auto& b : spec_.blocks) {
    if (b.kind == BlockKind::Head) {
      head_ = std::make_unique<Block>(b, "head", dtype);
    } else {
      blocks_.push_back(std::make_unique<Block>(b, "b" + std::to_string(idx++), dtype));
    }
    ch = b.out_ch;
  }
  if (spec_.num_classes > 0) {
    if (!head_) cls_pool_ = std::make_unique<GlobalAvgPoolLayer>("cls.pool");
    classifier_ = std::make_unique<LinearLayer>("cls.fc", ch, spec_.num_classes, true, dtype);
  }
}

std::vector<Block*> Model::body() {
  std::vector<Block*> v;
  for (auto& b : blocks_) v.push_back(b.get());
  return v;
}

std::vector<Layer*> Model::head_layers() {
  std::vector<Layer*> v;
  if (head_) v = head_->layers();
  if (cls_pool_) v.push_back(cls_pool_.get());
  if (classifier_) v.push_back(classifier_.get());
  return v;
}

std::vector<Layer*> Model::all_layers() {
  std::vector<Layer*> v;
  for (auto& b : blocks_) {
    for (auto* l : b->layers()) v.push_back(l);
  }
  for (auto* l : head_layers()) v.push_back(l);
  return v;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> v;
  for (auto* l : all_layers()) {
    for (auto* p : l->parameters()) v.push_back(p);
  }
  return v;
}

std::vector<Parameter*> Model::buffers() {
  std::vector<Parameter*> v;
  for (auto* l : all_layers()) {
    for (auto* p : l->buffers()) v.push_back(p);
  }
  return v;
}

Parameter* Model::find(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return p;
  }
  for (auto* p : buffers()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

Var Model::forward(const Var& x, ForwardContext& ctx) {
  if (x.value().shape().size() != 4 || x.value().dim(1) != spec_.input_shape[1]) {
    throw ShapeError("model input " + shape_str(x.value().shape()) +
                     " does not match spec channels " + std::to_string(spec_.input_shape[1]));
  }
  Var h = x;
  for (auto& b : blocks_) h = b->forward(h, ctx);
  if (head_) h = head_->forward(h, ctx);
  if (cls_pool_) h = cls_pool_->forward(h, ctx);
  if (classifier_) h = classifier_->forward(h, ctx);
  return h;
}

Model Model::clone() const {
  Model copy(spec_, dtype_);
  auto& self = const_cast<Model&>(*this);
  auto src = self.all_layers();
  auto dst = copy.all_layers();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto sp = src[i]->parameters();
    auto dp = dst[i]->parameters();
    for (std::size_t j = 0; j < sp.size(); ++j) *dp[j] = *sp[j];
    auto sb = src[i]->buffers();
    auto db = dst[i]->buffers();
    for (std::size_t j = 0; j < sb.size(); ++j) *db[j] = *sb[j];
    if (auto* bn = dynamic_cast<BatchNormLayer*>(src[i])) {
      auto* d = static_cast<BatchNormLayer*>(dst[i]);
      const bool g = d->gamma().trainable, b = d->beta().trainable;
      d->set_mode(bn->mode());
      d->gamma().trainable = g;
      d->beta().trainable = b;
    }
    if (auto* act = dynamic_cast<ActivationLayer*>(src[i])) {
      static_cast<ActivationLayer*>(dst[i])->set_mode(act->mode());
    }
  }
  return copy;
}

namespace {

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed, DType dtype) {
  Model m(spec, dtype);
  for (auto* l : m.all_layers()) {
    for (auto* p : l->parameters()) {
      const auto& s = p->value.shape();
      const bool is_weight = p->name.ends_with(".weight");
      if (!is_weight) continue;  // biases and BN affine keep their defaults
      std::int64_t fan_in = 1;
      for (std::size_t d = 1; d < s.size(); ++d) fan_in *= s[d];
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      p->value = Tensor::rand_normal(s, fnv1a(p->name, seed), 0.0, stddev, dtype);
    }
  }
  return m;
}

std::int64_t param_count(const BlockSpec& b) {
  const auto k2 = static_cast<std::int64_t>(b.kernel) * b.kernel;
  switch (b.kind) {
    case BlockKind::ConvBlock:
      return k2 * b.in_ch * b.out_ch + 2 * b.out_ch;
    case BlockKind::Head:
      return b.in_ch * b.out_ch + b.out_ch;
    case BlockKind::IRBv2:
    case BlockKind::IRBv3: {
      const auto h = hidden_channels(b);
      std::int64_t n = 0;
      if (b.expand) n += b.in_ch * h + 2 * h;
      n += k2 * h + 2 * h;
      if (b.use_se) {
        const auto r = h / b.se_ratio;
        n += h * r + r + r * h + h;
      }
      n += h * b.out_ch + 2 * b.out_ch;
      return n;
    }
  }
  return 0;
}

std::int64_t param_count(const ModelSpec& spec) {
  std::int64_t n = 0;
  std::int64_t ch = spec.input_shape.size() == 4 ? spec.input_shape[1] : 0;
  for (const auto& b : spec.blocks) {
    n += param_count(b);
    ch = b.out_ch;
  }
  if (spec.num_classes > 0) n += ch * spec.num_classes + spec.num_classes;
  return n;
}

std::int64_t param_count(Model& model) {
  std::int64_t n = 0;
  for (auto* p : model.parameters()) n += p->value.numel();
  return n;
}

}  // namespace mobiletl
