// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mobiletl/layers.hpp"

namespace mobiletl {

enum class BlockKind { ConvBlock, IRBv2, IRBv3, Head };
enum class Activation { None, ReLU6, HardSwish };

const char* block_kind_name(BlockKind k);
const char* activation_name(Activation a);

struct BlockSpec {
  BlockKind kind = BlockKind::ConvBlock;
  std::int64_t in_ch = 0;
  std::int64_t out_ch = 0;
  double expansion = 1.0;
  /// Explicit expanded width; 0 derives it as round(in_ch * expansion).
  std::int64_t hidden_ch = 0;
  /// IRBs only: false drops the pointwise expansion (needs hidden == in).
  bool expand = true;
  int kernel = 3;
  int stride = 1;
  Activation activation = Activation::ReLU6;
  bool use_se = false;
  int se_ratio = 4;
  /// Unset: residual iff stride 1 and in_ch == out_ch.
  std::optional<bool> use_residual;
};

struct ModelSpec {
  Shape input_shape;  ///< [B, C, H, W]
  std::vector<BlockSpec> blocks;
  /// 0 builds a bare feature extractor with no classifier.
  std::int64_t num_classes = 0;
  /// Treat the model input as carrying gradient (profiles a block as if it
  /// were embedded in a deeper network).
  bool input_requires_grad = false;
};

std::int64_t hidden_channels(const BlockSpec& b);
bool has_residual(const BlockSpec& b);

/// Throws SpecError on any structural problem.
void validate_block(const BlockSpec& b);
void validate_model_spec(const ModelSpec& spec);

/// Number of spatial (non-head) blocks.
std::size_t body_block_count(const ModelSpec& spec);

// JSON (de)serialization of the declarative spec.
ModelSpec parse_model_spec(const std::string& json_text);
ModelSpec load_model_spec(const std::string& path);
std::string model_spec_to_json(const ModelSpec& spec);

/// One instantiated block: an ordered layer list plus an optional skip.
class Block {
 public:
  Block(const BlockSpec& spec, std::string prefix, DType dtype);
  Var forward(const Var& x, ForwardContext& ctx);

  const BlockSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  std::vector<Layer*> layers();
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> buffers();

 private:
  BlockSpec spec_;
  std::string prefix_;
  std::vector<std::unique_ptr<Layer>> layers_;
  bool residual_ = false;
};

class Model {
 public:
  Model(ModelSpec spec, DType dtype);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  DType dtype() const { return dtype_; }

  /// Body blocks, bottom to top (head block excluded).
  std::vector<Block*> body();
  Block* head_block() { return head_.get(); }
  Layer* classifier_pool() { return cls_pool_.get(); }
  LinearLayer* classifier() { return classifier_.get(); }

  /// Layers of the head block plus the classifier.
  std::vector<Layer*> head_layers();
  std::vector<Layer*> all_layers();
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> buffers();
  Parameter* find(const std::string& name);

  /// Features or logits for x. A bare model returns the last block output.
  Var forward(const Var& x, ForwardContext& ctx);

  Model clone() const;

 private:
  ModelSpec spec_;
  DType dtype_;
  std::vector<std::unique_ptr<Block>> blocks_;
  std::unique_ptr<Block> head_;
  std::unique_ptr<GlobalAvgPoolLayer> cls_pool_;
  std::unique_ptr<LinearLayer> classifier_;
};

/// Standalone block with zero-initialized parameters.
Block build_block(const BlockSpec& spec, DType dtype = DType::F32);
/// He-normal convolutions and linears, BN gamma=1 beta=0 mean=0 var=1.
Model build_model(const ModelSpec& spec, std::uint64_t seed, DType dtype = DType::F32);

/// Closed-form parameter count of a block or a spec.
std::int64_t param_count(const BlockSpec& b);
std::int64_t param_count(const ModelSpec& spec);
/// Count by walking the instantiated parameters.
std::int64_t param_count(Model& model);

// Checkpoint: "MTLC", u32 version, u32 count, then per tensor u32 name length,
// name, u8 dtype, u8 rank, u32 dims[rank], raw data (little endian). The spec
// travels as an i8 tensor named "__spec__"; i8 weights carry a companion
// "<name>.__scale__" f32 scalar.
void save_checkpoint(Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
/// Bytes of a checkpoint that are not tensor payload.
std::int64_t checkpoint_header_bytes(Model& model);

}  // namespace mobiletl
