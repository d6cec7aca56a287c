// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mobiletl/model.hpp"

namespace mobiletl {

enum class Preset { FT_All, FT_BN, FT_Bias, FT_Last, FT_KBLKs, MobileTL_KBLKs };

const char* preset_name(Preset p);
Preset parse_preset(const std::string& s);

struct TrainPolicy {
  Preset preset = Preset::FT_All;
  int k_blocks = 0;
  ActBackwardMode act_backward = ActBackwardMode::Exact;
  bool quantize_frozen = false;
  bool train_head = true;

  /// Short label such as "FT-All" or "MobileTL-3BLKs".
  std::string label() const;
};

/// Policy with the preset's defaults: the MobileTL preset approximates
/// activation backward and quantizes frozen blocks; every other preset is exact
/// and keeps frozen weights in f32.
TrainPolicy make_policy(Preset preset, int k_blocks = 0);

TrainPolicy parse_policy(const std::string& json_text);
TrainPolicy load_policy(const std::string& path);
std::string policy_to_json(const TrainPolicy& p);

/// How one body block is trained under a policy.
struct BlockTrainConfig {
  bool frozen = true;             ///< part of the frozen bottom g(x)
  bool conv_trainable = false;
  BNMode intermediary_bn = BNMode::Frozen;
  BNMode final_bn = BNMode::Frozen;
  ActBackwardMode act = ActBackwardMode::Exact;
  bool se_weights_trainable = false;
  bool se_bias_trainable = false;
  bool quantize = false;
};

/// `index` counts body blocks from the input (0) upward.
BlockTrainConfig resolve_block_config(const TrainPolicy& p, std::size_t index,
                                      std::size_t n_blocks);

/// Throws PolicyError when the policy cannot apply to the spec.
void validate_policy(const TrainPolicy& p, const ModelSpec& spec);

/// Symmetric per-tensor int8: scale = max|t| / 127 (1 for all-zero), q = round(t / scale).
struct QuantizedTensor {
  Tensor values;  ///< I8, carries `scale`
  float scale = 1.0f;
  Tensor dequantize() const;
};

QuantizedTensor quantize_per_tensor_i8(const Tensor& t);

struct PartitionedModel {
  Model model;
  TrainPolicy policy;
  /// Index of the lowest trainable body block (== block count when none).
  std::size_t first_trainable_block = 0;
};

/// Marks trainability, BN and activation modes, and quantizes frozen blocks.
PartitionedModel apply_policy(Model model, const TrainPolicy& policy);

/// Parameters that receive gradients under the policy.
std::int64_t policy_trainable_param_count(const ModelSpec& spec, const TrainPolicy& policy);
std::int64_t trainable_param_count(Model& model);

}  // namespace mobiletl
