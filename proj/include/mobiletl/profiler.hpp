// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mobiletl/model.hpp"
#include "mobiletl/policy.hpp"

namespace mobiletl {

struct LayerProfile {
  std::string layer_id;
  std::string kind;
  std::int64_t fwd_flops = 0;
  std::int64_t bwd_flops = 0;
  std::int64_t param_bytes = 0;
  std::int64_t saved_act_bytes = 0;
  std::int64_t temp_bytes = 0;
};

struct ProfileReport {
  std::vector<LayerProfile> rows;
  LayerProfile totals;  ///< layer_id "total"; temp_bytes is the per-layer maximum
  TrainPolicy policy;
  Shape input_shape;
  std::int64_t trainable_params = 0;
  std::int64_t total_params = 0;
};

/// Scalar op costs used by the analytical model (a MAC counts 2).
const std::map<std::string, double>& flop_coefficients();

/// Analytical training cost of one step (forward + backward) under `policy`.
/// `input_shape` overrides the spec's shape when non-empty.
ProfileReport profile_model(const ModelSpec& spec, const TrainPolicy& policy,
                            const Shape& input_shape = {}, DType dtype = DType::F32);

struct Reduction {
  std::int64_t ft_all_bytes = 0;
  std::int64_t mobiletl_bytes = 0;
  double percent = 0.0;  ///< 100 * (1 - mobiletl / ft_all)
};

/// Stored-activation reduction of MobileTL over FT-All on a single IRB.
Reduction profile_reduction(const ModelSpec& spec, const Shape& input_shape = {});

struct AuditMismatch {
  std::string layer_id;
  std::int64_t predicted_saved = 0;
  std::int64_t measured_saved = 0;
  std::int64_t predicted_temp = 0;
  std::int64_t measured_temp = 0;
};

struct AuditResult {
  bool pass = false;
  std::int64_t predicted_total = 0;
  std::int64_t measured_total = 0;
  std::size_t layers_checked = 0;
  std::vector<AuditMismatch> mismatches;
};

/// Runs a real training-mode forward and compares the tape's saved and temp
/// bytes with the analytical prediction, layer by layer.
AuditResult audit_against_tape(const ModelSpec& spec, const TrainPolicy& policy,
                               std::uint64_t seed, DType dtype = DType::F32);

struct StrategyRow {
  std::string label;
  TrainPolicy policy;
  std::int64_t saved_act_bytes = 0;
  std::int64_t fwd_flops = 0;
  std::int64_t bwd_flops = 0;
  std::int64_t trainable_params = 0;
  std::int64_t param_bytes = 0;
  std::int64_t temp_bytes = 0;
};

std::vector<StrategyRow> compare_strategies(const ModelSpec& spec,
                                            const std::vector<TrainPolicy>& policies,
                                            const Shape& input_shape = {});

}  // namespace mobiletl
