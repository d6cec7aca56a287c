// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mobiletl/ops.hpp"
#include "mobiletl/tape.hpp"

namespace mobiletl {

struct ForwardContext {
  Tape* tape = nullptr;  ///< null: inference, nothing is recorded
  bool training = false;
  bool update_running_stats = true;
};

/// Where a layer sits inside its block; the training policy keys off this.
enum class LayerRole { Conv, IntermediaryNorm, FinalNorm, Activation, SqueezeExcite, Pool, Linear };

class Layer {
 public:
  Layer(std::string id, LayerRole role) : id_(std::move(id)), role_(role) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual Var forward(const Var& x, ForwardContext& ctx) = 0;
  virtual const char* kind() const = 0;
  /// Learnable tensors (trainable or frozen).
  virtual std::vector<Parameter*> parameters() { return {}; }
  /// Non-learnable state that still belongs in a checkpoint.
  virtual std::vector<Parameter*> buffers() { return {}; }

  const std::string& id() const { return id_; }
  LayerRole role() const { return role_; }
  bool any_trainable();

 protected:
  /// Records when a tape is present and either the input carries gradient
  /// or this layer owns a trainable parameter.
  bool should_record(const Var& x, const ForwardContext& ctx);
  Var produce(Tensor y, bool recorded) const { return Var::make(std::move(y), recorded); }

 private:
  std::string id_;
  LayerRole role_;
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(std::string id, std::int64_t cin, std::int64_t cout, int kernel, int stride,
              int groups, DType dtype);
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return groups_ == 1 ? "conv" : "dwconv"; }
  std::vector<Parameter*> parameters() override { return {&weight_}; }

  Parameter& weight() { return weight_; }
  const ConvGeometry& geometry() const { return geom_; }
  int kernel() const { return kernel_; }

 private:
  Parameter weight_;
  ConvGeometry geom_;
  int kernel_;
  int groups_;
};

enum class BNMode { Full, ShiftOnly, Frozen };
const char* bn_mode_name(BNMode m);

class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(std::string id, LayerRole role, std::int64_t channels, DType dtype,
                 double eps = 1e-5, double momentum = 0.1);
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return "bn"; }
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Parameter*> buffers() override { return {&running_mean_, &running_var_}; }

  /// Sets trainability: Full trains gamma and beta, ShiftOnly beta, Frozen nothing.
  void set_mode(BNMode mode);
  BNMode mode() const { return mode_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Parameter& running_mean() { return running_mean_; }
  Parameter& running_var() { return running_var_; }
  double eps() const { return eps_; }

 private:
  Parameter gamma_, beta_, running_mean_, running_var_;
  double eps_;
  double momentum_;
  BNMode mode_ = BNMode::Full;
};

enum class ActivationKind { ReLU6, HardSwish };

class ActivationLayer : public Layer {
 public:
  ActivationLayer(std::string id, ActivationKind kind, ActBackwardMode mode)
      : Layer(std::move(id), LayerRole::Activation), act_(kind), mode_(mode) {}
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return act_ == ActivationKind::ReLU6 ? "relu6" : "hswish"; }

  ActivationKind activation() const { return act_; }
  ActBackwardMode mode() const { return mode_; }
  void set_mode(ActBackwardMode m) { mode_ = m; }

 private:
  ActivationKind act_;
  ActBackwardMode mode_;
};

/// Standalone hard-sigmoid layer (exact backward through a Mask2).
class HardSigmoidLayer : public Layer {
 public:
  explicit HardSigmoidLayer(std::string id) : Layer(std::move(id), LayerRole::Activation) {}
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return "hsigmoid"; }
};

class LinearLayer : public Layer {
 public:
  LinearLayer(std::string id, std::int64_t in, std::int64_t out, bool bias, DType dtype);
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return "linear"; }
  std::vector<Parameter*> parameters() override;

  Parameter& weight() { return weight_; }
  Parameter* bias() { return has_bias_ ? &bias_ : nullptr; }

 private:
  Parameter weight_, bias_;
  bool has_bias_;
};

class GlobalAvgPoolLayer : public Layer {
 public:
  explicit GlobalAvgPoolLayer(std::string id) : Layer(std::move(id), LayerRole::Pool) {}
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return "gap"; }
};

/// Squeeze-and-excitation: x * hsigmoid(fc2(relu(fc1(gap(x))))).
class SqueezeExciteLayer : public Layer {
 public:
  SqueezeExciteLayer(std::string id, std::int64_t channels, int reduce_ratio, DType dtype);
  Var forward(const Var& x, ForwardContext& ctx) override;
  const char* kind() const override { return "se"; }
  std::vector<Parameter*> parameters() override { return {&w1_, &b1_, &w2_, &b2_}; }

  std::int64_t reduced() const { return reduced_; }
  Parameter& fc1_weight() { return w1_; }
  Parameter& fc1_bias() { return b1_; }
  Parameter& fc2_weight() { return w2_; }
  Parameter& fc2_bias() { return b2_; }

 private:
  std::int64_t channels_;
  std::int64_t reduced_;
  Parameter w1_, b1_, w2_, b2_;
};

/// a + b. Saves nothing; the gradient reaches both operands unchanged.
Var residual_add(const Var& a, const Var& b, ForwardContext& ctx, const std::string& layer_id);

/// Mean softmax cross-entropy. Saves the probabilities as a SmallVector.
Var cross_entropy_loss(const Var& logits, const std::vector<int>& labels, ForwardContext& ctx,
                       const std::string& layer_id = "loss");

}  // namespace mobiletl
