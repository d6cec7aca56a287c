// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

// Numeric kernels. Pure functions over tensors, no tape bookkeeping; the
// layer classes in layers.hpp decide what gets saved and record the nodes.
// Every kernel runs in f32 or f64 following its input's dtype.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mobiletl/tape.hpp"
#include "mobiletl/tensor.hpp"

namespace mobiletl {

// ---------------------------------------------------------------- conv2d ---

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Output spatial size for one axis; throws ShapeError when non-positive.
std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, int stride, int padding);

/// True when the kernel lowers through an im2col scratch buffer (dense
/// convolutions that are not plain 1x1/stride-1 matmuls).
bool conv_uses_im2col(std::int64_t kernel, const ConvGeometry& g);
/// Bytes of im2col scratch for one sample (0 when the direct path is used).
std::int64_t conv_temp_bytes(const Shape& x_shape, const Shape& w_shape,
                             const ConvGeometry& g, DType dtype);

/// x [B,Cin,H,W], w [Cout,Cin/groups,K,K] (f32/f64, or i8 dequantized on the
/// fly into x's dtype) -> y [B,Cout,Hout,Wout].
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const ConvGeometry& g);

struct ConvGrads {
  std::optional<Tensor> grad_x;
  std::optional<Tensor> grad_w;
};

/// Gradients of a convolution. grad_x needs only the weights; grad_w needs the
/// saved input, so asking for it with `x == nullptr` is a StateError.
ConvGrads conv2d_backward(const Tensor& grad_y, const Tensor* x, const Tensor& w,
                          const ConvGeometry& g, const Shape& x_shape, bool want_grad_x,
                          bool want_grad_w);

/// Weight tensor in the compute dtype (dequantizes i8).
Tensor dequantize_as(const Tensor& w, DType dtype);

// ------------------------------------------------------------ batch norm ---

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel (dim 1).
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& mean, const Tensor& var, double eps);

struct BatchNormTrainOut {
  Tensor y;
  Tensor xhat;                   ///< normalized input, same shape as x
  std::vector<double> mean;      ///< batch mean per channel
  std::vector<double> var;       ///< biased batch variance per channel
  std::vector<double> inv_std;   ///< 1 / sqrt(var + eps)
};

BatchNormTrainOut batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                   double eps);

struct BatchNormGrads {
  std::optional<Tensor> grad_x;
  std::optional<Tensor> grad_gamma;
  Tensor grad_beta;
};

/// Backward with frozen statistics: grad_beta = sum(grad_y), grad_x = grad_y*gamma/sigma.
BatchNormGrads batch_norm_backward_frozen_stats(const Tensor& grad_y, const Tensor& gamma,
                                                const Tensor& var, double eps, bool want_grad_x);

/// Backward through batch statistics.
BatchNormGrads batch_norm_backward_train(const Tensor& grad_y, const Tensor& xhat,
                                         const Tensor& gamma,
                                         const std::vector<double>& inv_std, bool want_grad_x);

// ----------------------------------------------------------- activations ---

enum class ActBackwardMode { Exact, ApproxSigned };

struct ActForward {
  Tensor y;
  Tensor saved;  ///< mask, or a copy of the input for a FullMap save
  SavedKind kind = SavedKind::Mask1;
};

ActForward relu6_forward(const Tensor& a, ActBackwardMode mode);
Tensor relu6_backward(const Tensor& grad_y, const Tensor& saved, SavedKind kind,
                      ActBackwardMode mode);

ActForward hardswish_forward(const Tensor& a, ActBackwardMode mode);
Tensor hardswish_backward(const Tensor& grad_y, const Tensor& saved, SavedKind kind,
                          ActBackwardMode mode);

/// relu6(a + 3) / 6. Saves a Mask2 of the linear region.
ActForward hardsigmoid_forward(const Tensor& a);
Tensor hardsigmoid_backward(const Tensor& grad_y, const Tensor& mask2);

/// Plain ReLU used inside the SE bottleneck. The mask is a 0/1 float vector.
ActForward relu_forward(const Tensor& a);
Tensor relu_backward(const Tensor& grad_y, const Tensor& mask);

// -------------------------------------------------------- misc operators ---

/// x [B,in], w [out,in], b [out] or null -> [B,out].
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* b);

struct LinearGrads {
  std::optional<Tensor> grad_x;
  std::optional<Tensor> grad_w;
  std::optional<Tensor> grad_b;
};

LinearGrads linear_backward(const Tensor& grad_y, const Tensor* x, const Tensor& w,
                            bool want_grad_x, bool want_grad_w, bool want_grad_b);

/// [B,C,H,W] -> [B,C]
Tensor global_avg_pool_forward(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& grad_y, const Shape& x_shape);

Tensor residual_add(const Tensor& a, const Tensor& b);

/// y[b,c,h,w] = x[b,c,h,w] * gate[b,c]
Tensor channel_scale(const Tensor& x, const Tensor& gate);

struct CrossEntropyOut {
  Tensor loss;   ///< shape [1], mean over batch
  Tensor probs;  ///< softmax probabilities [B,K]
};

/// Throws ValueError for labels outside [0, K).
CrossEntropyOut softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor softmax_cross_entropy_backward(const Tensor& probs, const std::vector<int>& labels,
                                      double grad_loss);

}  // namespace mobiletl
