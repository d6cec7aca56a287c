// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mobiletl/tensor.hpp"

namespace mobiletl {

using TensorId = std::uint64_t;

/// Process-wide unique id for a freshly produced tensor.
TensorId next_tensor_id();

/// A named model parameter. Gradients are keyed by `name`.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = false;
};

using GradMap = std::map<std::string, Tensor>;

/// A tensor flowing through the forward pass.
struct Var {
  std::shared_ptr<const Tensor> data;
  TensorId id = 0;
  bool requires_grad = false;

  const Tensor& value() const { return *data; }
  static Var make(Tensor t, bool requires_grad = false) {
    return Var{std::make_shared<const Tensor>(std::move(t)), next_tensor_id(),
               requires_grad};
  }
};

enum class SavedKind { FullMap, Mask1, Mask2, SmallVector, NormStats };

const char* saved_kind_name(SavedKind k);

/// Bits charged per element: FullMap/SmallVector/NormStats use the tensor's
/// float width (32 in f32 mode), masks are 1 or 2 bits.
int saved_bit_width(SavedKind kind, DType dtype);
std::int64_t saved_bytes_for(SavedKind kind, DType dtype, std::int64_t elements);

struct SavedBuffer {
  TensorId tensor_id = 0;
  SavedKind kind = SavedKind::FullMap;
  std::int64_t elements = 0;
  std::int64_t bytes = 0;
  std::string layer_id;
};

/// Handle to a saved buffer inside a tape.
struct SavedRef {
  std::size_t index = 0;
};

/// Gradient sink handed to backward closures.
class GradSink {
 public:
  explicit GradSink(GradMap& grads) : grads_(grads) {}
  /// Adds `g` into the gradient slot of a trainable parameter.
  void accumulate(const Parameter& p, const Tensor& g);

 private:
  GradMap& grads_;
};

/// Returns one gradient per node input; entries for inputs that do not need
/// a gradient may be left empty.
using BackwardFn =
    std::function<std::vector<std::optional<Tensor>>(const Tensor& grad_out, GradSink& sink)>;

struct Node {
  std::string op;
  std::string layer_id;
  std::vector<Var> inputs;
  TensorId output = 0;
  std::vector<SavedRef> saved;
  BackwardFn backward;
};

/// Reverse-mode tape with a byte-accounted saved-for-backward registry.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Layer id attributed to subsequent saves and temp notes.
  void set_scope(std::string layer_id) { scope_ = std::move(layer_id); }
  const std::string& scope() const { return scope_; }

  /// Saves an existing forward tensor. Saving the same tensor twice charges once.
  SavedRef save(const Var& v, SavedKind kind);
  /// Saves a tensor created purely for backward (masks, normalized maps).
  SavedRef save_new(Tensor t, SavedKind kind);
  const Tensor& saved(SavedRef ref) const;

  /// Scratch memory used by the current layer (im2col buffers and the like).
  void note_temp_bytes(std::int64_t bytes);

  /// Registers a trainable parameter that must receive a gradient.
  void register_param(const Parameter& p);
  /// Appends a node; output var id must be fresh.
  void record(Node node);

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<SavedBuffer>& saved_buffers() const { return saved_; }

  /// Total bytes of every saved buffer recorded during forward.
  std::int64_t saved_bytes() const;
  /// Bytes still held (drops as backward releases buffers).
  std::int64_t live_bytes() const { return live_bytes_; }
  std::map<std::string, std::int64_t> saved_bytes_by_layer() const;
  std::map<std::string, std::int64_t> temp_bytes_by_layer() const { return temp_; }

  /// Backpropagates from a scalar output. Callable once per tape.
  GradMap backward(const Var& loss);
  /// Backpropagates an explicit seed gradient from any recorded output.
  GradMap backward(const Var& output, const Tensor& seed);

  /// Input gradient for a leaf var, available after backward.
  std::optional<Tensor> grad_of(const Var& v) const;

  bool finished() const { return finished_; }

 private:
  std::string scope_;
  std::vector<Node> nodes_;
  std::vector<SavedBuffer> saved_;
  std::vector<std::shared_ptr<const Tensor>> payloads_;
  std::vector<int> refcount_;
  std::unordered_map<TensorId, std::size_t> saved_index_;
  std::map<std::string, std::int64_t> temp_;
  std::vector<const Parameter*> params_;
  std::unordered_map<TensorId, Tensor> leaf_grads_;
  std::int64_t live_bytes_ = 0;
  bool finished_ = false;
};

/// In-place `dst += src` for float tensors of equal shape and dtype.
void add_into(Tensor& dst, const Tensor& src);

}  // namespace mobiletl
