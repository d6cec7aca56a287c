// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/tape.hpp"

#include <atomic>
#include <unordered_set>

namespace mobiletl {

TensorId next_tensor_id() {
  static std::atomic<TensorId> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

const char* saved_kind_name(SavedKind k) {
  switch (k) {
    case SavedKind::FullMap: return "full_map";
    case SavedKind::Mask1: return "mask1";
    case SavedKind::Mask2: return "mask2";
    case SavedKind::SmallVector: return "small_vector";
    case SavedKind::NormStats: return "norm_stats";
  }
  return "?";
}

int saved_bit_width(SavedKind kind, DType dtype) {
  switch (kind) {
    case SavedKind::Mask1: return 1;
    case SavedKind::Mask2: return 2;
    default: return dtype == DType::F64 ? 64 : 32;
  }
}

std::int64_t saved_bytes_for(SavedKind kind, DType dtype, std::int64_t elements) {
  return (elements * saved_bit_width(kind, dtype) + 7) / 8;
}

void GradSink::accumulate(const Parameter& p, const Tensor& g) {
  if (!p.trainable) return;
  if (g.shape() != p.value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match " +
                     p.name + " " + shape_str(p.value.shape()));
  }
  auto it = grads_.find(p.name);
  if (it == grads_.end()) {
    grads_.emplace(p.name, g);
  } else {
    add_into(it->second, g);
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape() || dst.dtype() != src.dtype()) {
    throw ShapeError("add_into: mismatched tensors " + shape_str(dst.shape()) + " vs " +
                     shape_str(src.shape()));
  }
  if (dst.dtype() == DType::F32) {
    auto d = dst.span<float>();
    auto s = src.span<float>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  } else {
    auto d = dst.span<double>();
    auto s = src.span<double>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  }
}

SavedRef Tape::save(const Var& v, SavedKind kind) {
  if (auto it = saved_index_.find(v.id); it != saved_index_.end()) {
    ++refcount_[it->second];
    return SavedRef{it->second};
  }
  const auto& t = v.value();
  SavedBuffer buf{v.id, kind, t.numel(), saved_bytes_for(kind, t.dtype(), t.numel()),
                  scope_};
  saved_.push_back(buf);
  payloads_.push_back(v.data);
  refcount_.push_back(1);
  live_bytes_ += buf.bytes;
  saved_index_.emplace(v.id, saved_.size() - 1);
  return SavedRef{saved_.size() - 1};
}

SavedRef Tape::save_new(Tensor t, SavedKind kind) {
  return save(Var::make(std::move(t)), kind);
}

const Tensor& Tape::saved(SavedRef ref) const {
  if (ref.index >= payloads_.size() || !payloads_[ref.index]) {
    throw StateError("saved buffer missing or already released");
  }
  return *payloads_[ref.index];
}

void Tape::note_temp_bytes(std::int64_t bytes) {
  auto& slot = temp_[scope_];
  if (bytes > slot) slot = bytes;
}

void Tape::register_param(const Parameter& p) {
  if (!p.trainable) return;
  for (auto* q : params_) {
    if (q == &p) return;
  }
  params_.push_back(&p);
}

void Tape::record(Node node) {
  if (finished_) throw StateError("cannot record onto a tape after backward");
  if (node.layer_id.empty()) node.layer_id = scope_;
  nodes_.push_back(std::move(node));
}

std::int64_t Tape::saved_bytes() const {
  std::int64_t total = 0;
  for (const auto& b : saved_) total += b.bytes;
  return total;
}

std::map<std::string, std::int64_t> Tape::saved_bytes_by_layer() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& b : saved_) out[b.layer_id] += b.bytes;
  return out;
}

GradMap Tape::backward(const Var& loss) {
  if (loss.value().numel() != 1) {
    throw ShapeError("loss must be a scalar, got shape " + shape_str(loss.value().shape()));
  }
  return backward(loss, Tensor::full(loss.value().shape(), loss.value().dtype(), 1.0));
}

GradMap Tape::backward(const Var& output, const Tensor& seed) {
  if (finished_) throw StateError("backward already ran on this tape");
  if (seed.shape() != output.value().shape()) {
    throw ShapeError("seed gradient shape does not match output");
  }
  finished_ = true;

  GradMap grads;
  GradSink sink(grads);
  std::unordered_map<TensorId, Tensor> pending;
  if (output.requires_grad) pending.emplace(output.id, seed);

  std::unordered_set<TensorId> produced;
  for (const auto& n : nodes_) produced.insert(n.output);

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = *it;
    auto g = pending.find(node.output);
    if (g != pending.end()) {
      const Tensor grad_out = std::move(g->second);
      pending.erase(g);
      auto in_grads = node.backward(grad_out, sink);
      for (std::size_t i = 0; i < node.inputs.size() && i < in_grads.size(); ++i) {
        const Var& in = node.inputs[i];
        if (!in.requires_grad || !in_grads[i]) continue;
        auto slot = pending.find(in.id);
        if (slot == pending.end()) {
          pending.emplace(in.id, std::move(*in_grads[i]));
        } else {
          add_into(slot->second, *in_grads[i]);
        }
      }
    }
    for (auto ref : node.saved) {
      if (--refcount_[ref.index] == 0 && payloads_[ref.index]) {
        payloads_[ref.index].reset();
        live_bytes_ -= saved_[ref.index].bytes;
      }
    }
    node.backward = nullptr;
  }

  // Whatever is left belongs to leaves (vars not produced by any node).
  for (auto& [id, t] : pending) {
    if (!produced.count(id)) leaf_grads_.emplace(id, std::move(t));
  }
  for (const auto* p : params_) {
    if (!grads.count(p->name)) grads.emplace(p->name, Tensor::zeros(p->value.shape(), p->value.dtype() == DType::F64 ? DType::F64 : DType::F32));
  }
  return grads;
}

std::optional<Tensor> Tape::grad_of(const Var& v) const {
  auto it = leaf_grads_.find(v.id);
  if (it == leaf_grads_.end()) return std::nullopt;
  return it->second;
}

}  // namespace mobiletl
