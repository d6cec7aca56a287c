// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "mobiletl/ops.hpp"

namespace mobiletl {

namespace {

template <class F>
decltype(auto) by_dtype(DType dt, F&& f) {
  if (dt == DType::F32) return f(float{});
  if (dt == DType::F64) return f(double{});
  throw ValueError(std::string("kernel needs f32 or f64, got ") + dtype_name(dt));
}

struct ChannelLayout {
  std::int64_t outer, channels, inner;
};

ChannelLayout channel_layout(const Tensor& x, std::int64_t C) {
  if (x.rank() < 2) throw ShapeError("batch norm input needs a channel dimension");
  if (x.dim(1) != C) {
    throw ShapeError("channel mismatch: input has " + std::to_string(x.dim(1)) +
                     ", parameters have " + std::to_string(C));
  }
  return {x.dim(0), C, x.numel() / (x.dim(0) * C)};
}

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

// ------------------------------------------------------------ batch norm ---

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& mean, const Tensor& var, double eps) {
  const auto L = channel_layout(x, gamma.numel());
  return by_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor y(x.shape(), x.dtype());
    const T* xp = x.span<T>().data();
    T* yp = y.span<T>().data();
    for (std::int64_t c = 0; c < L.channels; ++c) {
      const double sigma = std::sqrt(var.get(c) + eps);
      const T scale = static_cast<T>(gamma.get(c) / sigma);
      const T shift = static_cast<T>(beta.get(c) - gamma.get(c) * mean.get(c) / sigma);
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) yp[base + i] = xp[base + i] * scale + shift;
      }
    }
    return y;
  });
}

BatchNormTrainOut batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                   double eps) {
  const auto L = channel_layout(x, gamma.numel());
  return by_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    BatchNormTrainOut out{Tensor(x.shape(), x.dtype()), Tensor(x.shape(), x.dtype()),
                          {}, {}, {}};
    out.mean.assign(static_cast<std::size_t>(L.channels), 0.0);
    out.var.assign(static_cast<std::size_t>(L.channels), 0.0);
    out.inv_std.assign(static_cast<std::size_t>(L.channels), 0.0);
    const T* xp = x.span<T>().data();
    T* yp = out.y.template span<T>().data();
    T* hp = out.xhat.template span<T>().data();
    const double m = static_cast<double>(L.outer * L.inner);
    for (std::int64_t c = 0; c < L.channels; ++c) {
      double s = 0.0;
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) s += xp[base + i];
      }
      const double mu = s / m;
      double v = 0.0;
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) {
          const double dlt = xp[base + i] - mu;
          v += dlt * dlt;
        }
      }
      v /= m;
      const double inv = 1.0 / std::sqrt(v + eps);
      const double gm = gamma.get(c);
      const double bt = beta.get(c);
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) {
          const double h = (xp[base + i] - mu) * inv;
          hp[base + i] = static_cast<T>(h);
          yp[base + i] = static_cast<T>(gm * h + bt);
        }
      }
      const auto ci = static_cast<std::size_t>(c);
      out.mean[ci] = mu;
      out.var[ci] = v;
      out.inv_std[ci] = inv;
    }
    return out;
  });
}

BatchNormGrads batch_norm_backward_frozen_stats(const Tensor& grad_y, const Tensor& gamma,
                                                const Tensor& var, double eps,
                                                bool want_grad_x) {
  const auto L = channel_layout(grad_y, gamma.numel());
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    BatchNormGrads g{std::nullopt, std::nullopt, Tensor(gamma.shape(), grad_y.dtype())};
    if (want_grad_x) g.grad_x = Tensor(grad_y.shape(), grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    for (std::int64_t c = 0; c < L.channels; ++c) {
      const T scale = static_cast<T>(gamma.get(c) / std::sqrt(var.get(c) + eps));
      double sb = 0.0;
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) sb += gy[base + i];
        if (g.grad_x) {
          T* gx = g.grad_x->template span<T>().data();
          for (std::int64_t i = 0; i < L.inner; ++i) gx[base + i] = gy[base + i] * scale;
        }
      }
      g.grad_beta.set(c, sb);
    }
    return g;
  });
}

BatchNormGrads batch_norm_backward_train(const Tensor& grad_y, const Tensor& xhat,
                                         const Tensor& gamma,
                                         const std::vector<double>& inv_std, bool want_grad_x) {
  same_shape(grad_y, xhat, "batch norm backward");
  const auto L = channel_layout(grad_y, gamma.numel());
  if (static_cast<std::int64_t>(inv_std.size()) != L.channels) {
    throw StateError("batch statistics missing for training-mode batch norm backward");
  }
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    BatchNormGrads g{std::nullopt, Tensor(gamma.shape(), grad_y.dtype()),
                     Tensor(gamma.shape(), grad_y.dtype())};
    if (want_grad_x) g.grad_x = Tensor(grad_y.shape(), grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    const T* h = xhat.span<T>().data();
    const double m = static_cast<double>(L.outer * L.inner);
    for (std::int64_t c = 0; c < L.channels; ++c) {
      double sb = 0.0;
      double sg = 0.0;
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) {
          sb += gy[base + i];
          sg += gy[base + i] * h[base + i];
        }
      }
      g.grad_beta.set(c, sb);
      g.grad_gamma->set(c, sg);
      if (!g.grad_x) continue;
      T* gx = g.grad_x->template span<T>().data();
      const double k = gamma.get(c) * inv_std[static_cast<std::size_t>(c)] / m;
      for (std::int64_t o = 0; o < L.outer; ++o) {
        const std::int64_t base = (o * L.channels + c) * L.inner;
        for (std::int64_t i = 0; i < L.inner; ++i) {
          gx[base + i] = static_cast<T>(k * (m * gy[base + i] - sb - h[base + i] * sg));
        }
      }
    }
    return g;
  });
}

// ----------------------------------------------------------- activations ---

namespace {

template <class T>
T relu6v(T a) {
  return std::min(std::max(T(0), a), T(6));
}

void check_mode_kind(SavedKind kind, SavedKind expected, const char* op) {
  if (kind != expected) {
    throw StateError(std::string(op) + ": saved buffer kind " + saved_kind_name(kind) +
                     " does not match backward mode (expected " + saved_kind_name(expected) +
                     ")");
  }
}

void check_count(const Tensor& saved, const Tensor& grad, const char* op) {
  if (saved.numel() != grad.numel()) {
    throw ShapeError(std::string(op) + ": saved buffer element count does not match gradient");
  }
}

}  // namespace

ActForward relu6_forward(const Tensor& a, ActBackwardMode mode) {
  return by_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const bool exact = mode == ActBackwardMode::Exact;
    ActForward f{Tensor(a.shape(), a.dtype()),
                 Tensor(a.shape(), exact ? DType::Bit2 : DType::Bit1),
                 exact ? SavedKind::Mask2 : SavedKind::Mask1};
    const T* ap = a.span<T>().data();
    T* yp = f.y.template span<T>().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const T v = ap[i];
      yp[i] = relu6v(v);
      if (exact) {
        // 0: below, 1: inside [0, 6], 2: above
        f.saved.set(i, v < T(0) ? 0 : (v <= T(6) ? 1 : 2));
      } else {
        f.saved.set(i, v >= T(0) ? 1 : 0);
      }
    }
    return f;
  });
}

Tensor relu6_backward(const Tensor& grad_y, const Tensor& saved, SavedKind kind,
                      ActBackwardMode mode) {
  const bool exact = mode == ActBackwardMode::Exact;
  check_mode_kind(kind, exact ? SavedKind::Mask2 : SavedKind::Mask1, "relu6_backward");
  check_count(saved, grad_y, "relu6_backward");
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor g(grad_y.shape(), grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    T* gp = g.span<T>().data();
    for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
      gp[i] = saved.get(i) == 1.0 ? gy[i] : T(0);
    }
    return g;
  });
}

ActForward hardswish_forward(const Tensor& a, ActBackwardMode mode) {
  return by_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const bool exact = mode == ActBackwardMode::Exact;
    ActForward f{Tensor(a.shape(), a.dtype()), exact ? a : Tensor(a.shape(), DType::Bit1),
                 exact ? SavedKind::FullMap : SavedKind::Mask1};
    const T* ap = a.span<T>().data();
    T* yp = f.y.template span<T>().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const T v = ap[i];
      yp[i] = v * relu6v(v + T(3)) / T(6);
      if (!exact) f.saved.set(i, v >= T(0) ? 1 : 0);
    }
    return f;
  });
}

Tensor hardswish_backward(const Tensor& grad_y, const Tensor& saved, SavedKind kind,
                          ActBackwardMode mode) {
  const bool exact = mode == ActBackwardMode::Exact;
  check_mode_kind(kind, exact ? SavedKind::FullMap : SavedKind::Mask1, "hardswish_backward");
  check_count(saved, grad_y, "hardswish_backward");
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor g(grad_y.shape(), grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    T* gp = g.span<T>().data();
    if (exact) {
      const T* ap = saved.span<T>().data();
      for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
        const T v = ap[i];
        // At a = +-3 take the outer one-sided slope, so exact and signed agree on |a| >= 3.
        const T inside = (v > T(-3) && v < T(3)) ? T(1) : T(0);
        gp[i] = gy[i] * (relu6v(v + T(3)) / T(6) + v * inside / T(6));
      }
    } else {
      for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
        gp[i] = saved.get(i) == 1.0 ? gy[i] : T(0);
      }
    }
    return g;
  });
}

ActForward hardsigmoid_forward(const Tensor& a) {
  return by_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ActForward f{Tensor(a.shape(), a.dtype()), Tensor(a.shape(), DType::Bit2),
                 SavedKind::Mask2};
    const T* ap = a.span<T>().data();
    T* yp = f.y.template span<T>().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const T v = ap[i];
      yp[i] = relu6v(v + T(3)) / T(6);
      f.saved.set(i, v < T(-3) ? 0 : (v <= T(3) ? 1 : 2));
    }
    return f;
  });
}

Tensor hardsigmoid_backward(const Tensor& grad_y, const Tensor& mask2) {
  if (mask2.dtype() != DType::Bit2) throw StateError("hardsigmoid_backward needs a Mask2");
  check_count(mask2, grad_y, "hardsigmoid_backward");
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor g(grad_y.shape(), grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    T* gp = g.span<T>().data();
    for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
      gp[i] = mask2.get(i) == 1.0 ? gy[i] / T(6) : T(0);
    }
    return g;
  });
}

ActForward relu_forward(const Tensor& a) {
  return by_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ActForward f{Tensor(a.shape(), a.dtype()), Tensor(a.shape(), a.dtype()),
                 SavedKind::SmallVector};
    const T* ap = a.span<T>().data();
    T* yp = f.y.template span<T>().data();
    T* mp = f.saved.template span<T>().data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const bool on = ap[i] > T(0);
      yp[i] = on ? ap[i] : T(0);
      mp[i] = on ? T(1) : T(0);
    }
    return f;
  });
}

Tensor relu_backward(const Tensor& grad_y, const Tensor& mask) {
  same_shape(grad_y, mask, "relu_backward");
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor g(grad_y.shape(), grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    const T* mp = mask.span<T>().data();
    T* gp = g.span<T>().data();
    for (std::int64_t i = 0; i < grad_y.numel(); ++i) gp[i] = gy[i] * mp[i];
    return g;
  });
}

// ------------------------------------------------------------------ linear ---

Tensor linear_forward(const Tensor& x, const Tensor& w_any, const Tensor* b) {
  if (x.rank() != 2 || w_any.rank() != 2 || x.dim(1) != w_any.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w_any.shape()));
  }
  const std::int64_t B = x.dim(0), in = x.dim(1), out = w_any.dim(0);
  if (b != nullptr && b->numel() != out) throw ShapeError("linear: bias size mismatch");
  const Tensor w = dequantize_as(w_any, x.dtype());
  return by_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor y({B, out}, x.dtype());
    const T* xp = x.span<T>().data();
    const T* wp = w.span<T>().data();
    T* yp = y.span<T>().data();
    for (std::int64_t n = 0; n < B; ++n) {
      for (std::int64_t o = 0; o < out; ++o) {
        T s = b ? static_cast<T>(b->get(o)) : T(0);
        for (std::int64_t i = 0; i < in; ++i) s += xp[n * in + i] * wp[o * in + i];
        yp[n * out + o] = s;
      }
    }
    return y;
  });
}

LinearGrads linear_backward(const Tensor& grad_y, const Tensor* x, const Tensor& w_any,
                            bool want_grad_x, bool want_grad_w, bool want_grad_b) {
  const std::int64_t out = w_any.dim(0), in = w_any.dim(1);
  if (grad_y.rank() != 2 || grad_y.dim(1) != out) throw ShapeError("linear: grad_y mismatch");
  if (want_grad_w && x == nullptr) {
    throw StateError("linear weight gradient requested but the input was not saved");
  }
  const std::int64_t B = grad_y.dim(0);
  const Tensor w = dequantize_as(w_any, grad_y.dtype());
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    LinearGrads g;
    const T* gy = grad_y.span<T>().data();
    const T* wp = w.span<T>().data();
    if (want_grad_x) {
      g.grad_x = Tensor({B, in}, grad_y.dtype());
      T* gx = g.grad_x->template span<T>().data();
      for (std::int64_t n = 0; n < B; ++n) {
        for (std::int64_t o = 0; o < out; ++o) {
          const T v = gy[n * out + o];
          for (std::int64_t i = 0; i < in; ++i) gx[n * in + i] += v * wp[o * in + i];
        }
      }
    }
    if (want_grad_w) {
      g.grad_w = Tensor({out, in}, grad_y.dtype());
      T* gw = g.grad_w->template span<T>().data();
      const T* xp = x->span<T>().data();
      for (std::int64_t n = 0; n < B; ++n) {
        for (std::int64_t o = 0; o < out; ++o) {
          const T v = gy[n * out + o];
          for (std::int64_t i = 0; i < in; ++i) gw[o * in + i] += v * xp[n * in + i];
        }
      }
    }
    if (want_grad_b) {
      g.grad_b = Tensor({out}, grad_y.dtype());
      T* gb = g.grad_b->template span<T>().data();
      for (std::int64_t n = 0; n < B; ++n) {
        for (std::int64_t o = 0; o < out; ++o) gb[o] += gy[n * out + o];
      }
    }
    return g;
  });
}

// ------------------------------------------------------ pooling and misc ---

Tensor global_avg_pool_forward(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects [B,C,H,W]");
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  return by_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor y({B, C}, x.dtype());
    const T* xp = x.span<T>().data();
    T* yp = y.span<T>().data();
    for (std::int64_t i = 0; i < B * C; ++i) {
      T s = 0;
      for (std::int64_t k = 0; k < HW; ++k) s += xp[i * HW + k];
      yp[i] = s / static_cast<T>(HW);
    }
    return y;
  });
}

Tensor global_avg_pool_backward(const Tensor& grad_y, const Shape& x_shape) {
  if (x_shape.size() != 4 || grad_y.shape() != Shape{x_shape[0], x_shape[1]}) {
    throw ShapeError("global_avg_pool backward shape mismatch");
  }
  const std::int64_t HW = x_shape[2] * x_shape[3];
  return by_dtype(grad_y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor g(x_shape, grad_y.dtype());
    const T* gy = grad_y.span<T>().data();
    T* gp = g.span<T>().data();
    for (std::int64_t i = 0; i < grad_y.numel(); ++i) {
      const T v = gy[i] / static_cast<T>(HW);
      for (std::int64_t k = 0; k < HW; ++k) gp[i * HW + k] = v;
    }
    return g;
  });
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "residual_add");
  Tensor y = a;
  add_into(y, b);
  return y;
}

Tensor channel_scale(const Tensor& x, const Tensor& gate) {
  if (x.rank() != 4 || gate.shape() != Shape{x.dim(0), x.dim(1)}) {
    throw ShapeError("channel_scale: gate " + shape_str(gate.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  const std::int64_t HW = x.dim(2) * x.dim(3);
  return by_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor y(x.shape(), x.dtype());
    const T* xp = x.span<T>().data();
    const T* gp = gate.span<T>().data();
    T* yp = y.span<T>().data();
    for (std::int64_t i = 0; i < gate.numel(); ++i) {
      for (std::int64_t k = 0; k < HW; ++k) yp[i * HW + k] = xp[i * HW + k] * gp[i];
    }
    return y;
  });
}

CrossEntropyOut softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross entropy expects [B,K] logits");
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("label count does not match batch size");
  }
  for (int l : labels) {
    if (l < 0 || l >= K) {
      throw ValueError("label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
    }
  }
  return by_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    CrossEntropyOut out{Tensor({1}, logits.dtype()), Tensor(logits.shape(), logits.dtype())};
    const T* lp = logits.span<T>().data();
    T* pp = out.probs.template span<T>().data();
    double total = 0.0;
    for (std::int64_t n = 0; n < B; ++n) {
      const T* row = lp + n * K;
      const double mx = *std::max_element(row, row + K);
      double z = 0.0;
      for (std::int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
      for (std::int64_t k = 0; k < K; ++k) {
        pp[n * K + k] = static_cast<T>(std::exp(row[k] - mx) / z);
      }
      total += std::log(z) + mx - row[labels[static_cast<std::size_t>(n)]];
    }
    out.loss.set(0, total / static_cast<double>(B));
    return out;
  });
}

Tensor softmax_cross_entropy_backward(const Tensor& probs, const std::vector<int>& labels,
                                      double grad_loss) {
  const std::int64_t B = probs.dim(0), K = probs.dim(1);
  return by_dtype(probs.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Tensor g(probs.shape(), probs.dtype());
    const T* pp = probs.span<T>().data();
    T* gp = g.span<T>().data();
    const T scale = static_cast<T>(grad_loss / static_cast<double>(B));
    for (std::int64_t n = 0; n < B; ++n) {
      for (std::int64_t k = 0; k < K; ++k) {
        const T onehot = labels[static_cast<std::size_t>(n)] == k ? T(1) : T(0);
        gp[n * K + k] = (pp[n * K + k] - onehot) * scale;
      }
    }
    return g;
  });
}

}  // namespace mobiletl
