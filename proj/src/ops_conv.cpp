// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <vector>

#include "mobiletl/ops.hpp"
#include "mobiletl/parallel.hpp"

namespace mobiletl {

namespace {

struct ConvDims {
  std::int64_t B, Cin, H, W, Cout, K, Ho, Wo, cin_g, cout_g;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, const ConvGeometry& g) {
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got " + shape_str(xs) + " and " +
                     shape_str(ws));
  }
  if (g.groups < 1 || g.stride < 1 || g.padding < 0) {
    throw ShapeError("invalid conv geometry");
  }
  ConvDims d{};
  d.B = xs[0];
  d.Cin = xs[1];
  d.H = xs[2];
  d.W = xs[3];
  d.Cout = ws[0];
  d.K = ws[2];
  if (ws[2] != ws[3]) throw ShapeError("conv2d expects square kernels");
  if (d.Cin % g.groups != 0 || d.Cout % g.groups != 0) {
    throw ShapeError("channels not divisible by groups");
  }
  d.cin_g = d.Cin / g.groups;
  d.cout_g = d.Cout / g.groups;
  if (ws[1] != d.cin_g) {
    throw ShapeError("weight input-channel dim " + std::to_string(ws[1]) + " != Cin/groups " +
                     std::to_string(d.cin_g));
  }
  d.Ho = conv_out_dim(d.H, d.K, g.stride, g.padding);
  d.Wo = conv_out_dim(d.W, d.K, g.stride, g.padding);
  return d;
}

bool pointwise(const ConvDims& d, const ConvGeometry& g) {
  return d.K == 1 && g.stride == 1 && g.padding == 0;
}

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(const T* A, const T* Bm, T* C, std::int64_t M, std::int64_t N, std::int64_t K) {
  for (std::int64_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      if (a == T(0)) continue;
      const T* b = Bm + k * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(const T* A, const T* Bm, T* C, std::int64_t M, std::int64_t N, std::int64_t K) {
  for (std::int64_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::int64_t j = 0; j < N; ++j) {
      const T* b = Bm + j * K;
      T s = 0;
      for (std::int64_t k = 0; k < K; ++k) s += a[k] * b[k];
      C[i * N + j] += s;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(const T* A, const T* Bm, T* C, std::int64_t M, std::int64_t N, std::int64_t K) {
  for (std::int64_t k = 0; k < K; ++k) {
    const T* b = Bm + k * N;
    for (std::int64_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T(0)) continue;
      T* c = C + i * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

template <class T>
void im2col(const T* x, T* col, const ConvDims& d, const ConvGeometry& g) {
  const std::int64_t P = d.Ho * d.Wo;
  for (std::int64_t c = 0; c < d.Cin; ++c) {
    for (std::int64_t kh = 0; kh < d.K; ++kh) {
      for (std::int64_t kw = 0; kw < d.K; ++kw) {
        T* row = col + ((c * d.K + kh) * d.K + kw) * P;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + kh;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kw;
            row[oh * d.Wo + ow] = (ih >= 0 && ih < d.H && iw >= 0 && iw < d.W)
                                      ? x[(c * d.H + ih) * d.W + iw]
                                      : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, T* x, const ConvDims& d, const ConvGeometry& g) {
  const std::int64_t P = d.Ho * d.Wo;
  for (std::int64_t c = 0; c < d.Cin; ++c) {
    for (std::int64_t kh = 0; kh < d.K; ++kh) {
      for (std::int64_t kw = 0; kw < d.K; ++kw) {
        const T* row = col + ((c * d.K + kh) * d.K + kw) * P;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= d.H) continue;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= d.W) continue;
            x[(c * d.H + ih) * d.W + iw] += row[oh * d.Wo + ow];
          }
        }
      }
    }
  }
}

// Direct loops for grouped (including depthwise) convolution of one sample.
template <class T>
void grouped_forward(const T* x, const T* w, T* y, const ConvDims& d, const ConvGeometry& g) {
  for (std::int64_t co = 0; co < d.Cout; ++co) {
    const std::int64_t grp = co / d.cout_g;
    T* yo = y + co * d.Ho * d.Wo;
    for (std::int64_t ci = 0; ci < d.cin_g; ++ci) {
      const T* xi = x + (grp * d.cin_g + ci) * d.H * d.W;
      const T* wk = w + (co * d.cin_g + ci) * d.K * d.K;
      for (std::int64_t kh = 0; kh < d.K; ++kh) {
        for (std::int64_t kw = 0; kw < d.K; ++kw) {
          const T wv = wk[kh * d.K + kw];
          for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
            const std::int64_t ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= d.H) continue;
            for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
              const std::int64_t iw = ow * g.stride - g.padding + kw;
              if (iw < 0 || iw >= d.W) continue;
              yo[oh * d.Wo + ow] += wv * xi[ih * d.W + iw];
            }
          }
        }
      }
    }
  }
}

template <class T>
void grouped_backward(const T* gy, const T* x, const T* w, T* gx, T* gw, const ConvDims& d,
                      const ConvGeometry& g) {
  for (std::int64_t co = 0; co < d.Cout; ++co) {
    const std::int64_t grp = co / d.cout_g;
    const T* go = gy + co * d.Ho * d.Wo;
    for (std::int64_t ci = 0; ci < d.cin_g; ++ci) {
      const std::int64_t cin = grp * d.cin_g + ci;
      const T* wk = w + (co * d.cin_g + ci) * d.K * d.K;
      T* gwk = gw ? gw + (co * d.cin_g + ci) * d.K * d.K : nullptr;
      for (std::int64_t kh = 0; kh < d.K; ++kh) {
        for (std::int64_t kw = 0; kw < d.K; ++kw) {
          const T wv = wk[kh * d.K + kw];
          T acc = 0;
          for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
            const std::int64_t ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= d.H) continue;
            for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
              const std::int64_t iw = ow * g.stride - g.padding + kw;
              if (iw < 0 || iw >= d.W) continue;
              const T gv = go[oh * d.Wo + ow];
              if (gx) gx[(cin * d.H + ih) * d.W + iw] += gv * wv;
              if (gwk) acc += gv * x[(cin * d.H + ih) * d.W + iw];
            }
          }
          if (gwk) gwk[kh * d.K + kw] += acc;
        }
      }
    }
  }
}

template <class T>
Tensor conv_forward_t(const Tensor& x, const Tensor& w_any, const ConvGeometry& g) {
  const ConvDims d = conv_dims(x.shape(), w_any.shape(), g);
  const Tensor w = dequantize_as(w_any, x.dtype());
  Tensor y({d.B, d.Cout, d.Ho, d.Wo}, x.dtype());
  const T* xp = x.span<T>().data();
  const T* wp = w.span<T>().data();
  T* yp = y.span<T>().data();
  const std::int64_t P = d.Ho * d.Wo;
  const std::int64_t in_sz = d.Cin * d.H * d.W;
  const std::int64_t out_sz = d.Cout * P;
  parallel_for(d.B, [&](std::int64_t b) {
    const T* xb = xp + b * in_sz;
    T* yb = yp + b * out_sz;
    if (g.groups != 1) {
      grouped_forward(xb, wp, yb, d, g);
    } else if (pointwise(d, g)) {
      gemm_nn(wp, xb, yb, d.Cout, P, d.Cin);
    } else {
      const std::int64_t R = d.Cin * d.K * d.K;
      std::vector<T> col(static_cast<std::size_t>(R * P));
      im2col(xb, col.data(), d, g);
      gemm_nn(wp, col.data(), yb, d.Cout, P, R);
    }
  });
  return y;
}

template <class T>
ConvGrads conv_backward_t(const Tensor& gy, const Tensor* x, const Tensor& w_any,
                          const ConvGeometry& g, const Shape& x_shape, bool want_gx,
                          bool want_gw) {
  const ConvDims d = conv_dims(x_shape, w_any.shape(), g);
  if (gy.shape() != Shape{d.B, d.Cout, d.Ho, d.Wo}) {
    throw ShapeError("conv2d grad_y shape " + shape_str(gy.shape()) + " does not match output");
  }
  if (want_gw && x == nullptr) {
    throw StateError("weight gradient requested but the conv input was not saved");
  }
  if (x != nullptr && x->shape() != x_shape) throw ShapeError("saved input has wrong shape");
  const Tensor w = dequantize_as(w_any, gy.dtype());
  ConvGrads out;
  if (want_gx) out.grad_x = Tensor(x_shape, gy.dtype());
  if (want_gw) out.grad_w = Tensor(w_any.shape(), gy.dtype());
  if (!want_gx && !want_gw) return out;

  const T* gyp = gy.span<T>().data();
  const T* wp = w.span<T>().data();
  const T* xp = x ? x->span<T>().data() : nullptr;
  T* gxp = want_gx ? out.grad_x->span<T>().data() : nullptr;
  T* gwp = want_gw ? out.grad_w->span<T>().data() : nullptr;
  const std::int64_t P = d.Ho * d.Wo;
  const std::int64_t in_sz = d.Cin * d.H * d.W;
  const std::int64_t out_sz = d.Cout * P;
  const std::int64_t R = d.Cin * d.K * d.K;
  std::vector<T> col;
  std::vector<T> dcol;

  for (std::int64_t b = 0; b < d.B; ++b) {
    const T* gyb = gyp + b * out_sz;
    const T* xb = xp ? xp + b * in_sz : nullptr;
    T* gxb = gxp ? gxp + b * in_sz : nullptr;
    if (g.groups != 1) {
      grouped_backward(gyb, xb, wp, gxb, gwp, d, g);
      continue;
    }
    if (pointwise(d, g)) {
      if (gwp) gemm_nt(gyb, xb, gwp, d.Cout, d.Cin, P);
      if (gxb) gemm_tn(wp, gyb, gxb, d.Cin, P, d.Cout);
      continue;
    }
    if (gwp) {
      col.assign(static_cast<std::size_t>(R * P), T(0));
      im2col(xb, col.data(), d, g);
      gemm_nt(gyb, col.data(), gwp, d.Cout, R, P);
    }
    if (gxb) {
      dcol.assign(static_cast<std::size_t>(R * P), T(0));
      gemm_tn(wp, gyb, dcol.data(), R, P, d.Cout);
      col2im(dcol.data(), gxb, d, g);
    }
  }
  return out;
}

}  // namespace

std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return span / stride + 1;
}

bool conv_uses_im2col(std::int64_t kernel, const ConvGeometry& g) {
  return g.groups == 1 && !(kernel == 1 && g.stride == 1 && g.padding == 0);
}

std::int64_t conv_temp_bytes(const Shape& x_shape, const Shape& w_shape, const ConvGeometry& g,
                             DType dtype) {
  const ConvDims d = conv_dims(x_shape, w_shape, g);
  if (!conv_uses_im2col(d.K, g)) return 0;
  return d.Cin * d.K * d.K * d.Ho * d.Wo * (dtype_bits(dtype) / 8);
}

Tensor dequantize_as(const Tensor& w, DType dtype) {
  if (w.dtype() == dtype) return w;
  if (w.dtype() == DType::I8) {
    Tensor out(w.shape(), dtype);
    const auto q = w.span<std::int8_t>();
    const double s = w.scale();
    for (std::size_t i = 0; i < q.size(); ++i) {
      out.set(static_cast<std::int64_t>(i), static_cast<double>(q[i]) * s);
    }
    return out;
  }
  return w.to(dtype);
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  if (x.dtype() == DType::F32) return conv_forward_t<float>(x, w, g);
  if (x.dtype() == DType::F64) return conv_forward_t<double>(x, w, g);
  throw ValueError("conv2d input must be f32 or f64");
}

ConvGrads conv2d_backward(const Tensor& grad_y, const Tensor* x, const Tensor& w,
                          const ConvGeometry& g, const Shape& x_shape, bool want_grad_x,
                          bool want_grad_w) {
  if (grad_y.dtype() == DType::F32) {
    return conv_backward_t<float>(grad_y, x, w, g, x_shape, want_grad_x, want_grad_w);
  }
  if (grad_y.dtype() == DType::F64) {
    return conv_backward_t<double>(grad_y, x, w, g, x_shape, want_grad_x, want_grad_w);
  }
  throw ValueError("conv2d gradient must be f32 or f64");
}

}  // namespace mobiletl
