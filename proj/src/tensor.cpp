// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mobiletl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

namespace mobiletl {

int dtype_bits(DType dt) {
  switch (dt) {
    case DType::F32: return 32;
    case DType::F64: return 64;
    case DType::I8: return 8;
    case DType::Bit1: return 1;
    case DType::Bit2: return 2;
  }
  throw ValueError("unknown dtype");
}

const char* dtype_name(DType dt) {
  switch (dt) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::I8: return "i8";
    case DType::Bit1: return "bit1";
    case DType::Bit2: return "bit2";
  }
  return "?";
}

bool is_float(DType dt) { return dt == DType::F32 || dt == DType::F64; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("shape must have at least one dimension");
  for (auto d : shape) {
    if (d < 1) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  check_shape(shape_);
  numel_ = shape_numel(shape_);
  const auto bits = static_cast<std::int64_t>(dtype_bits(dtype_)) * numel_;
  storage_.assign(static_cast<std::size_t>((bits + 7) / 8), std::byte{0});
}

namespace {

void check_fill(DType dt, double v) {
  switch (dt) {
    case DType::F32:
    case DType::F64:
      return;
    case DType::I8:
      if (v < -127 || v > 127 || v != std::floor(v)) {
        throw ValueError("i8 fill value out of range");
      }
      return;
    case DType::Bit1:
      if (v != 0.0 && v != 1.0) throw ValueError("bit1 fill must be 0 or 1");
      return;
    case DType::Bit2:
      if (v < 0 || v > 3 || v != std::floor(v)) {
        throw ValueError("bit2 fill must be in {0,1,2,3}");
      }
      return;
  }
}

}  // namespace

Tensor Tensor::full(const Shape& shape, DType dtype, double fill) {
  check_fill(dtype, fill);
  Tensor t(shape, dtype);
  if (fill == 0.0) return t;
  switch (dtype) {
    case DType::F32:
      for (auto& x : t.span<float>()) x = static_cast<float>(fill);
      break;
    case DType::F64:
      for (auto& x : t.span<double>()) x = fill;
      break;
    default:
      for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, fill);
  }
  return t;
}

Tensor Tensor::rand_normal(const Shape& shape, std::uint64_t seed, double mean,
                           double stddev, DType dtype) {
  if (!(stddev >= 0.0)) throw ValueError("standard deviation must be >= 0");
  if (!is_float(dtype)) throw ValueError("rand_normal needs a float dtype");
  Tensor t(shape, dtype);
  if (stddev == 0.0) return full(shape, dtype, mean);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mean, stddev);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

Tensor Tensor::rand_uniform(const Shape& shape, std::uint64_t seed, double lo,
                            double hi, DType dtype) {
  if (!(hi >= lo)) throw ValueError("uniform bounds reversed");
  Tensor t(shape, dtype);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

Tensor Tensor::from_values(const Shape& shape, const std::vector<double>& vals,
                           DType dtype) {
  Tensor t(shape, dtype);
  if (static_cast<std::int64_t>(vals.size()) != t.numel()) {
    throw ShapeError("value count does not match shape " + shape_str(shape));
  }
  for (std::size_t i = 0; i < vals.size(); ++i) {
    t.set(static_cast<std::int64_t>(i), vals[i]);
  }
  return t;
}

template <class T>
std::span<T> Tensor::span() {
  constexpr DType want = std::is_same_v<T, float>    ? DType::F32
                         : std::is_same_v<T, double> ? DType::F64
                                                     : DType::I8;
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double> ||
                std::is_same_v<T, std::int8_t>);
  if (dtype_ != want) {
    throw StateError(std::string("tensor dtype is ") + dtype_name(dtype_) +
                     ", requested " + dtype_name(want));
  }
  return {reinterpret_cast<T*>(storage_.data()), static_cast<std::size_t>(numel_)};
}

template <class T>
std::span<const T> Tensor::span() const {
  auto s = const_cast<Tensor*>(this)->span<T>();
  return {s.data(), s.size()};
}

template std::span<float> Tensor::span<float>();
template std::span<double> Tensor::span<double>();
template std::span<std::int8_t> Tensor::span<std::int8_t>();
template std::span<const float> Tensor::span<float>() const;
template std::span<const double> Tensor::span<double>() const;
template std::span<const std::int8_t> Tensor::span<std::int8_t>() const;

double Tensor::get(std::int64_t i) const {
  switch (dtype_) {
    case DType::F32: return reinterpret_cast<const float*>(storage_.data())[i];
    case DType::F64: return reinterpret_cast<const double*>(storage_.data())[i];
    case DType::I8:
      return static_cast<double>(reinterpret_cast<const std::int8_t*>(storage_.data())[i]) *
             scale_;
    case DType::Bit1: {
      auto b = std::to_integer<unsigned>(storage_[static_cast<std::size_t>(i >> 3)]);
      return (b >> (i & 7)) & 1u;
    }
    case DType::Bit2: {
      auto b = std::to_integer<unsigned>(storage_[static_cast<std::size_t>(i >> 2)]);
      return (b >> ((i & 3) * 2)) & 3u;
    }
  }
  return 0.0;
}

void Tensor::set(std::int64_t i, double v) {
  switch (dtype_) {
    case DType::F32:
      reinterpret_cast<float*>(storage_.data())[i] = static_cast<float>(v);
      return;
    case DType::F64:
      reinterpret_cast<double*>(storage_.data())[i] = v;
      return;
    case DType::I8:
      reinterpret_cast<std::int8_t*>(storage_.data())[i] = static_cast<std::int8_t>(v);
      return;
    case DType::Bit1: {
      auto& b = storage_[static_cast<std::size_t>(i >> 3)];
      const auto bit = std::byte{1} << static_cast<int>(i & 7);
      b = v != 0.0 ? (b | bit) : (b & ~bit);
      return;
    }
    case DType::Bit2: {
      auto& b = storage_[static_cast<std::size_t>(i >> 2)];
      const int sh = static_cast<int>((i & 3) * 2);
      b = (b & ~(std::byte{3} << sh)) |
          (std::byte{static_cast<unsigned char>(static_cast<unsigned>(v) & 3u)} << sh);
      return;
    }
  }
}

Tensor Tensor::to(DType dtype) const {
  if (!is_float(dtype)) throw ValueError("conversion target must be f32 or f64");
  Tensor out(shape_, dtype);
  if (dtype_ == DType::F32 && dtype == DType::F64) {
    auto src = span<float>();
    auto dst = out.span<double>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
  } else if (dtype_ == DType::F64 && dtype == DType::F32) {
    auto src = span<double>();
    auto dst = out.span<float>();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
  } else if (dtype_ == dtype) {
    out.storage_ = storage_;
  } else {
    for (std::int64_t i = 0; i < numel_; ++i) out.set(i, get(i));
  }
  return out;
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> v(static_cast<std::size_t>(numel_));
  for (std::int64_t i = 0; i < numel_; ++i) v[static_cast<std::size_t>(i)] = get(i);
  return v;
}

Tensor Tensor::reshaped(const Shape& shape) const {
  check_shape(shape);
  if (shape_numel(shape) != numel_) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = shape;
  return t;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return shape_ == other.shape_ && dtype_ == other.dtype_ &&
         storage_ == other.storage_ &&
         (dtype_ != DType::I8 || scale_ == other.scale_);
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double v = t.get(i);
    s += v * v;
  }
  return std::sqrt(s);
}

}  // namespace mobiletl
