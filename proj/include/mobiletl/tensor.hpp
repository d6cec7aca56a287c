// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mobiletl/errors.hpp"

namespace mobiletl {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I8 = 2, Bit1 = 3, Bit2 = 4 };

/// Bits per stored element.
int dtype_bits(DType dt);
const char* dtype_name(DType dt);
bool is_float(DType dt);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
/// Throws ShapeError for an empty shape or any dimension < 1.
void check_shape(const Shape& shape);

/// Dense row-major tensor. Bit1/Bit2 elements are packed LSB-first and the
/// buffer is padded to a whole byte. I8 tensors carry a dequantization scale.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);

  static Tensor full(const Shape& shape, DType dtype, double fill);
  static Tensor zeros(const Shape& shape, DType dtype = DType::F32) {
    return full(shape, dtype, 0.0);
  }
  static Tensor rand_normal(const Shape& shape, std::uint64_t seed,
                            double mean, double stddev,
                            DType dtype = DType::F32);
  static Tensor rand_uniform(const Shape& shape, std::uint64_t seed, double lo,
                             double hi, DType dtype = DType::F32);
  static Tensor from_values(const Shape& shape, const std::vector<double>& vals,
                            DType dtype = DType::F32);

  bool empty() const { return storage_.empty() && shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  DType dtype() const { return dtype_; }
  std::int64_t numel() const { return numel_; }
  std::size_t nbytes() const { return storage_.size(); }

  float scale() const { return scale_; }
  void set_scale(float s) { scale_ = s; }

  template <class T>
  std::span<T> span();
  template <class T>
  std::span<const T> span() const;

  std::span<std::byte> bytes() { return storage_; }
  std::span<const std::byte> bytes() const { return storage_; }

  /// Generic element access (dequantized for I8, 0..3 for masks).
  double get(std::int64_t i) const;
  void set(std::int64_t i, double v);

  /// Copy with a different float dtype (F32 <-> F64). I8 is dequantized.
  Tensor to(DType dtype) const;
  std::vector<double> to_vector() const;

  /// Same storage, new shape with equal numel.
  Tensor reshaped(const Shape& shape) const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  DType dtype_ = DType::F32;
  std::int64_t numel_ = 0;
  float scale_ = 1.0f;
  std::vector<std::byte> storage_;
};

/// Frobenius norm of a float tensor.
double frobenius_norm(const Tensor& t);

}  // namespace mobiletl
