/* Copyright 2026 The ArrayFlow Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace arrayflow {

enum class DType { kF64, kF32, kI64, kBool };

using Shape = std::vector<std::int64_t>;

inline constexpr int kMaxRank = 8;

std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

bool is_floating(DType dtype);
std::size_t dtype_size(DType dtype);

/// Result type of mixing two operand types: Bool < I64 < F32 < F64.
DType promote(DType a, DType b);

/// Rounds or truncates a double-precision carrier value into the domain of
/// `dtype`. All array values are carried as doubles; F32 values are kept
/// exactly representable as float.
double cast_value(DType dtype, double value);

std::int64_t element_count(std::span<const std::int64_t> shape);
std::vector<std::int64_t> row_major_strides(std::span<const std::int64_t> shape);
std::string shape_string(std::span<const std::int64_t> shape);

/// Dense row-major host array.
struct NdArray {
  Shape shape;
  DType dtype = DType::kF64;
  std::vector<double> data;

  NdArray() = default;
  NdArray(Shape s, DType dt);
  NdArray(Shape s, DType dt, std::vector<double> values);

  static NdArray scalar(double value, DType dtype = DType::kF64);
  static NdArray linspace(double start, double stop, std::int64_t count);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::size_t bytes() const { return data.size() * dtype_size(dtype); }

  friend bool operator==(const NdArray&, const NdArray&) = default;
};

/// True when every element of `a` and `b` agrees to within `rel_tol`
/// relative error. NaNs compare equal to NaNs; infinities must match exactly.
bool allclose(const NdArray& a, const NdArray& b, double rel_tol);

/// Bitwise comparison of shapes, dtypes and element bit patterns.
bool bitwise_equal(const NdArray& a, const NdArray& b);

std::string format_double(double value);
std::string array_string(const NdArray& array);

}  // namespace arrayflow
