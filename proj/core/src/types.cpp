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

#include "arrayflow/types.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "arrayflow/errors.hpp"
#include "arrayflow/scalar_ops.hpp"

namespace arrayflow {

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF64: return "f64";
    case DType::kF32: return "f32";
    case DType::kI64: return "i64";
    case DType::kBool: return "bool";
  }
  return "?";
}

DType parse_dtype(std::string_view name) {
  if (name == "f64" || name == "float64") return DType::kF64;
  if (name == "f32" || name == "float32") return DType::kF32;
  if (name == "i64" || name == "int64") return DType::kI64;
  if (name == "bool") return DType::kBool;
  throw DTypeMismatch("unknown dtype '" + std::string(name) + "'");
}

bool is_floating(DType dtype) { return dtype == DType::kF64 || dtype == DType::kF32; }

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF64: return 8;
    case DType::kF32: return 4;
    case DType::kI64: return 8;
    case DType::kBool: return 1;
  }
  return 0;
}

DType promote(DType a, DType b) {
  auto rank = [](DType d) {
    switch (d) {
      case DType::kBool: return 0;
      case DType::kI64: return 1;
      case DType::kF32: return 2;
      case DType::kF64: return 3;
    }
    return 3;
  };
  return rank(a) >= rank(b) ? a : b;
}

double cast_value(DType dtype, double value) {
  switch (dtype) {
    case DType::kF64: return value;
    case DType::kF32: return static_cast<double>(static_cast<float>(value));
    case DType::kI64:
      if (!std::isfinite(value)) return 0.0;
      return std::trunc(value);
    case DType::kBool: return value != 0.0 ? 1.0 : 0.0;
  }
  return value;
}

std::int64_t element_count(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<std::int64_t> row_major_strides(std::span<const std::int64_t> shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

std::string shape_string(std::span<const std::int64_t> shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

NdArray::NdArray(Shape s, DType dt)
    : shape(std::move(s)), dtype(dt), data(static_cast<std::size_t>(element_count(shape)), 0.0) {}

NdArray::NdArray(Shape s, DType dt, std::vector<double> values)
    : shape(std::move(s)), dtype(dt), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != element_count(shape)) {
    throw ShapeMismatch("array of shape " + shape_string(shape) + " given " +
                        std::to_string(data.size()) + " values");
  }
  for (auto& v : data) v = cast_value(dtype, v);
}

NdArray NdArray::scalar(double value, DType dtype) { return NdArray({}, dtype, {value}); }

NdArray NdArray::linspace(double start, double stop, std::int64_t count) {
  std::vector<double> values(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    values[i] = count == 1 ? start
                           : start + (stop - start) * static_cast<double>(i) /
                                         static_cast<double>(count - 1);
  }
  return NdArray({count}, DType::kF64, std::move(values));
}

bool allclose(const NdArray& a, const NdArray& b, double rel_tol) {
  if (a.shape != b.shape || a.data.size() != b.data.size()) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double x = a.data[i];
    const double y = b.data[i];
    if (std::isnan(x) || std::isnan(y)) {
      if (std::isnan(x) != std::isnan(y)) return false;
      continue;
    }
    if (x == y) continue;
    if (std::isinf(x) || std::isinf(y)) return false;
    if (std::abs(x - y) > rel_tol * std::max(std::abs(x), std::abs(y))) return false;
  }
  return true;
}

bool bitwise_equal(const NdArray& a, const NdArray& b) {
  if (a.shape != b.shape || a.dtype != b.dtype || a.data.size() != b.data.size()) return false;
  return a.data.empty() ||
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  std::string s(buf, end);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::string array_string(const NdArray& array) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < array.data.size(); ++i) {
    if (i) os << ", ";
    const double v = array.data[i];
    if (array.dtype == DType::kI64) {
      os << static_cast<std::int64_t>(v);
    } else if (array.dtype == DType::kBool) {
      os << (v != 0.0 ? "true" : "false");
    } else {
      os << format_double(v);
    }
  }
  os << "]";
  return os.str();
}

std::string CommKey::to_string() const {
  return "(source=" + std::to_string(source) + ", dest=" + std::to_string(dest) +
         ", tag=" + std::to_string(tag) + ")";
}

}  // namespace arrayflow
