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

#include <span>
#include <string_view>

#include "arrayflow/types.hpp"

namespace arrayflow {

/// Scalar operators shared by index-lambda expressions and the loop IR.
enum class OpCode {
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,
  kMin,
  kMax,
  kLt,
  kLe,
  kGt,
  kGe,
  kEq,
  kNe,
  kFloorDiv,
  kMod,
  kNeg,
  kAbs,
  kSqrt,
  kExp,
  kLog,
  kWhere,
};

int arity(OpCode op);
std::string_view op_name(OpCode op);
OpCode parse_op(std::string_view name);
bool is_comparison(OpCode op);

/// Result type of `op` applied to operands of the given types. For kWhere the
/// first operand is the condition.
DType result_dtype(OpCode op, std::span<const DType> operands);

/// Evaluates a unary or binary operator and casts into `result`. kWhere is
/// not handled here (it selects lazily).
double apply_op(OpCode op, DType result, double a, double b = 0.0);

}  // namespace arrayflow
