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

#include "arrayflow/scalar_ops.hpp"

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "arrayflow/errors.hpp"

namespace arrayflow {
namespace {

constexpr std::array<std::pair<OpCode, std::string_view>, 21> kNames = {{
    {OpCode::kAdd, "add"},     {OpCode::kSub, "sub"},   {OpCode::kMul, "mul"},
    {OpCode::kDiv, "div"},     {OpCode::kPow, "pow"},   {OpCode::kMin, "min"},
    {OpCode::kMax, "max"},     {OpCode::kLt, "lt"},     {OpCode::kLe, "le"},
    {OpCode::kGt, "gt"},       {OpCode::kGe, "ge"},     {OpCode::kEq, "eq"},
    {OpCode::kNe, "ne"},       {OpCode::kFloorDiv, "floordiv"},
    {OpCode::kMod, "mod"},     {OpCode::kNeg, "neg"},   {OpCode::kAbs, "abs"},
    {OpCode::kSqrt, "sqrt"},   {OpCode::kExp, "exp"},   {OpCode::kLog, "log"},
    {OpCode::kWhere, "where"},
}};

DType arithmetic(DType d) { return d == DType::kBool ? DType::kI64 : d; }

}  // namespace

int arity(OpCode op) {
  switch (op) {
    case OpCode::kNeg:
    case OpCode::kAbs:
    case OpCode::kSqrt:
    case OpCode::kExp:
    case OpCode::kLog:
      return 1;
    case OpCode::kWhere:
      return 3;
    default:
      return 2;
  }
}

std::string_view op_name(OpCode op) {
  for (const auto& [code, name] : kNames) {
    if (code == op) return name;
  }
  return "?";
}

OpCode parse_op(std::string_view name) {
  for (const auto& [code, n] : kNames) {
    if (n == name) return code;
  }
  if (name == "maximum") return OpCode::kMax;
  if (name == "minimum") return OpCode::kMin;
  if (name == "multiply") return OpCode::kMul;
  if (name == "subtract") return OpCode::kSub;
  if (name == "divide") return OpCode::kDiv;
  if (name == "power") return OpCode::kPow;
  throw InvalidNode("unknown scalar operator '" + std::string(name) + "'");
}

bool is_comparison(OpCode op) {
  switch (op) {
    case OpCode::kLt:
    case OpCode::kLe:
    case OpCode::kGt:
    case OpCode::kGe:
    case OpCode::kEq:
    case OpCode::kNe:
      return true;
    default:
      return false;
  }
}

DType result_dtype(OpCode op, std::span<const DType> operands) {
  if (static_cast<int>(operands.size()) != arity(op)) {
    throw InvalidNode("operator '" + std::string(op_name(op)) + "' expects " +
                      std::to_string(arity(op)) + " operands");
  }
  if (is_comparison(op)) return DType::kBool;
  switch (op) {
    case OpCode::kNeg:
    case OpCode::kAbs:
      return arithmetic(operands[0]);
    case OpCode::kSqrt:
    case OpCode::kExp:
    case OpCode::kLog:
      return is_floating(operands[0]) ? operands[0] : DType::kF64;
    case OpCode::kWhere:
      return promote(operands[1], operands[2]);
    case OpCode::kDiv: {
      DType d = promote(operands[0], operands[1]);
      return is_floating(d) ? d : DType::kF64;
    }
    default:
      return arithmetic(promote(operands[0], operands[1]));
  }
}

double apply_op(OpCode op, DType result, double a, double b) {
  double r = 0.0;
  switch (op) {
    case OpCode::kAdd: r = a + b; break;
    case OpCode::kSub: r = a - b; break;
    case OpCode::kMul: r = a * b; break;
    case OpCode::kDiv: r = a / b; break;
    case OpCode::kPow: r = std::pow(a, b); break;
    case OpCode::kMin: r = a < b ? a : b; break;
    case OpCode::kMax: r = a > b ? a : b; break;
    case OpCode::kLt: r = a < b; break;
    case OpCode::kLe: r = a <= b; break;
    case OpCode::kGt: r = a > b; break;
    case OpCode::kGe: r = a >= b; break;
    case OpCode::kEq: r = a == b; break;
    case OpCode::kNe: r = a != b; break;
    case OpCode::kFloorDiv: r = std::floor(a / b); break;
    case OpCode::kMod: r = a - std::floor(a / b) * b; break;
    case OpCode::kNeg: r = -a; break;
    case OpCode::kAbs: r = std::abs(a); break;
    case OpCode::kSqrt: r = std::sqrt(a); break;
    case OpCode::kExp: r = std::exp(a); break;
    case OpCode::kLog: r = std::log(a); break;
    case OpCode::kWhere: r = a; break;
  }
  return cast_value(result, r);
}

}  // namespace arrayflow
