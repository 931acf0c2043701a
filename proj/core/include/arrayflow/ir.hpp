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

// Scalar loop-nest IR. Each materialized array becomes one rectangular loop
// nest whose statement computes an element from its nearest materialized
// predecessors.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/passes.hpp"

namespace arrayflow {

enum class Storage { kInput, kConstant, kOutput, kTemporary };
std::string_view storage_name(Storage s);

struct ArrayDecl {
  std::string name;
  Shape shape;
  DType dtype = DType::kF64;
  Storage storage = Storage::kTemporary;
  std::shared_ptr<const std::vector<double>> values;  // kConstant only
};

enum class ReduceOp { kSum, kMax, kMin };
std::string_view reduce_name(ReduceOp op);

struct IrExpr;
using IrRef = std::shared_ptr<const IrExpr>;

struct IrExpr {
  enum class Kind { kConst, kVar, kAccess, kScalar, kApply, kReduce };

  Kind kind = Kind::kConst;
  DType dtype = DType::kF64;
  double value = 0.0;       // kConst
  std::string name;         // kVar, kAccess (array), kScalar
  OpCode op = OpCode::kAdd; // kApply
  std::vector<IrRef> args;  // kAccess: indices; kApply: operands; kReduce: {body}
  ReduceOp reduce = ReduceOp::kSum;
  std::vector<std::string> reduce_vars;
  std::vector<std::int64_t> reduce_extents;
};

namespace ir {
IrRef constant(double value, DType dtype);
IrRef index_constant(std::int64_t value);
IrRef var(std::string name);
IrRef access(std::string array, std::vector<IrRef> indices, DType dtype);
IrRef scalar(std::string name, DType dtype);
IrRef apply(OpCode op, std::vector<IrRef> args, DType dtype);
IrRef reduce(ReduceOp op, std::vector<std::string> vars, std::vector<std::int64_t> extents,
             IrRef body, DType dtype);
}  // namespace ir

bool ir_equal(const IrExpr& a, const IrExpr& b);
bool ir_equal(const std::vector<IrRef>& a, const std::vector<IrRef>& b);
std::string ir_string(const IrExpr& e);

struct Loop {
  std::string var;
  std::int64_t extent = 0;
  AxisTags tags;
  bool parallel = false;
};

/// target[index...] = value, or a nest-local scalar when `scalar_target`.
struct Statement {
  std::string target;
  bool scalar_target = false;
  std::vector<IrRef> index;
  IrRef value;
};

struct LoopNest {
  int id = 0;
  std::vector<Loop> loops;
  std::vector<Statement> body;
  /// Nest-local scalar temporaries (contracted arrays).
  std::vector<std::pair<std::string, DType>> scalars;
};

/// Invocation of an outlined function's program.
struct CallSite {
  int id = 0;
  std::string function;
  /// callee input array <- caller array
  std::vector<std::pair<std::string, std::string>> args;
  /// callee output array -> caller array
  std::vector<std::pair<std::string, std::string>> results;
};

using Step = std::variant<LoopNest, CallSite>;

struct IrProgram {
  std::string name = "main";
  std::vector<ArrayDecl> arrays;
  std::vector<Step> steps;
  /// Graph output name -> array name.
  std::map<std::string, std::string> outputs;
  std::map<std::string, std::shared_ptr<const IrProgram>> functions;

  const ArrayDecl* find_array(const std::string& name) const;
  std::size_t nest_count() const;
  std::size_t temporary_count() const;
};

int step_id(const Step& s);

/// Arrays read / written by a step (call sites included).
std::vector<std::string> step_reads(const Step& s);
std::vector<std::string> step_writes(const Step& s);

/// Producer -> consumer edges between step positions.
std::vector<std::pair<int, int>> step_dependencies(const IrProgram& program);

struct Comprehension {
  std::string target;
  std::vector<Loop> loops;
  IrRef value;
};

/// Element formula for a materialized node in terms of its nearest
/// materialized predecessors, named by `names`.
Comprehension to_comprehension(const NodeRef& node,
                               const std::map<const Node*, std::string>& names,
                               const std::string& target);

struct LowerOptions {
  std::string program_name = "main";
  /// Extra-materialize and retry on UnsupportedComposition.
  bool legalize = true;
};

/// One nest per materialized non-leaf node, in topological order.
IrProgram lower(const Graph& graph, const LowerOptions& options = {}, PassLog* log = nullptr);

/// Empty when the program is well formed.
std::vector<std::string> validate(const IrProgram& program);

std::string dump(const IrProgram& program);

/// Characters valid in generated identifiers; other characters become '_'.
std::string sanitize_identifier(const std::string& name);
bool is_identifier(const std::string& name);

}  // namespace arrayflow
