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

// NumPy-like array context. In Lazy mode every operation appends a node to
// the dataflow graph and nothing is computed until freeze() or a compiled
// call; Eager mode evaluates each operation immediately.

#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"
#include "arrayflow/pipeline.hpp"

namespace arrayflow {

class ArrayContext;

/// Handle to an array expression owned by a context.
class Array {
 public:
  Array() = default;
  Array(ArrayContext* ctx, NodeRef node) : ctx_(ctx), node_(std::move(node)) {}

  const NodeRef& node() const { return node_; }
  ArrayContext* context() const { return ctx_; }
  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape(); }
  DType dtype() const { return node_->dtype(); }
  int rank() const { return node_->rank(); }

 private:
  ArrayContext* ctx_ = nullptr;
  NodeRef node_;
};

using ArrayMap = std::map<std::string, Array>;

/// An argument that is neither an array nor a scalar (rejected by compile).
struct OpaqueArg {
  std::string type_name;
};

/// Concrete argument of a compiled call: absent optional, array, scalar.
using CallArg = std::variant<std::monostate, NdArray, double, OpaqueArg>;

/// Traced body: receives one handle per argument (empty for absent optional
/// arguments) and returns named results.
using TraceFn = std::function<ArrayMap(ArrayContext&, const std::vector<Array>&)>;

enum class Mode { kLazy, kEager };

class CompiledFunction {
 public:
  std::map<std::string, NdArray> operator()(const std::vector<CallArg>& args) const;

  /// Number of distinct signatures traced so far.
  int trace_count() const;
  int cache_hits() const;
  int executions() const;

 private:
  friend class ArrayContext;
  struct State;
  std::shared_ptr<State> state_;
};

class OutlinedFunction {
 public:
  /// Adds a Call node and one CallResult per traced result.
  ArrayMap operator()(const std::vector<Array>& args) const;

  /// FunctionDefinitions created so far (one per argument signature).
  int definition_count() const;

 private:
  friend class ArrayContext;
  struct State;
  std::shared_ptr<State> state_;
};

class ArrayContext {
 public:
  explicit ArrayContext(Mode mode = Mode::kLazy, PipelineOptions options = {});

  Mode mode() const { return mode_; }
  PipelineOptions& options() { return options_; }

  // Leaves.
  Array array(const NdArray& values, std::string name = "");
  Array scalar(double value, DType dtype = DType::kF64);
  Array placeholder(std::string name, Shape shape, DType dtype = DType::kF64);
  Array linspace(double start, double stop, std::int64_t count);

  // Elementwise (broadcasting).
  Array add(const Array& a, const Array& b);
  Array sub(const Array& a, const Array& b);
  Array mul(const Array& a, const Array& b);
  Array div(const Array& a, const Array& b);
  Array pow(const Array& a, const Array& b);
  Array maximum(const Array& a, const Array& b);
  Array minimum(const Array& a, const Array& b);
  Array less(const Array& a, const Array& b);
  Array less_equal(const Array& a, const Array& b);
  Array greater(const Array& a, const Array& b);
  Array greater_equal(const Array& a, const Array& b);
  Array equal(const Array& a, const Array& b);
  Array not_equal(const Array& a, const Array& b);
  Array where(const Array& cond, const Array& a, const Array& b);
  Array negative(const Array& a);
  Array abs(const Array& a);
  Array exp(const Array& a);
  Array sqrt(const Array& a);
  Array log(const Array& a);
  Array binary(OpCode op, const Array& a, const Array& b);
  Array unary(OpCode op, const Array& a);

  /// Scalar operand typed like `like` (floating arrays keep their precision).
  Array constant_like(double value, const Array& like);

  // Structural.
  Array reshape(const Array& a, Shape shape);
  Array index(const Array& a, std::vector<Selector> selectors, std::vector<Array> index_arrays = {});
  Array slice(const Array& a, int axis, std::int64_t start, std::int64_t stop, std::int64_t step = 1);
  Array concatenate(const std::vector<Array>& arrays, int axis = 0);
  Array stack(const std::vector<Array>& arrays, int axis = 0);
  Array einsum(const std::string& spec, const std::vector<Array>& operands);
  /// Sum over `axes` (all axes when empty), as an Einsum.
  Array sum(const Array& a, std::vector<int> axes = {});
  Array tag(const Array& a, int axis, AxisTag tag);

  /// Runs the full pipeline once. Placeholders must be bound.
  NdArray freeze(const Array& a, const Bindings& bindings = {});
  std::map<std::string, NdArray> freeze(const ArrayMap& arrays, const Bindings& bindings = {});

  CompiledFunction compile(TraceFn fn, std::string name = "f");
  OutlinedFunction outline(TraceFn fn, std::string name = "f");

  /// Log and timings of the most recent pipeline build (compile or freeze).
  const PassLog& last_log() const { return last_log_; }
  const StageTimings& last_timings() const { return last_timings_; }

 private:
  friend class CompiledFunction;
  friend class OutlinedFunction;

  Array wrap(NodeRef node);
  NodeRef unwrap(const Array& a) const;
  CompiledProgram build(const Graph& graph, StageTimings* timings);

  struct CompiledEntry;

  Mode mode_;
  PipelineOptions options_;
  /// (function id, argument signature) -> traced graph and program.
  std::map<std::pair<int, std::string>, std::shared_ptr<const CompiledEntry>> compile_cache_;
  PassLog last_log_;
  StageTimings last_timings_;
  int next_function_id_ = 0;
};

Array operator+(const Array& a, const Array& b);
Array operator-(const Array& a, const Array& b);
Array operator*(const Array& a, const Array& b);
Array operator/(const Array& a, const Array& b);
Array operator-(const Array& a);
Array operator+(const Array& a, double b);
Array operator-(const Array& a, double b);
Array operator*(const Array& a, double b);
Array operator/(const Array& a, double b);
Array operator+(double a, const Array& b);
Array operator-(double a, const Array& b);
Array operator*(double a, const Array& b);
Array operator/(double a, const Array& b);

}  // namespace arrayflow
