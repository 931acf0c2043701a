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

// Array dataflow graph: immutable, structurally hashed array-expression
// nodes. Nodes reference their inputs directly; a graph is the set of nodes
// reachable from its named outputs.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "arrayflow/scalar_ops.hpp"
#include "arrayflow/types.hpp"

namespace arrayflow {

struct AxisTag {
  std::string key;
  std::optional<std::string> value;

  friend auto operator<=>(const AxisTag&, const AxisTag&) = default;
  std::string to_string() const;
};

/// Tags on one axis, kept sorted by key with at most one entry per key.
using AxisTags = std::vector<AxisTag>;
/// One AxisTags per axis (or empty when the node carries no tags at all).
using AxisTagList = std::vector<AxisTags>;

class Node;
using NodeRef = std::shared_ptr<const Node>;

// ---------------------------------------------------------------------------
// Index-lambda scalar expressions

/// Affine function of the owning node's index variables: sum(coeffs[k]*i_k) + offset.
struct AffineIndex {
  std::vector<std::int64_t> coeffs;
  std::int64_t offset = 0;

  static AffineIndex identity(int axis, int rank);
  static AffineIndex constant(std::int64_t value, int rank);

  /// True when this is exactly `i_axis`.
  bool is_identity_of(int axis) const;
  bool uses(int axis) const { return axis < static_cast<int>(coeffs.size()) && coeffs[axis] != 0; }

  friend bool operator==(const AffineIndex&, const AffineIndex&) = default;
};

struct ScalarExpr;
using ExprRef = std::shared_ptr<const ScalarExpr>;

struct ScalarExpr {
  enum class Kind { kConst, kIndex, kInput, kApply };

  Kind kind = Kind::kConst;
  DType dtype = DType::kF64;
  OpCode op = OpCode::kAdd;  // kApply
  double value = 0.0;        // kConst
  int index = 0;             // kIndex: axis; kInput: input position
  std::vector<AffineIndex> access;  // kInput: one entry per input axis
  std::vector<ExprRef> args;        // kApply
};

namespace sx {
ExprRef constant(double value, DType dtype = DType::kF64);
ExprRef index(int axis);
ExprRef input(int position, std::vector<AffineIndex> access, DType dtype);
ExprRef apply(OpCode op, std::vector<ExprRef> args);
}  // namespace sx

bool expr_equal(const ScalarExpr& a, const ScalarExpr& b);
std::string expr_string(const ScalarExpr& e);

// ---------------------------------------------------------------------------
// Node kinds and payloads

enum class NodeKind {
  kData,
  kPlaceholder,
  kIndexLambda,
  kReshape,
  kIndexing,
  kEinsum,
  kConcatenate,
  kStack,
  kFunctionDefinition,
  kCall,
  kCallResult,
  kSend,
  kReceive,
  kSendWrapper,
};

std::string_view kind_name(NodeKind kind);
NodeKind parse_kind(std::string_view name);

struct Slice {
  std::int64_t start = 0;
  std::int64_t stop = 0;
  std::int64_t step = 1;

  std::int64_t length() const;
  friend bool operator==(const Slice&, const Slice&) = default;
};

/// Gather along one axis using the I64 array at `inputs()[input]`.
struct ArraySelector {
  int input = 1;
  friend bool operator==(const ArraySelector&, const ArraySelector&) = default;
};

/// Per-axis selector: integer (drops the axis), slice, or index array. Index
/// arrays use outer (orthogonal) indexing: each contributes its own axes.
using Selector = std::variant<std::int64_t, Slice, ArraySelector>;

struct DataPayload {
  std::string name;
  Shape shape;
  DType dtype = DType::kF64;
  std::shared_ptr<const std::vector<double>> values;
};

struct PlaceholderPayload {
  std::string name;
  Shape shape;
  DType dtype = DType::kF64;
};

struct IndexLambdaPayload {
  Shape shape;
  ExprRef expr;
};

struct ReshapePayload {
  Shape shape;
};

struct IndexingPayload {
  std::vector<Selector> selectors;
};

struct EinsumPayload {
  std::string spec;
};

/// Concatenate and Stack.
struct AxisPayload {
  int axis = 0;
};

struct FunctionPayload {
  std::string name;
  std::vector<std::pair<std::string, NodeRef>> params;   // Placeholder nodes
  std::vector<std::pair<std::string, NodeRef>> results;  // body nodes
};

struct CallPayload {
  NodeRef function;  // FunctionDefinition; arguments are the inputs in param order
};

struct CallResultPayload {
  std::string name;
};

struct SendPayload {
  int dest = 0;
  std::int64_t tag = 0;
};

struct ReceivePayload {
  int source = 0;
  std::int64_t tag = 0;
  Shape shape;
  DType dtype = DType::kF64;
};

using Payload =
    std::variant<std::monostate, DataPayload, PlaceholderPayload, IndexLambdaPayload,
                 ReshapePayload, IndexingPayload, EinsumPayload, AxisPayload, FunctionPayload,
                 CallPayload, CallResultPayload, SendPayload, ReceivePayload>;

struct EinsumSpec {
  std::vector<std::string> inputs;
  std::string output;

  /// Letters that appear in inputs but not in the output, by first appearance.
  std::string reduced() const;
};

EinsumSpec parse_einsum(std::string_view spec, std::size_t num_inputs);

Shape broadcast_shapes(std::span<const Shape> shapes);

/// Static shape of a node of `kind` with the given payload and input shapes.
Shape infer_shape(NodeKind kind, const Payload& payload, std::span<const Shape> input_shapes);
DType infer_dtype(NodeKind kind, const Payload& payload, std::span<const DType> input_dtypes);

// ---------------------------------------------------------------------------

class Node {
 public:
  /// Validates and constructs a node. Shape and dtype are inferred; throws
  /// ShapeMismatch, BadSubscript, DTypeMismatch or InvalidNode.
  static NodeRef create(NodeKind kind, std::vector<NodeRef> inputs, Payload payload,
                        AxisTagList tags = {}, bool materialize = false);

  NodeKind kind() const { return kind_; }
  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return element_count(shape_); }
  const std::vector<NodeRef>& inputs() const { return inputs_; }
  const Payload& payload() const { return payload_; }
  const AxisTagList& axis_tags() const { return tags_; }
  const AxisTags& tags_on(int axis) const;
  bool materialized() const { return materialize_; }
  std::uint64_t hash() const { return hash_; }

  template <class T>
  const T& as() const {
    return std::get<T>(payload_);
  }

  bool is_leaf() const {
    return kind_ == NodeKind::kData || kind_ == NodeKind::kPlaceholder ||
           kind_ == NodeKind::kReceive;
  }

  /// Same node with replaced inputs (payload, tags and flag kept).
  NodeRef with_inputs(std::vector<NodeRef> inputs) const;
  NodeRef with_tags(AxisTagList tags) const;
  NodeRef with_materialized(bool flag) const;

 private:
  Node() = default;

  NodeKind kind_ = NodeKind::kData;
  Shape shape_;
  DType dtype_ = DType::kF64;
  std::vector<NodeRef> inputs_;
  Payload payload_;
  AxisTagList tags_;
  bool materialize_ = false;
  std::uint64_t hash_ = 0;
};

/// 64-bit content digest, computed at construction.
inline std::uint64_t structural_hash(const Node& node) { return node.hash(); }

/// Deep structural equality; hashes short-circuit the common case and the
/// full comparison verifies on hash match.
bool structurally_equal(const NodeRef& a, const NodeRef& b);

std::string describe(const Node& node);

struct Graph {
  std::map<std::string, NodeRef> outputs;
};

/// Every node reachable from `roots`, each after all of its inputs. Ready
/// nodes are ordered by (structural hash, first-use order). Function bodies
/// are not entered.
std::vector<NodeRef> topo_order(std::span<const NodeRef> roots);
std::vector<NodeRef> topo_order(const Graph& graph);

struct SuccessorCounts {
  /// Distinct consumer nodes per node.
  std::unordered_map<const Node*, int> successors;
  /// Total input-edge multiplicity per node (x*x counts 2).
  std::unordered_map<const Node*, int> uses;

  int successors_of(const Node& n) const;
  int uses_of(const Node& n) const;
};

SuccessorCounts count_successors(const Graph& graph);

using RewriteFn = std::function<NodeRef(const NodeRef& original, std::vector<NodeRef> inputs)>;

/// Bottom-up memoized rebuild of every node reachable from the outputs.
Graph rewrite_graph(const Graph& graph, const RewriteFn& fn);

/// Graph of a FunctionDefinition's body (outputs = named results).
Graph function_body(const Node& function_definition);

// ---------------------------------------------------------------------------
// Builders

namespace adfg {

NodeRef data(std::string name, const NdArray& values);
NodeRef data(const NdArray& values);
NodeRef scalar(double value, DType dtype = DType::kF64);
NodeRef placeholder(std::string name, Shape shape, DType dtype = DType::kF64);
NodeRef index_lambda(Shape shape, ExprRef expr, std::vector<NodeRef> inputs);

/// Broadcasting elementwise node; `compose` receives one access expression
/// per input.
NodeRef elementwise_expr(std::vector<NodeRef> inputs,
                         const std::function<ExprRef(std::span<const ExprRef>)>& compose);
NodeRef elementwise(OpCode op, std::vector<NodeRef> inputs);

NodeRef reshape(NodeRef input, Shape shape);
NodeRef indexing(NodeRef input, std::vector<Selector> selectors,
                 std::vector<NodeRef> index_arrays = {});
NodeRef einsum(std::string spec, std::vector<NodeRef> inputs);
NodeRef concatenate(std::vector<NodeRef> inputs, int axis);
NodeRef stack(std::vector<NodeRef> inputs, int axis);
NodeRef function_definition(std::string name,
                            std::vector<std::pair<std::string, NodeRef>> params,
                            std::vector<std::pair<std::string, NodeRef>> results);
NodeRef call(NodeRef function, std::vector<NodeRef> args);
NodeRef call_result(NodeRef call, std::string name);
NodeRef send(NodeRef data, int dest, std::int64_t tag);
NodeRef receive(int source, std::int64_t tag, Shape shape, DType dtype = DType::kF64);
NodeRef send_wrapper(NodeRef passthrough, NodeRef send);

NodeRef tagged(const NodeRef& node, int axis, AxisTag tag);

}  // namespace adfg
}  // namespace arrayflow
