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

#include "arrayflow/eager.hpp"

#include <vector>

#include "arrayflow/errors.hpp"
#include "internal/iterate.hpp"

namespace arrayflow {
namespace {

std::atomic<std::uint64_t> g_numeric_ops{0};

double eval_expr(const ScalarExpr& e, std::span<const std::int64_t> idx,
                 std::span<const NdArray* const> ins) {
  switch (e.kind) {
    case ScalarExpr::Kind::kConst:
      return e.value;
    case ScalarExpr::Kind::kIndex:
      return static_cast<double>(idx[e.index]);
    case ScalarExpr::Kind::kInput: {
      const NdArray& a = *ins[e.index];
      std::int64_t off = 0;
      for (std::size_t j = 0; j < e.access.size(); ++j) {
        const auto& ax = e.access[j];
        std::int64_t v = ax.offset;
        for (std::size_t k = 0; k < ax.coeffs.size(); ++k) v += ax.coeffs[k] * idx[k];
        off = off * a.shape[j] + v;
      }
      return a.data[static_cast<std::size_t>(off)];
    }
    case ScalarExpr::Kind::kApply: {
      if (e.op == OpCode::kWhere) {
        const double c = eval_expr(*e.args[0], idx, ins);
        return cast_value(e.dtype, eval_expr(*e.args[c != 0.0 ? 1 : 2], idx, ins));
      }
      const double a = eval_expr(*e.args[0], idx, ins);
      const double b = e.args.size() > 1 ? eval_expr(*e.args[1], idx, ins) : 0.0;
      return apply_op(e.op, e.dtype, a, b);
    }
  }
  return 0.0;
}

NdArray eval_indexing(const Node& node, std::span<const NdArray* const> ins) {
  const auto& sels = node.as<IndexingPayload>().selectors;
  const NdArray& src = *ins[0];
  NdArray out(node.shape(), node.dtype());
  std::vector<std::int64_t> src_idx(sels.size());
  std::size_t pos = 0;
  for_each_index(node.shape(), [&](std::span<const std::int64_t> o) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < sels.size(); ++j) {
      const auto& s = sels[j];
      if (const auto* i = std::get_if<std::int64_t>(&s)) {
        src_idx[j] = *i;
      } else if (const auto* sl = std::get_if<Slice>(&s)) {
        src_idx[j] = sl->start + sl->step * o[k++];
      } else {
        const NdArray& arr = *ins[std::get<ArraySelector>(s).input];
        const auto r = arr.shape.size();
        const auto off = linear_offset(arr.shape, o.subspan(k, r));
        k += r;
        const double v = arr.data[static_cast<std::size_t>(off)];
        const auto g = static_cast<std::int64_t>(v);
        if (g < 0 || g >= src.shape[j]) {
          throw OutOfBoundsIndex("gather index " + std::to_string(g) + " outside extent " +
                                 std::to_string(src.shape[j]) + " on axis " + std::to_string(j) +
                                 " of " + describe(node));
        }
        src_idx[j] = g;
      }
    }
    out.data[pos++] = src.data[static_cast<std::size_t>(linear_offset(src.shape, src_idx))];
  });
  return out;
}

NdArray eval_einsum(const Node& node, std::span<const NdArray* const> ins) {
  const auto spec = parse_einsum(node.as<EinsumPayload>().spec, ins.size());
  const std::string reduced = spec.reduced();
  std::map<char, std::int64_t> extent;
  for (std::size_t k = 0; k < ins.size(); ++k) {
    for (std::size_t j = 0; j < spec.inputs[k].size(); ++j) extent[spec.inputs[k][j]] = ins[k]->shape[j];
  }
  Shape red_shape;
  for (char c : reduced) red_shape.push_back(extent[c]);
  const DType dt = node.dtype();
  NdArray out(node.shape(), dt);
  std::map<char, std::int64_t> val;
  std::size_t pos = 0;
  // Left fold of the factors; each partial product carries the promoted
  // dtype of the operands folded so far.
  auto product = [&]() {
    double p = 0.0;
    DType pd = DType::kF64;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      std::int64_t off = 0;
      for (std::size_t j = 0; j < spec.inputs[k].size(); ++j) {
        off = off * ins[k]->shape[j] + val[spec.inputs[k][j]];
      }
      const double x = ins[k]->data[static_cast<std::size_t>(off)];
      if (k == 0) {
        p = x;
        pd = ins[0]->dtype;
      } else {
        const DType operands[] = {pd, ins[k]->dtype};
        pd = result_dtype(OpCode::kMul, operands);
        p = apply_op(OpCode::kMul, pd, p, x);
      }
    }
    return p;
  };
  for_each_index(node.shape(), [&](std::span<const std::int64_t> o) {
    for (std::size_t j = 0; j < spec.output.size(); ++j) val[spec.output[j]] = o[j];
    if (reduced.empty()) {
      out.data[pos++] = cast_value(dt, product());
      return;
    }
    double acc = 0.0;
    for_each_index(red_shape, [&](std::span<const std::int64_t> r) {
      for (std::size_t j = 0; j < reduced.size(); ++j) val[reduced[j]] = r[j];
      acc = apply_op(OpCode::kAdd, dt, acc, product());
    });
    out.data[pos++] = cast_value(dt, acc);
  });
  return out;
}

NdArray eval_concatenate(const Node& node, std::span<const NdArray* const> ins) {
  const int axis = node.as<AxisPayload>().axis;
  NdArray out(node.shape(), node.dtype());
  std::vector<std::int64_t> src(node.shape().size());
  std::size_t pos = 0;
  for_each_index(node.shape(), [&](std::span<const std::int64_t> o) {
    std::int64_t v = o[axis];
    std::size_t k = 0;
    while (v >= ins[k]->shape[axis]) v -= ins[k++]->shape[axis];
    std::copy(o.begin(), o.end(), src.begin());
    src[axis] = v;
    out.data[pos++] = ins[k]->data[static_cast<std::size_t>(linear_offset(ins[k]->shape, src))];
  });
  return out;
}

NdArray eval_stack(const Node& node, std::span<const NdArray* const> ins) {
  const int axis = node.as<AxisPayload>().axis;
  NdArray out(node.shape(), node.dtype());
  std::vector<std::int64_t> src;
  std::size_t pos = 0;
  for_each_index(node.shape(), [&](std::span<const std::int64_t> o) {
    src.assign(o.begin(), o.end());
    const auto k = src[axis];
    src.erase(src.begin() + axis);
    out.data[pos++] = ins[k]->data[static_cast<std::size_t>(linear_offset(ins[k]->shape, src))];
  });
  return out;
}

}  // namespace

std::uint64_t numeric_operation_count() { return g_numeric_ops.load(); }
void count_numeric_operation(std::uint64_t n) { g_numeric_ops.fetch_add(n); }

NdArray bind_placeholder(const PlaceholderPayload& p, const NdArray& value) {
  if (value.shape != p.shape) {
    throw BindingMismatch("placeholder '" + p.name + "' expects shape " + shape_string(p.shape) +
                          ", bound " + shape_string(value.shape));
  }
  if (value.dtype != p.dtype) {
    throw BindingMismatch("placeholder '" + p.name + "' expects dtype " + std::string(dtype_name(p.dtype)) +
                          ", bound " + std::string(dtype_name(value.dtype)));
  }
  return value;
}

EagerEvaluator::EagerEvaluator(Bindings bindings, ReceiveResolver resolver)
    : bindings_(std::move(bindings)), resolver_(std::move(resolver)) {}

const NdArray& EagerEvaluator::evaluate(const NodeRef& root) {
  if (auto it = memo_.find(root.get()); it != memo_.end()) return it->second;
  // Iterative post-order so deep chains do not exhaust the stack.
  std::vector<std::pair<NodeRef, bool>> stack{{root, false}};
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (memo_.count(n.get())) continue;
    if (!expanded) {
      stack.emplace_back(n, true);
      for (const auto& in : n->inputs()) {
        if (!memo_.count(in.get())) stack.emplace_back(in, false);
      }
      continue;
    }
    keep_alive_.push_back(n);
    memo_.emplace(n.get(), compute(*n));
  }
  return memo_.at(root.get());
}

const std::map<std::string, NdArray>& EagerEvaluator::call_results(const NodeRef& call) {
  if (auto it = calls_.find(call.get()); it != calls_.end()) return it->second;
  const auto& fn = call->as<CallPayload>().function->as<FunctionPayload>();
  Bindings params;
  for (std::size_t k = 0; k < fn.params.size(); ++k) {
    params[fn.params[k].second->as<PlaceholderPayload>().name] = evaluate(call->inputs()[k]);
  }
  EagerEvaluator body(std::move(params));
  std::map<std::string, NdArray> results;
  for (const auto& [name, node] : fn.results) results[name] = body.evaluate(node);
  keep_alive_.push_back(call);
  return calls_.emplace(call.get(), std::move(results)).first->second;
}

NdArray EagerEvaluator::compute(const Node& node) {
  std::vector<const NdArray*> ins;
  for (const auto& in : node.inputs()) ins.push_back(&memo_.at(in.get()));
  if (!node.is_leaf()) count_numeric_operation();
  switch (node.kind()) {
    case NodeKind::kData: {
      const auto& p = node.as<DataPayload>();
      NdArray a;
      a.shape = p.shape;
      a.dtype = p.dtype;
      a.data = *p.values;
      return a;
    }
    case NodeKind::kPlaceholder: {
      const auto& p = node.as<PlaceholderPayload>();
      auto it = bindings_.find(p.name);
      if (it == bindings_.end()) throw UnboundPlaceholder("placeholder '" + p.name + "' is unbound");
      return bind_placeholder(p, it->second);
    }
    case NodeKind::kIndexLambda: {
      const auto& expr = *node.as<IndexLambdaPayload>().expr;
      NdArray out(node.shape(), node.dtype());
      std::size_t pos = 0;
      for_each_index(node.shape(), [&](std::span<const std::int64_t> idx) {
        out.data[pos++] = eval_expr(expr, idx, ins);
      });
      return out;
    }
    case NodeKind::kReshape: {
      NdArray out = *ins[0];
      out.shape = node.shape();
      return out;
    }
    case NodeKind::kIndexing:
      return eval_indexing(node, ins);
    case NodeKind::kEinsum:
      return eval_einsum(node, ins);
    case NodeKind::kConcatenate:
      return eval_concatenate(node, ins);
    case NodeKind::kStack:
      return eval_stack(node, ins);
    case NodeKind::kFunctionDefinition:
    case NodeKind::kCall:
      return NdArray({}, DType::kF64);
    case NodeKind::kCallResult: {
      const auto& call = node.inputs()[0];
      return call_results(call).at(node.as<CallResultPayload>().name);
    }
    case NodeKind::kSend:
    case NodeKind::kSendWrapper:
      return *ins[0];
    case NodeKind::kReceive: {
      if (!resolver_) {
        throw CommunicationInSingleProcessGraph("cannot evaluate " + describe(node) +
                                                " without a distributed context");
      }
      return resolver_(node);
    }
  }
  return {};
}

NdArray eager_eval(const NodeRef& node, const Bindings& bindings, const ReceiveResolver& resolver) {
  EagerEvaluator ev(bindings, resolver);
  return ev.evaluate(node);
}

std::map<std::string, NdArray> eager_eval(const Graph& graph, const Bindings& bindings,
                                          const ReceiveResolver& resolver) {
  EagerEvaluator ev(bindings, resolver);
  std::map<std::string, NdArray> out;
  for (const auto& [name, node] : graph.outputs) out[name] = ev.evaluate(node);
  return out;
}

}  // namespace arrayflow
