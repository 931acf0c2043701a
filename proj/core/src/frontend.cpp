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

#include "arrayflow/frontend.hpp"

#include <chrono>
#include <cmath>

#include "arrayflow/errors.hpp"

namespace arrayflow {

struct ArrayContext::CompiledEntry {
  Graph graph;
  CompiledProgram program;
  /// Build stages only; each call adds its own execution time.
  StageTimings timings;
};

struct CompiledFunction::State {
  ArrayContext* ctx = nullptr;
  TraceFn fn;
  std::string name;
  int id = 0;
  std::atomic<int> traces{0};
  std::atomic<int> hits{0};
  std::atomic<int> executions{0};
};

struct OutlinedFunction::State {
  ArrayContext* ctx = nullptr;
  TraceFn fn;
  std::string name;
  std::map<std::string, NodeRef> definitions;
};

namespace {

std::string arg_signature(const std::vector<CallArg>& args, const std::string& fname) {
  std::string sig;
  for (std::size_t k = 0; k < args.size(); ++k) {
    const auto& a = args[k];
    if (k) sig += ";";
    if (std::holds_alternative<std::monostate>(a)) {
      sig += "-";
    } else if (const auto* nd = std::get_if<NdArray>(&a)) {
      sig += "a:" + std::string(dtype_name(nd->dtype)) + shape_string(nd->shape);
    } else if (std::holds_alternative<double>(a)) {
      sig += "s:f64";
    } else {
      throw SignatureUnsupported("argument " + std::to_string(k) + " of '" + fname + "' has unsupported type '" +
                                 std::get<OpaqueArg>(a).type_name + "'");
    }
  }
  return sig;
}

std::string array_signature(const std::vector<Array>& args) {
  std::string sig;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (k) sig += ";";
    sig += args[k] ? std::string(dtype_name(args[k].dtype())) + shape_string(args[k].shape()) : "-";
  }
  return sig;
}

void check_results(const ArrayMap& results, const ArrayContext* ctx, const std::string& fname) {
  if (results.empty()) throw TracingError("function '" + fname + "' returned no arrays");
  for (const auto& [name, a] : results) {
    if (!a) throw TracingError("result '" + name + "' of '" + fname + "' is not an array");
    if (a.context() != ctx) {
      throw TracingError("result '" + name + "' of '" + fname + "' belongs to another array context");
    }
  }
}

std::string ordinal_name(const std::string& base, std::size_t k) { return base + std::to_string(k); }

}  // namespace

// ---------------------------------------------------------------------------

ArrayContext::ArrayContext(Mode mode, PipelineOptions options) : mode_(mode), options_(std::move(options)) {}

Array ArrayContext::wrap(NodeRef node) {
  if (mode_ == Mode::kEager && !node->is_leaf()) node = adfg::data(eager_eval(node));
  return Array(this, std::move(node));
}

NodeRef ArrayContext::unwrap(const Array& a) const {
  if (!a) throw InvalidNode("empty array handle");
  if (a.context() != this) throw InvalidNode("array belongs to another array context");
  return a.node();
}

Array ArrayContext::array(const NdArray& values, std::string name) {
  return Array(this, adfg::data(std::move(name), values));
}

Array ArrayContext::scalar(double value, DType dtype) { return Array(this, adfg::scalar(value, dtype)); }

Array ArrayContext::placeholder(std::string name, Shape shape, DType dtype) {
  return Array(this, adfg::placeholder(std::move(name), std::move(shape), dtype));
}

Array ArrayContext::linspace(double start, double stop, std::int64_t count) {
  return array(NdArray::linspace(start, stop, count));
}

Array ArrayContext::binary(OpCode op, const Array& a, const Array& b) {
  return wrap(adfg::elementwise(op, {unwrap(a), unwrap(b)}));
}

Array ArrayContext::unary(OpCode op, const Array& a) { return wrap(adfg::elementwise(op, {unwrap(a)})); }

Array ArrayContext::add(const Array& a, const Array& b) { return binary(OpCode::kAdd, a, b); }
Array ArrayContext::sub(const Array& a, const Array& b) { return binary(OpCode::kSub, a, b); }
Array ArrayContext::mul(const Array& a, const Array& b) { return binary(OpCode::kMul, a, b); }
Array ArrayContext::div(const Array& a, const Array& b) { return binary(OpCode::kDiv, a, b); }
Array ArrayContext::pow(const Array& a, const Array& b) { return binary(OpCode::kPow, a, b); }
Array ArrayContext::maximum(const Array& a, const Array& b) { return binary(OpCode::kMax, a, b); }
Array ArrayContext::minimum(const Array& a, const Array& b) { return binary(OpCode::kMin, a, b); }
Array ArrayContext::less(const Array& a, const Array& b) { return binary(OpCode::kLt, a, b); }
Array ArrayContext::less_equal(const Array& a, const Array& b) { return binary(OpCode::kLe, a, b); }
Array ArrayContext::greater(const Array& a, const Array& b) { return binary(OpCode::kGt, a, b); }
Array ArrayContext::greater_equal(const Array& a, const Array& b) { return binary(OpCode::kGe, a, b); }
Array ArrayContext::equal(const Array& a, const Array& b) { return binary(OpCode::kEq, a, b); }
Array ArrayContext::not_equal(const Array& a, const Array& b) { return binary(OpCode::kNe, a, b); }
Array ArrayContext::negative(const Array& a) { return unary(OpCode::kNeg, a); }
Array ArrayContext::abs(const Array& a) { return unary(OpCode::kAbs, a); }
Array ArrayContext::exp(const Array& a) { return unary(OpCode::kExp, a); }
Array ArrayContext::sqrt(const Array& a) { return unary(OpCode::kSqrt, a); }
Array ArrayContext::log(const Array& a) { return unary(OpCode::kLog, a); }

Array ArrayContext::where(const Array& cond, const Array& a, const Array& b) {
  return wrap(adfg::elementwise(OpCode::kWhere, {unwrap(cond), unwrap(a), unwrap(b)}));
}

Array ArrayContext::constant_like(double value, const Array& like) {
  const DType d = like ? like.dtype() : DType::kF64;
  const bool integral = std::isfinite(value) && value == std::trunc(value);
  return scalar(value, is_floating(d) ? d : (integral ? DType::kI64 : DType::kF64));
}

Array ArrayContext::reshape(const Array& a, Shape shape) { return wrap(adfg::reshape(unwrap(a), std::move(shape))); }

Array ArrayContext::index(const Array& a, std::vector<Selector> selectors, std::vector<Array> index_arrays) {
  std::vector<NodeRef> arrays;
  for (const auto& i : index_arrays) arrays.push_back(unwrap(i));
  return wrap(adfg::indexing(unwrap(a), std::move(selectors), std::move(arrays)));
}

Array ArrayContext::slice(const Array& a, int axis, std::int64_t start, std::int64_t stop, std::int64_t step) {
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank()) throw ShapeMismatch("slice axis out of range");
  std::vector<Selector> sel;
  for (int k = 0; k < axis; ++k) sel.emplace_back(Slice{0, a.shape()[k], 1});
  sel.emplace_back(Slice{start, stop, step});
  return index(a, std::move(sel));
}

Array ArrayContext::concatenate(const std::vector<Array>& arrays, int axis) {
  std::vector<NodeRef> nodes;
  for (const auto& a : arrays) nodes.push_back(unwrap(a));
  return wrap(adfg::concatenate(std::move(nodes), axis));
}

Array ArrayContext::stack(const std::vector<Array>& arrays, int axis) {
  std::vector<NodeRef> nodes;
  for (const auto& a : arrays) nodes.push_back(unwrap(a));
  return wrap(adfg::stack(std::move(nodes), axis));
}

Array ArrayContext::einsum(const std::string& spec, const std::vector<Array>& operands) {
  std::vector<NodeRef> nodes;
  for (const auto& a : operands) nodes.push_back(unwrap(a));
  return wrap(adfg::einsum(spec, std::move(nodes)));
}

Array ArrayContext::sum(const Array& a, std::vector<int> axes) {
  const int r = a.rank();
  std::vector<bool> drop(static_cast<std::size_t>(r), axes.empty());
  for (int ax : axes) {
    if (ax < 0) ax += r;
    if (ax < 0 || ax >= r) throw ShapeMismatch("sum axis out of range for rank " + std::to_string(r));
    drop[ax] = true;
  }
  std::string in;
  std::string out;
  for (int k = 0; k < r; ++k) {
    in += static_cast<char>('a' + k);
    if (!drop[k]) out += static_cast<char>('a' + k);
  }
  return einsum(in + "->" + out, {a});
}

Array ArrayContext::tag(const Array& a, int axis, AxisTag t) { return Array(this, adfg::tagged(unwrap(a), axis, std::move(t))); }

CompiledProgram ArrayContext::build(const Graph& graph, StageTimings* timings) {
  CompiledProgram p = build_program(graph, options_, timings);
  last_log_ = p.log;
  return p;
}

NdArray ArrayContext::freeze(const Array& a, const Bindings& bindings) {
  return freeze(ArrayMap{{"out", a}}, bindings).at("out");
}

std::map<std::string, NdArray> ArrayContext::freeze(const ArrayMap& arrays, const Bindings& bindings) {
  Graph g;
  for (const auto& [name, a] : arrays) g.outputs[name] = unwrap(a);
  if (mode_ == Mode::kEager) return eager_eval(g, bindings);
  StageTimings timings;
  const CompiledProgram p = build(g, &timings);
  auto result = execute(p, bindings, &timings);
  last_timings_ = timings;
  return std::move(result.outputs);
}

CompiledFunction ArrayContext::compile(TraceFn fn, std::string name) {
  CompiledFunction cf;
  cf.state_ = std::make_shared<CompiledFunction::State>();
  cf.state_->ctx = this;
  cf.state_->fn = std::move(fn);
  cf.state_->name = std::move(name);
  cf.state_->id = next_function_id_++;
  return cf;
}

OutlinedFunction ArrayContext::outline(TraceFn fn, std::string name) {
  OutlinedFunction of;
  of.state_ = std::make_shared<OutlinedFunction::State>();
  of.state_->ctx = this;
  of.state_->fn = std::move(fn);
  of.state_->name = std::move(name);
  return of;
}

// ---------------------------------------------------------------------------

std::map<std::string, NdArray> CompiledFunction::operator()(const std::vector<CallArg>& args) const {
  State& s = *state_;
  ArrayContext& ctx = *s.ctx;
  const std::string sig = arg_signature(args, s.name);

  if (ctx.mode() == Mode::kEager) {
    std::vector<Array> handles;
    for (const auto& a : args) {
      if (const auto* nd = std::get_if<NdArray>(&a)) handles.push_back(ctx.array(*nd));
      else if (const auto* v = std::get_if<double>(&a)) handles.push_back(ctx.scalar(*v));
      else handles.emplace_back();
    }
    const ArrayMap results = s.fn(ctx, handles);
    check_results(results, &ctx, s.name);
    ++s.executions;
    std::map<std::string, NdArray> out;
    for (const auto& [name, a] : results) out[name] = eager_eval(a.node());
    return out;
  }

  Bindings bindings;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (const auto* nd = std::get_if<NdArray>(&args[k])) bindings[ordinal_name("arg", k)] = *nd;
    else if (const auto* v = std::get_if<double>(&args[k])) bindings[ordinal_name("arg", k)] = NdArray::scalar(*v);
  }

  const auto key = std::make_pair(s.id, sig);
  auto it = ctx.compile_cache_.find(key);
  if (it == ctx.compile_cache_.end()) {
    StageTimings timings;
    Graph g;
    {
      StageTimer t(&timings, Stage::kAssemble);
      std::vector<Array> handles;
      for (std::size_t k = 0; k < args.size(); ++k) {
        if (const auto* nd = std::get_if<NdArray>(&args[k])) {
          handles.push_back(ctx.placeholder(ordinal_name("arg", k), nd->shape, nd->dtype));
        } else if (std::holds_alternative<double>(args[k])) {
          handles.push_back(ctx.placeholder(ordinal_name("arg", k), {}, DType::kF64));
        } else {
          handles.emplace_back();
        }
      }
      const ArrayMap results = s.fn(ctx, handles);
      check_results(results, &ctx, s.name);
      for (const auto& [name, a] : results) g.outputs[name] = a.node();
    }
    auto entry = std::make_shared<ArrayContext::CompiledEntry>();
    entry->graph = g;
    entry->program = ctx.build(g, &timings);
    entry->timings = timings;
    it = ctx.compile_cache_.emplace(key, std::move(entry)).first;
    ++s.traces;
  } else {
    ++s.hits;
  }
  StageTimings timings = it->second->timings;
  auto result = execute(it->second->program, bindings, &timings);
  ctx.last_timings_ = timings;
  ++s.executions;
  return std::move(result.outputs);
}

int CompiledFunction::trace_count() const { return state_->traces; }
int CompiledFunction::cache_hits() const { return state_->hits; }
int CompiledFunction::executions() const { return state_->executions; }

ArrayMap OutlinedFunction::operator()(const std::vector<Array>& args) const {
  State& s = *state_;
  ArrayContext& ctx = *s.ctx;
  if (ctx.mode() == Mode::kEager) {
    ArrayMap results = s.fn(ctx, args);
    check_results(results, &ctx, s.name);
    return results;
  }
  const std::string sig = array_signature(args);
  auto it = s.definitions.find(sig);
  if (it == s.definitions.end()) {
    const std::string base = sanitize_identifier(s.name);
    std::vector<Array> params;
    std::vector<std::pair<std::string, NodeRef>> param_nodes;
    for (std::size_t k = 0; k < args.size(); ++k) {
      if (!args[k]) {
        params.emplace_back();
        continue;
      }
      Array p = ctx.placeholder(base + "_arg" + std::to_string(k), args[k].shape(), args[k].dtype());
      params.push_back(p);
      param_nodes.emplace_back(ordinal_name("arg", k), p.node());
    }
    const ArrayMap results = s.fn(ctx, params);
    check_results(results, &ctx, s.name);
    std::vector<std::pair<std::string, NodeRef>> result_nodes;
    for (const auto& [name, a] : results) result_nodes.emplace_back(name, a.node());
    it = s.definitions.emplace(sig, adfg::function_definition(s.name, std::move(param_nodes), std::move(result_nodes)))
             .first;
  }
  const NodeRef& def = it->second;
  std::vector<NodeRef> actual;
  for (const auto& a : args) {
    if (a) actual.push_back(ctx.unwrap(a));
  }
  NodeRef call = adfg::call(def, std::move(actual));
  ArrayMap out;
  for (const auto& [name, node] : def->as<FunctionPayload>().results) {
    out[name] = Array(&ctx, adfg::call_result(call, name));
  }
  return out;
}

int OutlinedFunction::definition_count() const { return static_cast<int>(state_->definitions.size()); }

// ---------------------------------------------------------------------------

namespace {

ArrayContext& context_of(const Array& a, const Array& b) {
  ArrayContext* ctx = a ? a.context() : b.context();
  if (!ctx) throw InvalidNode("array handle has no context");
  return *ctx;
}

}  // namespace

Array operator+(const Array& a, const Array& b) { return context_of(a, b).add(a, b); }
Array operator-(const Array& a, const Array& b) { return context_of(a, b).sub(a, b); }
Array operator*(const Array& a, const Array& b) { return context_of(a, b).mul(a, b); }
Array operator/(const Array& a, const Array& b) { return context_of(a, b).div(a, b); }
Array operator-(const Array& a) { return context_of(a, a).negative(a); }

Array operator+(const Array& a, double b) { auto& c = context_of(a, a); return c.add(a, c.constant_like(b, a)); }
Array operator-(const Array& a, double b) { auto& c = context_of(a, a); return c.sub(a, c.constant_like(b, a)); }
Array operator*(const Array& a, double b) { auto& c = context_of(a, a); return c.mul(a, c.constant_like(b, a)); }
Array operator/(const Array& a, double b) { auto& c = context_of(a, a); return c.div(a, c.constant_like(b, a)); }
Array operator+(double a, const Array& b) { auto& c = context_of(b, b); return c.add(c.constant_like(a, b), b); }
Array operator-(double a, const Array& b) { auto& c = context_of(b, b); return c.sub(c.constant_like(a, b), b); }
Array operator*(double a, const Array& b) { auto& c = context_of(b, b); return c.mul(c.constant_like(a, b), b); }
Array operator/(double a, const Array& b) { auto& c = context_of(b, b); return c.div(c.constant_like(a, b), b); }

}  // namespace arrayflow
