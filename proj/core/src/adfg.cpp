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

#include "arrayflow/adfg.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_set>

#include "arrayflow/errors.hpp"
#include "internal/hashing.hpp"

namespace arrayflow {

std::string AxisTag::to_string() const { return value ? key + "=" + *value : key; }

AffineIndex AffineIndex::identity(int axis, int rank) {
  AffineIndex a;
  a.coeffs.assign(static_cast<std::size_t>(rank), 0);
  a.coeffs[axis] = 1;
  return a;
}

AffineIndex AffineIndex::constant(std::int64_t value, int rank) {
  AffineIndex a;
  a.coeffs.assign(static_cast<std::size_t>(rank), 0);
  a.offset = value;
  return a;
}

bool AffineIndex::is_identity_of(int axis) const {
  if (offset != 0) return false;
  for (int k = 0; k < static_cast<int>(coeffs.size()); ++k) {
    if (coeffs[k] != (k == axis ? 1 : 0)) return false;
  }
  return axis < static_cast<int>(coeffs.size());
}

namespace sx {

ExprRef constant(double value, DType dtype) {
  auto e = std::make_shared<ScalarExpr>();
  e->kind = ScalarExpr::Kind::kConst;
  e->dtype = dtype;
  e->value = cast_value(dtype, value);
  return e;
}

ExprRef index(int axis) {
  auto e = std::make_shared<ScalarExpr>();
  e->kind = ScalarExpr::Kind::kIndex;
  e->dtype = DType::kI64;
  e->index = axis;
  return e;
}

ExprRef input(int position, std::vector<AffineIndex> access, DType dtype) {
  auto e = std::make_shared<ScalarExpr>();
  e->kind = ScalarExpr::Kind::kInput;
  e->dtype = dtype;
  e->index = position;
  e->access = std::move(access);
  return e;
}

ExprRef apply(OpCode op, std::vector<ExprRef> args) {
  std::vector<DType> dtypes;
  for (const auto& a : args) dtypes.push_back(a->dtype);
  auto e = std::make_shared<ScalarExpr>();
  e->kind = ScalarExpr::Kind::kApply;
  e->op = op;
  e->dtype = result_dtype(op, dtypes);
  e->args = std::move(args);
  return e;
}

}  // namespace sx

bool expr_equal(const ScalarExpr& a, const ScalarExpr& b) {
  if (&a == &b) return true;
  if (a.kind != b.kind || a.dtype != b.dtype) return false;
  switch (a.kind) {
    case ScalarExpr::Kind::kConst:
      return std::bit_cast<std::uint64_t>(a.value) == std::bit_cast<std::uint64_t>(b.value);
    case ScalarExpr::Kind::kIndex:
      return a.index == b.index;
    case ScalarExpr::Kind::kInput:
      return a.index == b.index && a.access == b.access;
    case ScalarExpr::Kind::kApply:
      if (a.op != b.op || a.args.size() != b.args.size()) return false;
      for (std::size_t i = 0; i < a.args.size(); ++i) {
        if (!expr_equal(*a.args[i], *b.args[i])) return false;
      }
      return true;
  }
  return false;
}

namespace {

std::string affine_string(const AffineIndex& a) {
  std::string s;
  for (std::size_t k = 0; k < a.coeffs.size(); ++k) {
    const auto c = a.coeffs[k];
    if (c == 0) continue;
    if (!s.empty()) s += c > 0 ? " + " : " - ";
    else if (c < 0) s += "-";
    const auto mag = c < 0 ? -c : c;
    if (mag != 1) s += std::to_string(mag) + "*";
    s += "i" + std::to_string(k);
  }
  if (a.offset != 0 || s.empty()) {
    if (s.empty()) return std::to_string(a.offset);
    s += a.offset > 0 ? " + " + std::to_string(a.offset) : " - " + std::to_string(-a.offset);
  }
  return s;
}

}  // namespace

std::string expr_string(const ScalarExpr& e) {
  switch (e.kind) {
    case ScalarExpr::Kind::kConst:
      return format_double(e.value);
    case ScalarExpr::Kind::kIndex:
      return "i" + std::to_string(e.index);
    case ScalarExpr::Kind::kInput: {
      std::string s = "in" + std::to_string(e.index) + "[";
      for (std::size_t j = 0; j < e.access.size(); ++j) {
        if (j) s += ", ";
        s += affine_string(e.access[j]);
      }
      return s + "]";
    }
    case ScalarExpr::Kind::kApply: {
      std::string s(op_name(e.op));
      s += "(";
      for (std::size_t j = 0; j < e.args.size(); ++j) {
        if (j) s += ", ";
        s += expr_string(*e.args[j]);
      }
      return s + ")";
    }
  }
  return "?";
}

namespace {

constexpr std::array<std::pair<NodeKind, std::string_view>, 14> kKindNames = {{
    {NodeKind::kData, "Data"},
    {NodeKind::kPlaceholder, "Placeholder"},
    {NodeKind::kIndexLambda, "IndexLambda"},
    {NodeKind::kReshape, "Reshape"},
    {NodeKind::kIndexing, "Indexing"},
    {NodeKind::kEinsum, "Einsum"},
    {NodeKind::kConcatenate, "Concatenate"},
    {NodeKind::kStack, "Stack"},
    {NodeKind::kFunctionDefinition, "FunctionDefinition"},
    {NodeKind::kCall, "Call"},
    {NodeKind::kCallResult, "CallResult"},
    {NodeKind::kSend, "Send"},
    {NodeKind::kReceive, "Receive"},
    {NodeKind::kSendWrapper, "SendWrapper"},
}};

}  // namespace

std::string_view kind_name(NodeKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "?";
}

NodeKind parse_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw InvalidNode("unknown node kind '" + std::string(name) + "'");
}

std::int64_t Slice::length() const {
  if (step <= 0 || stop <= start) return 0;
  return (stop - start + step - 1) / step;
}

std::string EinsumSpec::reduced() const {
  std::string out;
  for (const auto& sub : inputs) {
    for (char c : sub) {
      if (output.find(c) == std::string::npos && out.find(c) == std::string::npos) out += c;
    }
  }
  return out;
}

EinsumSpec parse_einsum(std::string_view spec, std::size_t num_inputs) {
  const auto arrow = spec.find("->");
  if (arrow == std::string_view::npos) {
    throw BadSubscript("einsum spec '" + std::string(spec) + "' lacks '->'");
  }
  EinsumSpec result;
  std::string_view lhs = spec.substr(0, arrow);
  std::string_view rhs = spec.substr(arrow + 2);
  std::size_t pos = 0;
  while (true) {
    const auto comma = lhs.find(',', pos);
    result.inputs.emplace_back(lhs.substr(pos, comma == std::string_view::npos ? lhs.npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  result.output = std::string(rhs);
  auto check_letters = [&](const std::string& s) {
    for (char c : s) {
      if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'))) {
        throw BadSubscript("einsum spec '" + std::string(spec) + "' has invalid character '" +
                           std::string(1, c) + "'");
      }
    }
  };
  for (const auto& s : result.inputs) check_letters(s);
  check_letters(result.output);
  if (result.inputs.size() != num_inputs) {
    throw BadSubscript("einsum spec '" + std::string(spec) + "' names " +
                       std::to_string(result.inputs.size()) + " operands, got " +
                       std::to_string(num_inputs));
  }
  for (std::size_t i = 0; i < result.output.size(); ++i) {
    const char c = result.output[i];
    if (result.output.find(c, i + 1) != std::string::npos) {
      throw BadSubscript("einsum spec '" + std::string(spec) + "' repeats output index '" +
                         std::string(1, c) + "'");
    }
    bool found = false;
    for (const auto& s : result.inputs) found = found || s.find(c) != std::string::npos;
    if (!found) {
      throw BadSubscript("einsum output index '" + std::string(1, c) + "' not in any input");
    }
  }
  return result;
}

Shape broadcast_shapes(std::span<const Shape> shapes) {
  std::size_t rank = 0;
  for (const auto& s : shapes) rank = std::max(rank, s.size());
  Shape out(rank, 1);
  for (const auto& s : shapes) {
    const std::size_t lead = rank - s.size();
    for (std::size_t j = 0; j < s.size(); ++j) {
      auto& o = out[lead + j];
      if (s[j] == o || s[j] == 1) continue;
      if (o == 1) {
        o = s[j];
        continue;
      }
      std::string msg = "cannot broadcast shapes";
      for (const auto& t : shapes) msg += " " + shape_string(t);
      throw ShapeMismatch(msg);
    }
  }
  return out;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() > static_cast<std::size_t>(kMaxRank)) {
    throw ShapeMismatch("rank " + std::to_string(shape.size()) + " exceeds maximum of " +
                        std::to_string(kMaxRank));
  }
  for (auto d : shape) {
    if (d < 0) throw ShapeMismatch("negative extent in shape " + shape_string(shape));
  }
}

Shape indexing_shape(const IndexingPayload& p, std::span<const Shape> inputs) {
  const Shape& in = inputs[0];
  if (p.selectors.size() != in.size()) {
    throw ShapeMismatch("indexing needs " + std::to_string(in.size()) + " selectors, got " +
                        std::to_string(p.selectors.size()));
  }
  Shape out;
  std::vector<int> used(inputs.size(), 0);
  for (std::size_t j = 0; j < in.size(); ++j) {
    const auto& sel = p.selectors[j];
    if (const auto* i = std::get_if<std::int64_t>(&sel)) {
      if (*i < 0 || *i >= in[j]) {
        throw ShapeMismatch("index " + std::to_string(*i) + " out of range for axis " +
                            std::to_string(j) + " of extent " + std::to_string(in[j]));
      }
    } else if (const auto* s = std::get_if<Slice>(&sel)) {
      if (s->step < 1 || s->start < 0 || s->stop < s->start || s->stop > in[j]) {
        throw ShapeMismatch("slice [" + std::to_string(s->start) + ":" + std::to_string(s->stop) +
                            ":" + std::to_string(s->step) + "] invalid for axis " +
                            std::to_string(j) + " of extent " + std::to_string(in[j]));
      }
      out.push_back(s->length());
    } else {
      const auto& a = std::get<ArraySelector>(sel);
      if (a.input < 1 || a.input >= static_cast<int>(inputs.size())) {
        throw InvalidNode("index-array selector refers to missing input " +
                          std::to_string(a.input));
      }
      used[a.input]++;
      for (auto d : inputs[a.input]) out.push_back(d);
    }
  }
  for (std::size_t k = 1; k < inputs.size(); ++k) {
    if (used[k] != 1) throw InvalidNode("index array input " + std::to_string(k) + " must be used once");
  }
  return out;
}

Shape einsum_shape(const EinsumPayload& p, std::span<const Shape> inputs) {
  const auto spec = parse_einsum(p.spec, inputs.size());
  std::map<char, std::int64_t> extent;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& sub = spec.inputs[k];
    if (sub.size() != inputs[k].size()) {
      throw BadSubscript("einsum operand " + std::to_string(k) + " has rank " +
                         std::to_string(inputs[k].size()) + " but subscript '" + sub + "'");
    }
    for (std::size_t j = 0; j < sub.size(); ++j) {
      auto [it, inserted] = extent.emplace(sub[j], inputs[k][j]);
      if (!inserted && it->second != inputs[k][j]) {
        throw ShapeMismatch("einsum index '" + std::string(1, sub[j]) + "' has extents " +
                            std::to_string(it->second) + " and " + std::to_string(inputs[k][j]));
      }
    }
  }
  Shape out;
  for (char c : spec.output) out.push_back(extent.at(c));
  return out;
}

}  // namespace

Shape infer_shape(NodeKind kind, const Payload& payload, std::span<const Shape> inputs) {
  auto need_inputs = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw InvalidNode(std::string(kind_name(kind)) + " expects " + std::to_string(n) +
                        " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case NodeKind::kData:
      need_inputs(0);
      return std::get<DataPayload>(payload).shape;
    case NodeKind::kPlaceholder:
      need_inputs(0);
      return std::get<PlaceholderPayload>(payload).shape;
    case NodeKind::kReceive:
      need_inputs(0);
      return std::get<ReceivePayload>(payload).shape;
    case NodeKind::kIndexLambda:
      return std::get<IndexLambdaPayload>(payload).shape;
    case NodeKind::kReshape: {
      need_inputs(1);
      const auto& target = std::get<ReshapePayload>(payload).shape;
      if (element_count(target) != element_count(inputs[0])) {
        throw ShapeMismatch("cannot reshape " + shape_string(inputs[0]) + " to " +
                            shape_string(target));
      }
      return target;
    }
    case NodeKind::kIndexing:
      if (inputs.empty()) need_inputs(1);
      return indexing_shape(std::get<IndexingPayload>(payload), inputs);
    case NodeKind::kEinsum:
      return einsum_shape(std::get<EinsumPayload>(payload), inputs);
    case NodeKind::kConcatenate: {
      if (inputs.empty()) throw InvalidNode("Concatenate needs at least one input");
      const int axis = std::get<AxisPayload>(payload).axis;
      Shape out = inputs[0];
      if (axis < 0 || axis >= static_cast<int>(out.size())) {
        throw ShapeMismatch("concatenation axis " + std::to_string(axis) + " out of range");
      }
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        const auto& s = inputs[k];
        bool ok = s.size() == out.size();
        for (std::size_t j = 0; ok && j < s.size(); ++j) {
          ok = static_cast<int>(j) == axis || s[j] == out[j];
        }
        if (!ok) {
          throw ShapeMismatch("cannot concatenate " + shape_string(inputs[0]) + " and " +
                              shape_string(s) + " along axis " + std::to_string(axis));
        }
        out[axis] += s[axis];
      }
      return out;
    }
    case NodeKind::kStack: {
      if (inputs.empty()) throw InvalidNode("Stack needs at least one input");
      const int axis = std::get<AxisPayload>(payload).axis;
      for (const auto& s : inputs) {
        if (s != inputs[0]) {
          throw ShapeMismatch("cannot stack " + shape_string(inputs[0]) + " and " + shape_string(s));
        }
      }
      if (axis < 0 || axis > static_cast<int>(inputs[0].size())) {
        throw ShapeMismatch("stack axis " + std::to_string(axis) + " out of range");
      }
      Shape out = inputs[0];
      out.insert(out.begin() + axis, static_cast<std::int64_t>(inputs.size()));
      return out;
    }
    case NodeKind::kSend:
      need_inputs(1);
      return inputs[0];
    case NodeKind::kSendWrapper:
      need_inputs(2);
      return inputs[0];
    case NodeKind::kFunctionDefinition:
    case NodeKind::kCall:
      return {};
    case NodeKind::kCallResult:
      throw InvalidNode("CallResult shape depends on its Call node");
  }
  return {};
}

DType infer_dtype(NodeKind kind, const Payload& payload, std::span<const DType> inputs) {
  switch (kind) {
    case NodeKind::kData: return std::get<DataPayload>(payload).dtype;
    case NodeKind::kPlaceholder: return std::get<PlaceholderPayload>(payload).dtype;
    case NodeKind::kReceive: return std::get<ReceivePayload>(payload).dtype;
    case NodeKind::kIndexLambda: return std::get<IndexLambdaPayload>(payload).expr->dtype;
    case NodeKind::kEinsum: {
      DType d = inputs.empty() ? DType::kF64 : inputs[0];
      for (auto t : inputs) d = promote(d, t);
      return d == DType::kBool ? DType::kI64 : d;
    }
    case NodeKind::kReshape:
    case NodeKind::kIndexing:
    case NodeKind::kSend:
    case NodeKind::kSendWrapper:
    case NodeKind::kConcatenate:
    case NodeKind::kStack:
      if (inputs.empty()) throw InvalidNode(std::string(kind_name(kind)) + " has no inputs");
      if (kind == NodeKind::kConcatenate || kind == NodeKind::kStack) {
        for (auto t : inputs) {
          if (t != inputs[0]) {
            throw DTypeMismatch(std::string(kind_name(kind)) + " inputs have dtypes " +
                                std::string(dtype_name(inputs[0])) + " and " +
                                std::string(dtype_name(t)));
          }
        }
      }
      return inputs[0];
    case NodeKind::kFunctionDefinition:
    case NodeKind::kCall:
      return DType::kF64;
    case NodeKind::kCallResult:
      throw InvalidNode("CallResult dtype depends on its Call node");
  }
  return DType::kF64;
}

namespace {

// Range of an affine index over the box [0, extent).
std::pair<std::int64_t, std::int64_t> affine_range(const AffineIndex& a, const Shape& domain) {
  std::int64_t lo = a.offset;
  std::int64_t hi = a.offset;
  for (std::size_t k = 0; k < a.coeffs.size(); ++k) {
    const auto c = a.coeffs[k];
    const auto top = domain[k] - 1;
    if (c > 0) hi += c * top;
    else lo += c * top;
  }
  return {lo, hi};
}

void validate_lambda(const ScalarExpr& e, const Shape& shape, std::span<const NodeRef> inputs) {
  switch (e.kind) {
    case ScalarExpr::Kind::kConst:
      return;
    case ScalarExpr::Kind::kIndex:
      if (e.index < 0 || e.index >= static_cast<int>(shape.size())) {
        throw InvalidNode("index variable i" + std::to_string(e.index) + " out of range for rank " +
                          std::to_string(shape.size()));
      }
      return;
    case ScalarExpr::Kind::kInput: {
      if (e.index < 0 || e.index >= static_cast<int>(inputs.size())) {
        throw InvalidNode("expression references missing input " + std::to_string(e.index));
      }
      const auto& in = *inputs[e.index];
      if (in.dtype() != e.dtype) {
        throw DTypeMismatch("expression reads input " + std::to_string(e.index) + " as " +
                            std::string(dtype_name(e.dtype)) + " but it is " +
                            std::string(dtype_name(in.dtype())));
      }
      if (static_cast<int>(e.access.size()) != in.rank()) {
        throw ShapeMismatch("access to input " + std::to_string(e.index) + " has " +
                            std::to_string(e.access.size()) + " indices for rank " +
                            std::to_string(in.rank()));
      }
      const bool empty_domain = element_count(shape) == 0;
      for (std::size_t j = 0; j < e.access.size(); ++j) {
        const auto& a = e.access[j];
        if (a.coeffs.size() != shape.size()) {
          throw InvalidNode("affine index has " + std::to_string(a.coeffs.size()) +
                            " coefficients for rank " + std::to_string(shape.size()));
        }
        if (empty_domain) continue;
        auto [lo, hi] = affine_range(a, shape);
        if (lo < 0 || hi >= in.shape()[j]) {
          throw ShapeMismatch("access to input " + std::to_string(e.index) + " axis " +
                              std::to_string(j) + " spans [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "] outside extent " +
                              std::to_string(in.shape()[j]));
        }
      }
      return;
    }
    case ScalarExpr::Kind::kApply: {
      if (static_cast<int>(e.args.size()) != arity(e.op)) {
        throw InvalidNode("operator arity mismatch for " + std::string(op_name(e.op)));
      }
      std::vector<DType> dts;
      for (const auto& a : e.args) {
        validate_lambda(*a, shape, inputs);
        dts.push_back(a->dtype);
      }
      if (result_dtype(e.op, dts) != e.dtype) {
        throw DTypeMismatch("expression dtype inconsistent for " + std::string(op_name(e.op)));
      }
      return;
    }
  }
}

void hash_expr(Hasher& h, const ScalarExpr& e) {
  h.mix(static_cast<std::uint64_t>(e.kind));
  h.mix(static_cast<std::uint64_t>(e.dtype));
  switch (e.kind) {
    case ScalarExpr::Kind::kConst: h.mix_double(e.value); break;
    case ScalarExpr::Kind::kIndex: h.mix(static_cast<std::uint64_t>(e.index)); break;
    case ScalarExpr::Kind::kInput:
      h.mix(static_cast<std::uint64_t>(e.index));
      for (const auto& a : e.access) {
        for (auto c : a.coeffs) h.mix(static_cast<std::uint64_t>(c));
        h.mix(static_cast<std::uint64_t>(a.offset));
        h.mix(0xA5A5);
      }
      break;
    case ScalarExpr::Kind::kApply:
      h.mix(static_cast<std::uint64_t>(e.op));
      for (const auto& a : e.args) hash_expr(h, *a);
      break;
  }
}

struct PayloadHasher {
  Hasher& h;
  void operator()(const std::monostate&) const {}
  void operator()(const DataPayload& p) const {
    h.mix_string(p.name);
    for (double v : *p.values) h.mix_double(v);
  }
  void operator()(const PlaceholderPayload& p) const { h.mix_string(p.name); }
  void operator()(const IndexLambdaPayload& p) const { hash_expr(h, *p.expr); }
  void operator()(const ReshapePayload&) const {}
  void operator()(const IndexingPayload& p) const {
    for (const auto& s : p.selectors) {
      h.mix(s.index());
      if (const auto* i = std::get_if<std::int64_t>(&s)) h.mix(static_cast<std::uint64_t>(*i));
      if (const auto* sl = std::get_if<Slice>(&s)) {
        h.mix(static_cast<std::uint64_t>(sl->start));
        h.mix(static_cast<std::uint64_t>(sl->stop));
        h.mix(static_cast<std::uint64_t>(sl->step));
      }
      if (const auto* a = std::get_if<ArraySelector>(&s)) h.mix(static_cast<std::uint64_t>(a->input));
    }
  }
  void operator()(const EinsumPayload& p) const { h.mix_string(p.spec); }
  void operator()(const AxisPayload& p) const { h.mix(static_cast<std::uint64_t>(p.axis)); }
  void operator()(const FunctionPayload& p) const {
    h.mix_string(p.name);
    for (const auto& [n, node] : p.params) {
      h.mix_string(n);
      h.mix(node->hash());
    }
    for (const auto& [n, node] : p.results) {
      h.mix_string(n);
      h.mix(node->hash());
    }
  }
  void operator()(const CallPayload& p) const { h.mix(p.function->hash()); }
  void operator()(const CallResultPayload& p) const { h.mix_string(p.name); }
  void operator()(const SendPayload& p) const {
    h.mix(static_cast<std::uint64_t>(p.dest));
    h.mix(static_cast<std::uint64_t>(p.tag));
  }
  void operator()(const ReceivePayload& p) const {
    h.mix(static_cast<std::uint64_t>(p.source));
    h.mix(static_cast<std::uint64_t>(p.tag));
  }
};

AxisTagList normalize_tags(AxisTagList tags, int rank) {
  bool any = false;
  for (const auto& t : tags) any = any || !t.empty();
  if (!any) return {};
  if (static_cast<int>(tags.size()) != rank) {
    throw InvalidNode("axis tag list has " + std::to_string(tags.size()) + " entries for rank " +
                      std::to_string(rank));
  }
  for (auto& axis : tags) {
    std::sort(axis.begin(), axis.end());
    for (std::size_t i = 1; i < axis.size(); ++i) {
      if (axis[i].key == axis[i - 1].key) {
        throw InvalidNode("axis carries two tags with key '" + axis[i].key + "'");
      }
    }
  }
  return tags;
}

void validate_function(const FunctionPayload& p) {
  std::vector<NodeRef> roots;
  for (const auto& [name, node] : p.params) {
    if (node->kind() != NodeKind::kPlaceholder) {
      throw InvalidNode("function parameter '" + name + "' is not a placeholder");
    }
  }
  for (const auto& [name, node] : p.results) roots.push_back(node);
  for (const auto& n : topo_order(roots)) {
    if (n->kind() == NodeKind::kPlaceholder) {
      bool found = false;
      for (const auto& [name, param] : p.params) found = found || structurally_equal(param, n);
      if (!found) {
        throw InvalidNode("function '" + p.name + "' body references foreign " + describe(*n));
      }
    }
    if (n->kind() == NodeKind::kSend || n->kind() == NodeKind::kReceive ||
        n->kind() == NodeKind::kSendWrapper) {
      throw InvalidNode("function '" + p.name + "' body contains communication");
    }
  }
}

}  // namespace

NodeRef Node::create(NodeKind kind, std::vector<NodeRef> inputs, Payload payload,
                     AxisTagList tags, bool materialize) {
  for (const auto& in : inputs) {
    if (!in) throw InvalidNode(std::string(kind_name(kind)) + " given a null input");
  }
  Shape shape;
  DType dtype = DType::kF64;
  std::vector<Shape> in_shapes;
  std::vector<DType> in_dtypes;
  for (const auto& in : inputs) {
    in_shapes.push_back(in->shape());
    in_dtypes.push_back(in->dtype());
  }

  switch (kind) {
    case NodeKind::kData: {
      const auto& p = std::get<DataPayload>(payload);
      check_shape(p.shape);
      if (!p.values || static_cast<std::int64_t>(p.values->size()) != element_count(p.shape)) {
        throw ShapeMismatch("Data values do not match shape " + shape_string(p.shape));
      }
      break;
    }
    case NodeKind::kPlaceholder:
      check_shape(std::get<PlaceholderPayload>(payload).shape);
      break;
    case NodeKind::kIndexLambda: {
      const auto& p = std::get<IndexLambdaPayload>(payload);
      check_shape(p.shape);
      if (!p.expr) throw InvalidNode("IndexLambda without expression");
      validate_lambda(*p.expr, p.shape, inputs);
      break;
    }
    case NodeKind::kIndexing:
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        if (inputs[k]->dtype() != DType::kI64) {
          throw DTypeMismatch("index arrays must be i64, got " +
                              std::string(dtype_name(inputs[k]->dtype())));
        }
      }
      break;
    case NodeKind::kFunctionDefinition:
      if (!inputs.empty()) throw InvalidNode("FunctionDefinition takes no inputs");
      validate_function(std::get<FunctionPayload>(payload));
      break;
    case NodeKind::kCall: {
      const auto& p = std::get<CallPayload>(payload);
      if (!p.function || p.function->kind() != NodeKind::kFunctionDefinition) {
        throw InvalidNode("Call must reference a FunctionDefinition");
      }
      const auto& fn = p.function->as<FunctionPayload>();
      if (fn.params.size() != inputs.size()) {
        throw InvalidNode("call to '" + fn.name + "' passes " + std::to_string(inputs.size()) +
                          " arguments for " + std::to_string(fn.params.size()) + " parameters");
      }
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& param = *fn.params[k].second;
        if (param.shape() != inputs[k]->shape()) {
          throw ShapeMismatch("argument '" + fn.params[k].first + "' of '" + fn.name +
                              "' has shape " + shape_string(inputs[k]->shape()) + ", expected " +
                              shape_string(param.shape()));
        }
        if (param.dtype() != inputs[k]->dtype()) {
          throw DTypeMismatch("argument '" + fn.params[k].first + "' of '" + fn.name +
                              "' has dtype " + std::string(dtype_name(inputs[k]->dtype())));
        }
      }
      break;
    }
    case NodeKind::kCallResult: {
      if (inputs.size() != 1 || inputs[0]->kind() != NodeKind::kCall) {
        throw InvalidNode("CallResult needs exactly one Call input");
      }
      const auto& fn = inputs[0]->as<CallPayload>().function->as<FunctionPayload>();
      const auto& name = std::get<CallResultPayload>(payload).name;
      NodeRef result;
      for (const auto& [n, node] : fn.results) {
        if (n == name) result = node;
      }
      if (!result) throw InvalidNode("function '" + fn.name + "' has no result '" + name + "'");
      shape = result->shape();
      dtype = result->dtype();
      break;
    }
    case NodeKind::kSend:
      if (std::get<SendPayload>(payload).dest < 0) throw InvalidNode("negative send destination");
      break;
    case NodeKind::kReceive:
      check_shape(std::get<ReceivePayload>(payload).shape);
      break;
    case NodeKind::kSendWrapper:
      if (inputs.size() != 2 || inputs[1]->kind() != NodeKind::kSend) {
        throw InvalidNode("SendWrapper needs (passthrough, Send) inputs");
      }
      break;
    default:
      break;
  }

  if (kind != NodeKind::kCallResult) {
    shape = infer_shape(kind, payload, in_shapes);
    dtype = infer_dtype(kind, payload, in_dtypes);
  }
  check_shape(shape);

  std::shared_ptr<Node> node(new Node());
  node->kind_ = kind;
  node->shape_ = std::move(shape);
  node->dtype_ = dtype;
  node->tags_ = normalize_tags(std::move(tags), node->rank());
  node->inputs_ = std::move(inputs);
  node->payload_ = std::move(payload);
  node->materialize_ = materialize;

  Hasher h;
  h.mix(static_cast<std::uint64_t>(node->kind_));
  h.mix(static_cast<std::uint64_t>(node->dtype_));
  for (auto d : node->shape_) h.mix(static_cast<std::uint64_t>(d));
  h.mix(0x5151);
  for (std::size_t a = 0; a < node->tags_.size(); ++a) {
    for (const auto& t : node->tags_[a]) {
      h.mix(a);
      h.mix_string(t.key);
      h.mix(t.value ? 1 : 0);
      if (t.value) h.mix_string(*t.value);
    }
  }
  h.mix(node->materialize_ ? 0x77 : 0x11);
  std::visit(PayloadHasher{h}, node->payload_);
  for (const auto& in : node->inputs_) h.mix(in->hash());
  node->hash_ = h.value();
  return node;
}

const AxisTags& Node::tags_on(int axis) const {
  static const AxisTags kEmpty;
  if (tags_.empty()) return kEmpty;
  return tags_.at(static_cast<std::size_t>(axis));
}

NodeRef Node::with_inputs(std::vector<NodeRef> inputs) const {
  return create(kind_, std::move(inputs), payload_, tags_, materialize_);
}

NodeRef Node::with_tags(AxisTagList tags) const {
  return create(kind_, inputs_, payload_, std::move(tags), materialize_);
}

NodeRef Node::with_materialized(bool flag) const {
  return create(kind_, inputs_, payload_, tags_, flag);
}

namespace {

struct PairHash {
  std::size_t operator()(const std::pair<const Node*, const Node*>& p) const {
    return std::hash<const void*>()(p.first) * 31 + std::hash<const void*>()(p.second);
  }
};

class EqualityChecker {
 public:
  bool equal(const NodeRef& a, const NodeRef& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    if (a->hash() != b->hash()) return false;
    const auto key = std::make_pair(a.get(), b.get());
    if (known_.count(key)) return true;
    if (!shallow_equal(*a, *b)) return false;
    if (a->inputs().size() != b->inputs().size()) return false;
    for (std::size_t i = 0; i < a->inputs().size(); ++i) {
      if (!equal(a->inputs()[i], b->inputs()[i])) return false;
    }
    known_.insert(key);
    return true;
  }

 private:
  bool shallow_equal(const Node& a, const Node& b) {
    if (a.kind() != b.kind() || a.shape() != b.shape() || a.dtype() != b.dtype() ||
        a.axis_tags() != b.axis_tags() || a.materialized() != b.materialized() ||
        a.payload().index() != b.payload().index()) {
      return false;
    }
    switch (a.kind()) {
      case NodeKind::kData: {
        const auto& p = a.as<DataPayload>();
        const auto& q = b.as<DataPayload>();
        if (p.name != q.name || p.values->size() != q.values->size()) return false;
        return p.values->empty() ||
               std::memcmp(p.values->data(), q.values->data(), p.values->size() * sizeof(double)) == 0;
      }
      case NodeKind::kPlaceholder:
        return a.as<PlaceholderPayload>().name == b.as<PlaceholderPayload>().name;
      case NodeKind::kIndexLambda:
        return expr_equal(*a.as<IndexLambdaPayload>().expr, *b.as<IndexLambdaPayload>().expr);
      case NodeKind::kReshape:
        return true;
      case NodeKind::kIndexing:
        return a.as<IndexingPayload>().selectors == b.as<IndexingPayload>().selectors;
      case NodeKind::kEinsum:
        return a.as<EinsumPayload>().spec == b.as<EinsumPayload>().spec;
      case NodeKind::kConcatenate:
      case NodeKind::kStack:
        return a.as<AxisPayload>().axis == b.as<AxisPayload>().axis;
      case NodeKind::kFunctionDefinition: {
        const auto& p = a.as<FunctionPayload>();
        const auto& q = b.as<FunctionPayload>();
        if (p.name != q.name || p.params.size() != q.params.size() ||
            p.results.size() != q.results.size()) {
          return false;
        }
        for (std::size_t i = 0; i < p.params.size(); ++i) {
          if (p.params[i].first != q.params[i].first || !equal(p.params[i].second, q.params[i].second)) return false;
        }
        for (std::size_t i = 0; i < p.results.size(); ++i) {
          if (p.results[i].first != q.results[i].first || !equal(p.results[i].second, q.results[i].second)) return false;
        }
        return true;
      }
      case NodeKind::kCall:
        return equal(a.as<CallPayload>().function, b.as<CallPayload>().function);
      case NodeKind::kCallResult:
        return a.as<CallResultPayload>().name == b.as<CallResultPayload>().name;
      case NodeKind::kSend:
        return a.as<SendPayload>().dest == b.as<SendPayload>().dest &&
               a.as<SendPayload>().tag == b.as<SendPayload>().tag;
      case NodeKind::kReceive:
        return a.as<ReceivePayload>().source == b.as<ReceivePayload>().source &&
               a.as<ReceivePayload>().tag == b.as<ReceivePayload>().tag;
      case NodeKind::kSendWrapper:
        return true;
    }
    return false;
  }

  std::unordered_set<std::pair<const Node*, const Node*>, PairHash> known_;
};

}  // namespace

bool structurally_equal(const NodeRef& a, const NodeRef& b) {
  EqualityChecker checker;
  return checker.equal(a, b);
}

std::string describe(const Node& node) {
  std::string s(kind_name(node.kind()));
  if (node.kind() == NodeKind::kData && !node.as<DataPayload>().name.empty()) {
    s += " '" + node.as<DataPayload>().name + "'";
  } else if (node.kind() == NodeKind::kPlaceholder) {
    s += " '" + node.as<PlaceholderPayload>().name + "'";
  } else if (node.kind() == NodeKind::kFunctionDefinition) {
    s += " '" + node.as<FunctionPayload>().name + "'";
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "#%08x", static_cast<unsigned>(node.hash() & 0xffffffffu));
  s += buf;
  s += " " + std::string(dtype_name(node.dtype())) + shape_string(node.shape());
  return s;
}

std::vector<NodeRef> topo_order(std::span<const NodeRef> roots) {
  // First-use order: iterative DFS preorder from the roots.
  std::unordered_map<const Node*, std::size_t> first_use;
  std::vector<NodeRef> discovered;
  std::vector<NodeRef> stack;
  for (auto it = roots.rbegin(); it != roots.rend(); ++it) stack.push_back(*it);
  while (!stack.empty()) {
    NodeRef n = stack.back();
    stack.pop_back();
    if (first_use.count(n.get())) continue;
    first_use.emplace(n.get(), discovered.size());
    discovered.push_back(n);
    const auto& ins = n->inputs();
    for (auto it = ins.rbegin(); it != ins.rend(); ++it) {
      if (!first_use.count(it->get())) stack.push_back(*it);
    }
  }

  std::unordered_map<const Node*, int> pending;
  std::unordered_map<const Node*, std::vector<const Node*>> consumers;
  for (const auto& n : discovered) {
    std::unordered_set<const Node*> distinct;
    for (const auto& in : n->inputs()) distinct.insert(in.get());
    pending[n.get()] = static_cast<int>(distinct.size());
    for (const Node* in : distinct) consumers[in].push_back(n.get());
  }

  using Key = std::pair<std::uint64_t, std::size_t>;
  std::priority_queue<Key, std::vector<Key>, std::greater<Key>> ready;
  for (const auto& n : discovered) {
    if (pending[n.get()] == 0) ready.emplace(n->hash(), first_use[n.get()]);
  }
  std::vector<NodeRef> order;
  order.reserve(discovered.size());
  while (!ready.empty()) {
    const auto [h, idx] = ready.top();
    ready.pop();
    const NodeRef& n = discovered[idx];
    order.push_back(n);
    for (const Node* c : consumers[n.get()]) {
      if (--pending[c] == 0) ready.emplace(c->hash(), first_use[c]);
    }
  }
  return order;
}

std::vector<NodeRef> topo_order(const Graph& graph) {
  std::vector<NodeRef> roots;
  for (const auto& [name, node] : graph.outputs) roots.push_back(node);
  return topo_order(roots);
}

int SuccessorCounts::successors_of(const Node& n) const {
  auto it = successors.find(&n);
  return it == successors.end() ? 0 : it->second;
}

int SuccessorCounts::uses_of(const Node& n) const {
  auto it = uses.find(&n);
  return it == uses.end() ? 0 : it->second;
}

SuccessorCounts count_successors(const Graph& graph) {
  SuccessorCounts counts;
  for (const auto& n : topo_order(graph)) {
    counts.successors.try_emplace(n.get(), 0);
    counts.uses.try_emplace(n.get(), 0);
    std::unordered_set<const Node*> distinct;
    for (const auto& in : n->inputs()) {
      counts.uses[in.get()]++;
      if (distinct.insert(in.get()).second) counts.successors[in.get()]++;
    }
  }
  return counts;
}

Graph rewrite_graph(const Graph& graph, const RewriteFn& fn) {
  std::unordered_map<const Node*, NodeRef> mapped;
  for (const auto& n : topo_order(graph)) {
    std::vector<NodeRef> ins;
    ins.reserve(n->inputs().size());
    for (const auto& in : n->inputs()) ins.push_back(mapped.at(in.get()));
    mapped[n.get()] = fn(n, std::move(ins));
  }
  Graph out;
  for (const auto& [name, node] : graph.outputs) out.outputs[name] = mapped.at(node.get());
  return out;
}

Graph function_body(const Node& function_definition) {
  Graph g;
  for (const auto& [name, node] : function_definition.as<FunctionPayload>().results) {
    g.outputs[name] = node;
  }
  return g;
}

namespace adfg {

NodeRef data(std::string name, const NdArray& values) {
  auto vals = std::make_shared<std::vector<double>>(values.data);
  for (auto& v : *vals) v = cast_value(values.dtype, v);
  return Node::create(NodeKind::kData, {},
                      DataPayload{std::move(name), values.shape, values.dtype, std::move(vals)});
}

NodeRef data(const NdArray& values) { return data("", values); }

NodeRef scalar(double value, DType dtype) { return data(NdArray::scalar(value, dtype)); }

NodeRef placeholder(std::string name, Shape shape, DType dtype) {
  if (name.empty()) throw InvalidNode("placeholder needs a name");
  return Node::create(NodeKind::kPlaceholder, {},
                      PlaceholderPayload{std::move(name), std::move(shape), dtype});
}

NodeRef index_lambda(Shape shape, ExprRef expr, std::vector<NodeRef> inputs) {
  return Node::create(NodeKind::kIndexLambda, std::move(inputs),
                      IndexLambdaPayload{std::move(shape), std::move(expr)});
}

NodeRef elementwise_expr(std::vector<NodeRef> inputs,
                         const std::function<ExprRef(std::span<const ExprRef>)>& compose) {
  std::vector<Shape> shapes;
  for (const auto& in : inputs) shapes.push_back(in->shape());
  const Shape out = broadcast_shapes(shapes);
  const int rank = static_cast<int>(out.size());
  std::vector<ExprRef> reads;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& s = inputs[k]->shape();
    const int lead = rank - static_cast<int>(s.size());
    std::vector<AffineIndex> access;
    for (int j = 0; j < static_cast<int>(s.size()); ++j) {
      const int axis = lead + j;
      if (s[j] == 1 && out[axis] != 1) access.push_back(AffineIndex::constant(0, rank));
      else access.push_back(AffineIndex::identity(axis, rank));
    }
    reads.push_back(sx::input(static_cast<int>(k), std::move(access), inputs[k]->dtype()));
  }
  return index_lambda(out, compose(reads), std::move(inputs));
}

NodeRef elementwise(OpCode op, std::vector<NodeRef> inputs) {
  return elementwise_expr(std::move(inputs), [op](std::span<const ExprRef> args) {
    return sx::apply(op, std::vector<ExprRef>(args.begin(), args.end()));
  });
}

NodeRef reshape(NodeRef input, Shape shape) {
  return Node::create(NodeKind::kReshape, {std::move(input)}, ReshapePayload{std::move(shape)});
}

NodeRef indexing(NodeRef input, std::vector<Selector> selectors, std::vector<NodeRef> index_arrays) {
  while (selectors.size() < static_cast<std::size_t>(input->rank())) {
    selectors.emplace_back(Slice{0, input->shape()[selectors.size()], 1});
  }
  std::vector<NodeRef> inputs{std::move(input)};
  for (auto& a : index_arrays) inputs.push_back(std::move(a));
  return Node::create(NodeKind::kIndexing, std::move(inputs), IndexingPayload{std::move(selectors)});
}

NodeRef einsum(std::string spec, std::vector<NodeRef> inputs) {
  return Node::create(NodeKind::kEinsum, std::move(inputs), EinsumPayload{std::move(spec)});
}

NodeRef concatenate(std::vector<NodeRef> inputs, int axis) {
  return Node::create(NodeKind::kConcatenate, std::move(inputs), AxisPayload{axis});
}

NodeRef stack(std::vector<NodeRef> inputs, int axis) {
  return Node::create(NodeKind::kStack, std::move(inputs), AxisPayload{axis});
}

NodeRef function_definition(std::string name, std::vector<std::pair<std::string, NodeRef>> params,
                            std::vector<std::pair<std::string, NodeRef>> results) {
  return Node::create(NodeKind::kFunctionDefinition, {},
                      FunctionPayload{std::move(name), std::move(params), std::move(results)});
}

NodeRef call(NodeRef function, std::vector<NodeRef> args) {
  return Node::create(NodeKind::kCall, std::move(args), CallPayload{std::move(function)});
}

NodeRef call_result(NodeRef call, std::string name) {
  return Node::create(NodeKind::kCallResult, {std::move(call)}, CallResultPayload{std::move(name)});
}

NodeRef send(NodeRef data, int dest, std::int64_t tag) {
  return Node::create(NodeKind::kSend, {std::move(data)}, SendPayload{dest, tag});
}

NodeRef receive(int source, std::int64_t tag, Shape shape, DType dtype) {
  return Node::create(NodeKind::kReceive, {}, ReceivePayload{source, tag, std::move(shape), dtype});
}

NodeRef send_wrapper(NodeRef passthrough, NodeRef send) {
  return Node::create(NodeKind::kSendWrapper, {std::move(passthrough), std::move(send)},
                      std::monostate{});
}

NodeRef tagged(const NodeRef& node, int axis, AxisTag tag) {
  AxisTagList tags = node->axis_tags();
  if (tags.empty()) tags.resize(static_cast<std::size_t>(node->rank()));
  if (axis < 0 || axis >= node->rank()) throw InvalidNode("tag axis out of range");
  auto& on_axis = tags[static_cast<std::size_t>(axis)];
  for (const auto& t : on_axis) {
    if (t.key == tag.key) throw InvalidNode("axis already carries a tag with key '" + tag.key + "'");
  }
  on_axis.push_back(std::move(tag));
  return node->with_tags(std::move(tags));
}

}  // namespace adfg
}  // namespace arrayflow
