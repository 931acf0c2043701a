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

#include "graph_io.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "arrayflow/errors.hpp"

namespace arrayflow::cli {
namespace {

// ---------------------------------------------------------------------------
// Scalars

Json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double to_double(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_boolean()) return j.get<bool>() ? 1.0 : 0.0;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw FormatError("expected a number, got " + j.dump());
}

const Json& field(const Json& obj, const char* name) {
  if (!obj.is_object() || !obj.contains(name)) throw FormatError(std::string("missing field '") + name + "'");
  return obj.at(name);
}

Shape to_shape(const Json& j) {
  if (!j.is_array()) throw FormatError("shape must be a list, got " + j.dump());
  Shape s;
  for (const auto& d : j) s.push_back(d.get<std::int64_t>());
  return s;
}

Json shape_json(const Shape& s) {
  Json j = Json::array();
  for (auto d : s) j.push_back(d);
  return j;
}

// ---------------------------------------------------------------------------
// Index-lambda expressions

Json affine_json(const AffineIndex& a) {
  Json coeffs = Json::array();
  for (auto c : a.coeffs) coeffs.push_back(c);
  return Json{{"coeffs", coeffs}, {"offset", a.offset}};
}

Json expr_json(const ScalarExpr& e) {
  switch (e.kind) {
    case ScalarExpr::Kind::kConst:
      return Json{{"const", number(e.value)}, {"dtype", dtype_name(e.dtype)}};
    case ScalarExpr::Kind::kIndex:
      return Json{{"index", e.index}};
    case ScalarExpr::Kind::kInput: {
      Json access = Json::array();
      for (const auto& a : e.access) access.push_back(affine_json(a));
      return Json{{"input", e.index}, {"access", access}, {"dtype", dtype_name(e.dtype)}};
    }
    case ScalarExpr::Kind::kApply: {
      Json args = Json::array();
      for (const auto& a : e.args) args.push_back(expr_json(*a));
      return Json{{"op", op_name(e.op)}, {"args", args}};
    }
  }
  return {};
}

ExprRef parse_expr(const Json& j) {
  if (j.contains("const")) {
    return sx::constant(to_double(j.at("const")), j.contains("dtype") ? parse_dtype(j.at("dtype").get<std::string>())
                                                                      : DType::kF64);
  }
  if (j.contains("index")) return sx::index(j.at("index").get<int>());
  if (j.contains("input")) {
    std::vector<AffineIndex> access;
    for (const auto& a : field(j, "access")) {
      AffineIndex ai;
      for (const auto& c : field(a, "coeffs")) ai.coeffs.push_back(c.get<std::int64_t>());
      ai.offset = a.value("offset", std::int64_t{0});
      access.push_back(std::move(ai));
    }
    return sx::input(j.at("input").get<int>(), std::move(access), parse_dtype(field(j, "dtype").get<std::string>()));
  }
  if (j.contains("op")) {
    std::vector<ExprRef> args;
    for (const auto& a : field(j, "args")) args.push_back(parse_expr(a));
    return sx::apply(parse_op(j.at("op").get<std::string>()), std::move(args));
  }
  throw FormatError("unrecognized scalar expression " + j.dump());
}

// ---------------------------------------------------------------------------
// Tags and selectors

Json tags_json(const AxisTagList& tags) {
  Json j = Json::array();
  for (const auto& axis : tags) {
    Json a = Json::array();
    for (const auto& t : axis) {
      Json tj{{"key", t.key}};
      if (t.value) tj["value"] = *t.value;
      a.push_back(tj);
    }
    j.push_back(a);
  }
  return j;
}

AxisTagList parse_tags(const Json& j) {
  AxisTagList out;
  for (const auto& axis : j) {
    AxisTags tags;
    for (const auto& t : axis) {
      AxisTag tag{field(t, "key").get<std::string>(), std::nullopt};
      if (t.contains("value") && !t.at("value").is_null()) tag.value = t.at("value").get<std::string>();
      tags.push_back(std::move(tag));
    }
    out.push_back(std::move(tags));
  }
  return out;
}

Json selector_json(const Selector& s) {
  if (const auto* i = std::get_if<std::int64_t>(&s)) return *i;
  if (const auto* sl = std::get_if<Slice>(&s)) return Json{{"slice", {sl->start, sl->stop, sl->step}}};
  return Json{{"array", std::get<ArraySelector>(s).input}};
}

Selector parse_selector(const Json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.contains("slice")) {
    const auto& s = j.at("slice");
    if (!s.is_array() || s.size() < 2 || s.size() > 3) throw FormatError("slice needs [start, stop(, step)]");
    return Slice{s[0].get<std::int64_t>(), s[1].get<std::int64_t>(), s.size() == 3 ? s[2].get<std::int64_t>() : 1};
  }
  if (j.contains("array")) return ArraySelector{j.at("array").get<int>()};
  throw FormatError("unrecognized selector " + j.dump());
}

// ---------------------------------------------------------------------------
// Nodes

class Writer {
 public:
  Json nodes = Json::array();

  std::string emit(const NodeRef& n) {
    auto it = ids_.find(n.get());
    if (it != ids_.end()) return it->second;
    for (const auto& in : n->inputs()) emit(in);
    Json payload = Json::object();
    switch (n->kind()) {
      case NodeKind::kData: {
        const auto& d = n->as<DataPayload>();
        payload["name"] = d.name;
        Json values = Json::array();
        for (double v : *d.values) values.push_back(number(v));
        payload["values"] = values;
        break;
      }
      case NodeKind::kPlaceholder:
        payload["name"] = n->as<PlaceholderPayload>().name;
        break;
      case NodeKind::kIndexLambda:
        payload["expr"] = expr_json(*n->as<IndexLambdaPayload>().expr);
        break;
      case NodeKind::kIndexing: {
        Json sel = Json::array();
        for (const auto& s : n->as<IndexingPayload>().selectors) sel.push_back(selector_json(s));
        payload["selectors"] = sel;
        break;
      }
      case NodeKind::kEinsum:
        payload["spec"] = n->as<EinsumPayload>().spec;
        break;
      case NodeKind::kConcatenate:
      case NodeKind::kStack:
        payload["axis"] = n->as<AxisPayload>().axis;
        break;
      case NodeKind::kFunctionDefinition: {
        const auto& f = n->as<FunctionPayload>();
        payload["name"] = f.name;
        Json params = Json::array();
        for (const auto& [name, p] : f.params) params.push_back({name, emit(p)});
        Json results = Json::array();
        for (const auto& [name, r] : f.results) results.push_back({name, emit(r)});
        payload["params"] = params;
        payload["results"] = results;
        break;
      }
      case NodeKind::kCall:
        payload["function"] = emit(n->as<CallPayload>().function);
        break;
      case NodeKind::kCallResult:
        payload["name"] = n->as<CallResultPayload>().name;
        break;
      case NodeKind::kSend: {
        const auto& s = n->as<SendPayload>();
        payload["dest"] = s.dest;
        payload["tag"] = s.tag;
        break;
      }
      case NodeKind::kReceive: {
        const auto& r = n->as<ReceivePayload>();
        payload["source"] = r.source;
        payload["tag"] = r.tag;
        break;
      }
      default:
        break;
    }
    const std::string id = "n" + std::to_string(ids_.size());
    Json j{{"id", id}, {"kind", kind_name(n->kind())}, {"shape", shape_json(n->shape())},
           {"dtype", dtype_name(n->dtype())}};
    Json inputs = Json::array();
    for (const auto& in : n->inputs()) inputs.push_back(ids_.at(in.get()));
    j["inputs"] = inputs;
    j["payload"] = payload;
    if (!n->axis_tags().empty()) j["axis_tags"] = tags_json(n->axis_tags());
    if (n->materialized()) j["materialize"] = true;
    nodes.push_back(std::move(j));
    ids_[n.get()] = id;
    return id;
  }

  const std::string& id_of(const Node* n) const { return ids_.at(n); }

 private:
  std::unordered_map<const Node*, std::string> ids_;
};

NodeRef parse_node(const Json& j, const std::unordered_map<std::string, NodeRef>& env) {
  const std::string kind_str = field(j, "kind").get<std::string>();
  std::vector<NodeRef> inputs;
  if (j.contains("inputs")) {
    for (const auto& id : j.at("inputs")) {
      auto it = env.find(id.get<std::string>());
      if (it == env.end()) throw FormatError("input '" + id.get<std::string>() + "' is not defined earlier");
      inputs.push_back(it->second);
    }
  }
  const Json payload = j.value("payload", Json::object());
  auto ref = [&](const Json& id) {
    auto it = env.find(id.get<std::string>());
    if (it == env.end()) throw FormatError("reference '" + id.get<std::string>() + "' is not defined earlier");
    return it->second;
  };
  auto dtype = [&] { return j.contains("dtype") ? parse_dtype(j.at("dtype").get<std::string>()) : DType::kF64; };

  // Convenience form for hand-written files; saved files spell out the lambda.
  if (kind_str == "Elementwise") {
    NodeRef n = adfg::elementwise(parse_op(field(payload, "op").get<std::string>()), std::move(inputs));
    if (j.contains("axis_tags")) n = n->with_tags(parse_tags(j.at("axis_tags")));
    return j.value("materialize", false) ? n->with_materialized(true) : n;
  }

  const NodeKind kind = parse_kind(kind_str);
  Payload p;
  switch (kind) {
    case NodeKind::kData: {
      const Shape shape = to_shape(field(j, "shape"));
      std::vector<double> values;
      const Json& vs = field(payload, "values");
      if (vs.is_array()) {
        for (const auto& v : vs) values.push_back(to_double(v));
      } else {
        values.push_back(to_double(vs));
      }
      NdArray array(shape, dtype(), std::move(values));
      auto vals = std::make_shared<std::vector<double>>(array.data);
      p = DataPayload{payload.value("name", std::string()), shape, dtype(), std::move(vals)};
      break;
    }
    case NodeKind::kPlaceholder:
      p = PlaceholderPayload{field(payload, "name").get<std::string>(), to_shape(field(j, "shape")), dtype()};
      break;
    case NodeKind::kIndexLambda:
      p = IndexLambdaPayload{to_shape(field(j, "shape")), parse_expr(field(payload, "expr"))};
      break;
    case NodeKind::kReshape:
      p = ReshapePayload{to_shape(field(j, "shape"))};
      break;
    case NodeKind::kIndexing: {
      IndexingPayload ip;
      for (const auto& s : field(payload, "selectors")) ip.selectors.push_back(parse_selector(s));
      p = std::move(ip);
      break;
    }
    case NodeKind::kEinsum:
      p = EinsumPayload{field(payload, "spec").get<std::string>()};
      break;
    case NodeKind::kConcatenate:
    case NodeKind::kStack:
      p = AxisPayload{payload.value("axis", 0)};
      break;
    case NodeKind::kFunctionDefinition: {
      FunctionPayload f;
      f.name = field(payload, "name").get<std::string>();
      for (const auto& pr : field(payload, "params")) f.params.emplace_back(pr.at(0).get<std::string>(), ref(pr.at(1)));
      for (const auto& r : field(payload, "results")) f.results.emplace_back(r.at(0).get<std::string>(), ref(r.at(1)));
      p = std::move(f);
      break;
    }
    case NodeKind::kCall:
      p = CallPayload{ref(field(payload, "function"))};
      break;
    case NodeKind::kCallResult:
      p = CallResultPayload{field(payload, "name").get<std::string>()};
      break;
    case NodeKind::kSend:
      p = SendPayload{field(payload, "dest").get<int>(), field(payload, "tag").get<std::int64_t>()};
      break;
    case NodeKind::kReceive:
      p = ReceivePayload{field(payload, "source").get<int>(), field(payload, "tag").get<std::int64_t>(),
                         to_shape(field(j, "shape")), dtype()};
      break;
    case NodeKind::kSendWrapper:
      p = std::monostate{};
      break;
  }
  AxisTagList tags = j.contains("axis_tags") ? parse_tags(j.at("axis_tags")) : AxisTagList{};
  NodeRef n = Node::create(kind, std::move(inputs), std::move(p), std::move(tags), j.value("materialize", false));
  if (j.contains("shape") && kind != NodeKind::kFunctionDefinition && to_shape(j.at("shape")) != n->shape()) {
    throw FormatError("declared shape " + shape_string(to_shape(j.at("shape"))) + " differs from inferred " +
                      shape_string(n->shape()));
  }
  return n;
}

Graph parse_graph(const Json& doc) {
  std::unordered_map<std::string, NodeRef> env;
  for (const auto& j : field(doc, "nodes")) {
    const std::string id = field(j, "id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (env.count(id)) throw FormatError("duplicate node id '" + id + "'");
    try {
      env[id] = parse_node(j, env);
    } catch (const FormatError& e) {
      throw FormatError("node '" + id + "': " + e.what());
    } catch (const Error& e) {
      throw FormatError("node '" + id + "': " + e.kind() + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("node '" + id + "': " + e.what());
    }
  }
  Graph g;
  for (const auto& [name, id] : field(doc, "outputs").items()) {
    auto it = env.find(id.get<std::string>());
    if (it == env.end()) throw FormatError("output '" + name + "' references unknown node '" + id.get<std::string>() + "'");
    g.outputs[name] = it->second;
  }
  return g;
}

std::map<std::string, const PlaceholderPayload*> placeholders(const Graph& g) {
  std::map<std::string, const PlaceholderPayload*> out;
  std::function<void(const NodeRef&)> visit;
  for (const auto& n : topo_order(g)) {
    if (n->kind() == NodeKind::kPlaceholder) out[n->as<PlaceholderPayload>().name] = &n->as<PlaceholderPayload>();
  }
  return out;
}

Bindings parse_bindings(const Json& doc, const Graph& g) {
  Bindings b;
  if (!doc.contains("bindings")) return b;
  const auto phs = placeholders(g);
  for (const auto& [name, spec] : doc.at("bindings").items()) {
    auto it = phs.find(name);
    try {
      if (it == phs.end()) b[name] = parse_binding(spec, nullptr, DType::kF64);
      else b[name] = parse_binding(spec, &it->second->shape, it->second->dtype);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("binding '" + name + "': " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("binding '" + name + "': " + e.what());
    } catch (const Error& e) {
      throw FormatError("binding '" + name + "': " + e.kind() + ": " + e.what());
    }
  }
  return b;
}

void flatten(const Json& j, std::vector<double>& values, Shape& shape, std::size_t depth) {
  if (!j.is_array()) {
    values.push_back(to_double(j));
    return;
  }
  if (shape.size() <= depth) shape.push_back(static_cast<std::int64_t>(j.size()));
  else if (shape[depth] != static_cast<std::int64_t>(j.size())) throw FormatError("ragged nested list");
  for (const auto& e : j) flatten(e, values, shape, depth + 1);
}

Json bindings_json(const Bindings& b) {
  Json j = Json::object();
  for (const auto& [name, a] : b) {
    Json values = Json::array();
    for (double v : a.data) values.push_back(number(v));
    j[name] = Json{{"shape", shape_json(a.shape)}, {"dtype", dtype_name(a.dtype)}, {"values", values}};
  }
  return j;
}

}  // namespace

NdArray seeded_random(std::uint64_t seed, const Shape& shape, DType dtype) {
  std::uint64_t state = seed;
  auto next = [&state] {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::vector<double> values(static_cast<std::size_t>(element_count(shape)));
  for (auto& v : values) {
    const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
    v = dtype == DType::kI64 || dtype == DType::kBool ? std::floor(u * (dtype == DType::kBool ? 2 : 10)) : u;
  }
  return NdArray(shape, dtype, std::move(values));
}

NdArray parse_binding(const Json& spec, const Shape* shape, DType dtype) {
  if (spec.is_object() && spec.contains("linspace")) {
    const auto& l = spec.at("linspace");
    if (!l.is_array() || l.size() != 3) throw FormatError("linspace needs [start, stop, count]");
    NdArray a = NdArray::linspace(to_double(l[0]), to_double(l[1]), l[2].get<std::int64_t>());
    if (shape && *shape != a.shape) {
      if (element_count(*shape) != a.size()) throw FormatError("linspace size does not match placeholder");
      a.shape = *shape;
    }
    return NdArray(a.shape, dtype, a.data);
  }
  if (spec.is_object() && spec.contains("seeded_random")) {
    const auto& r = spec.at("seeded_random");
    if (!r.is_array() || r.size() != 2) throw FormatError("seeded_random needs [seed, shape]");
    return seeded_random(r[0].get<std::uint64_t>(), to_shape(r[1]), dtype);
  }
  if (spec.is_object() && spec.contains("values")) {
    const DType d = spec.contains("dtype") ? parse_dtype(spec.at("dtype").get<std::string>()) : dtype;
    std::vector<double> values;
    Shape nested;
    flatten(spec.at("values"), values, nested, 0);
    Shape s = spec.contains("shape") ? to_shape(spec.at("shape")) : (shape ? *shape : nested);
    return NdArray(s, d, std::move(values));
  }
  std::vector<double> values;
  Shape nested;
  flatten(spec, values, nested, 0);
  if (shape && element_count(*shape) == static_cast<std::int64_t>(values.size())) nested = *shape;
  return NdArray(nested, dtype, std::move(values));
}

GraphFile parse_graph_file(const Json& doc) {
  GraphFile f;
  if (!doc.is_object()) throw FormatError("top level must be an object");
  if (doc.contains("ranks")) {
    for (const auto& rank : doc.at("ranks")) {
      f.ranks.push_back(parse_graph(rank));
      f.rank_bindings.push_back(parse_bindings(rank, f.ranks.back()));
    }
    if (f.ranks.empty()) throw FormatError("'ranks' is empty");
    return f;
  }
  f.graph = parse_graph(doc);
  f.bindings = parse_bindings(doc, f.graph);
  return f;
}

GraphFile load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
  try {
    return parse_graph_file(doc);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(e.what());
  }
}

Json graph_to_json(const Graph& graph) {
  Writer w;
  for (const auto& n : topo_order(graph)) w.emit(n);
  Json outputs = Json::object();
  for (const auto& [name, node] : graph.outputs) outputs[name] = w.id_of(node.get());
  return Json{{"nodes", w.nodes}, {"outputs", outputs}};
}

Json graph_file_to_json(const GraphFile& file) {
  if (!file.distributed()) {
    Json j = graph_to_json(file.graph);
    if (!file.bindings.empty()) j["bindings"] = bindings_json(file.bindings);
    return j;
  }
  Json ranks = Json::array();
  for (std::size_t r = 0; r < file.ranks.size(); ++r) {
    Json j = graph_to_json(file.ranks[r]);
    if (r < file.rank_bindings.size() && !file.rank_bindings[r].empty()) {
      j["bindings"] = bindings_json(file.rank_bindings[r]);
    }
    ranks.push_back(std::move(j));
  }
  return Json{{"ranks", ranks}};
}

void save_graph_file(const GraphFile& file, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << graph_file_to_json(file).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// DOT

namespace {

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

std::string op_symbol(OpCode op) {
  switch (op) {
    case OpCode::kAdd: return "+";
    case OpCode::kSub: return "-";
    case OpCode::kMul: return "*";
    case OpCode::kDiv: return "/";
    case OpCode::kPow: return "**";
    case OpCode::kLt: return "<";
    case OpCode::kLe: return "<=";
    case OpCode::kGt: return ">";
    case OpCode::kGe: return ">=";
    case OpCode::kEq: return "==";
    case OpCode::kNe: return "!=";
    default: return std::string(op_name(op));
  }
}

std::string label(const Node& n) {
  switch (n.kind()) {
    case NodeKind::kData: {
      const auto& d = n.as<DataPayload>();
      if (n.rank() == 0) return format_double(d.values->at(0));
      return d.name.empty() ? "data" + shape_string(n.shape()) : d.name;
    }
    case NodeKind::kPlaceholder: return n.as<PlaceholderPayload>().name;
    case NodeKind::kIndexLambda: {
      const auto& e = *n.as<IndexLambdaPayload>().expr;
      return e.kind == ScalarExpr::Kind::kApply ? op_symbol(e.op) : "lambda";
    }
    case NodeKind::kEinsum: return "einsum " + n.as<EinsumPayload>().spec;
    case NodeKind::kReshape: return "reshape " + shape_string(n.shape());
    case NodeKind::kIndexing: return "index";
    case NodeKind::kConcatenate: return "concat axis=" + std::to_string(n.as<AxisPayload>().axis);
    case NodeKind::kStack: return "stack axis=" + std::to_string(n.as<AxisPayload>().axis);
    case NodeKind::kCall: return "call " + n.as<CallPayload>().function->as<FunctionPayload>().name;
    case NodeKind::kCallResult: return "result " + n.as<CallResultPayload>().name;
    case NodeKind::kSend: {
      const auto& s = n.as<SendPayload>();
      return "send to " + std::to_string(s.dest) + " tag " + std::to_string(s.tag);
    }
    case NodeKind::kReceive: {
      const auto& r = n.as<ReceivePayload>();
      return "recv from " + std::to_string(r.source) + " tag " + std::to_string(r.tag);
    }
    default: return std::string(kind_name(n.kind()));
  }
}

}  // namespace

std::string to_dot(const Graph& graph, const std::string& name) {
  std::ostringstream os;
  os << "digraph " << name << " {\n  rankdir=BT;\n  node [shape=box];\n";
  std::unordered_map<const Node*, int> id;
  const auto order = topo_order(graph);
  for (const auto& n : order) {
    const int k = static_cast<int>(id.size());
    id[n.get()] = k;
    os << "  n" << k << " [label=\"" << dot_escape(label(*n)) << "\"";
    if (n->kind() == NodeKind::kPlaceholder) os << ", style=dashed";
    else if (n->materialized()) os << ", style=bold";
    if (n->is_leaf()) os << ", shape=ellipse";
    os << "];\n";
  }
  for (const auto& n : order) {
    for (const auto& in : n->inputs()) os << "  n" << id[in.get()] << " -> n" << id[n.get()] << ";\n";
  }
  int o = 0;
  for (const auto& [out, node] : graph.outputs) {
    os << "  out" << o << " [label=\"" << dot_escape(out) << "\", shape=plaintext];\n";
    os << "  n" << id[node.get()] << " -> out" << o << ";\n";
    ++o;
  }
  os << "}\n";
  return os.str();
}

}  // namespace arrayflow::cli
