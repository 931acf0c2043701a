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

#include <algorithm>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "arrayflow/errors.hpp"
#include "arrayflow/ir.hpp"
#include "arrayflow/passes.hpp"

namespace arrayflow {
namespace {

/// Integer index arithmetic with affine simplification over bounded loop and
/// reduction variables.
class IndexAlgebra {
 public:
  struct Affine {
    std::map<std::string, std::int64_t> terms;
    std::int64_t constant = 0;
  };

  void declare(const std::string& var, std::int64_t extent) {
    if (!extents_.count(var)) order_.push_back(var);
    extents_[var] = extent;
  }

  std::optional<Affine> affine(const IrRef& e) const {
    switch (e->kind) {
      case IrExpr::Kind::kConst:
        if (e->dtype != DType::kI64) return std::nullopt;
        return Affine{{}, static_cast<std::int64_t>(e->value)};
      case IrExpr::Kind::kVar:
        if (!extents_.count(e->name)) return std::nullopt;
        return Affine{{{e->name, 1}}, 0};
      case IrExpr::Kind::kApply: {
        if (e->dtype != DType::kI64 || e->args.size() != 2) return std::nullopt;
        auto a = affine(e->args[0]);
        auto b = affine(e->args[1]);
        if (!a || !b) return std::nullopt;
        if (e->op == OpCode::kAdd || e->op == OpCode::kSub) {
          const std::int64_t sign = e->op == OpCode::kAdd ? 1 : -1;
          for (const auto& [v, c] : b->terms) a->terms[v] += sign * c;
          a->constant += sign * b->constant;
          return normalized(*a);
        }
        if (e->op == OpCode::kMul) {
          if (b->terms.empty()) return scaled(*a, b->constant);
          if (a->terms.empty()) return scaled(*b, a->constant);
        }
        return std::nullopt;
      }
      default:
        return std::nullopt;
    }
  }

  std::pair<std::int64_t, std::int64_t> range(const Affine& a) const {
    std::int64_t lo = a.constant;
    std::int64_t hi = a.constant;
    for (const auto& [v, c] : a.terms) {
      const std::int64_t top = std::max<std::int64_t>(extents_.at(v) - 1, 0);
      if (c > 0) hi += c * top;
      else lo += c * top;
    }
    return {lo, hi};
  }

  IrRef build(const Affine& a) const {
    IrRef out;
    for (const auto& v : order_) {
      auto it = a.terms.find(v);
      if (it == a.terms.end() || it->second == 0) continue;
      const std::int64_t c = it->second;
      const std::int64_t mag = c < 0 ? -c : c;
      IrRef term = mag == 1 ? ir::var(v)
                            : ir::apply(OpCode::kMul, {ir::index_constant(mag), ir::var(v)}, DType::kI64);
      if (!out) {
        out = c < 0 ? ir::apply(OpCode::kMul, {ir::index_constant(c), ir::var(v)}, DType::kI64) : term;
        if (c < 0 && mag == 1) out = ir::apply(OpCode::kNeg, {ir::var(v)}, DType::kI64);
      } else {
        out = ir::apply(c < 0 ? OpCode::kSub : OpCode::kAdd, {out, term}, DType::kI64);
      }
    }
    if (!out) return ir::index_constant(a.constant);
    if (a.constant > 0) out = ir::apply(OpCode::kAdd, {out, ir::index_constant(a.constant)}, DType::kI64);
    if (a.constant < 0) out = ir::apply(OpCode::kSub, {out, ir::index_constant(-a.constant)}, DType::kI64);
    return out;
  }

  IrRef add(const IrRef& x, const IrRef& y) const {
    auto a = affine(x);
    auto b = affine(y);
    if (a && b) {
      for (const auto& [v, c] : b->terms) a->terms[v] += c;
      a->constant += b->constant;
      return build(normalized(*a));
    }
    if (b && b->terms.empty() && b->constant == 0) return x;
    if (a && a->terms.empty() && a->constant == 0) return y;
    return ir::apply(OpCode::kAdd, {x, y}, DType::kI64);
  }

  IrRef add_constant(const IrRef& x, std::int64_t c) const {
    return c == 0 ? x : add(x, ir::index_constant(c));
  }

  IrRef mul_constant(const IrRef& x, std::int64_t c) const {
    if (c == 1) return x;
    if (auto a = affine(x)) return build(scaled(*a, c));
    return ir::apply(OpCode::kMul, {ir::index_constant(c), x}, DType::kI64);
  }

  IrRef floordiv(const IrRef& x, std::int64_t s) const {
    if (s == 1) return x;
    if (auto a = affine(x)) {
      Affine q;
      Affine rest;
      for (const auto& [v, c] : a->terms) {
        if (c % s == 0) q.terms[v] = c / s;
        else rest.terms[v] = c;
      }
      const std::int64_t cq = floor_div(a->constant, s);
      rest.constant = a->constant - cq * s;
      q.constant = cq;
      auto [lo, hi] = range(rest);
      if (lo >= 0 && hi < s) return build(normalized(q));
    }
    return ir::apply(OpCode::kFloorDiv, {x, ir::index_constant(s)}, DType::kI64);
  }

  IrRef mod(const IrRef& x, std::int64_t e) const {
    if (e == 1) return ir::index_constant(0);
    if (auto a = affine(x)) {
      Affine rest;
      for (const auto& [v, c] : a->terms) {
        if (c % e != 0) rest.terms[v] = c;
      }
      rest.constant = a->constant - floor_div(a->constant, e) * e;
      auto [lo, hi] = range(rest);
      if (lo >= 0 && hi < e) return build(normalized(rest));
      auto [alo, ahi] = range(*a);
      if (alo >= 0 && ahi < e) return x;
    }
    return ir::apply(OpCode::kMod, {x, ir::index_constant(e)}, DType::kI64);
  }

 private:
  static std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
  }
  static Affine normalized(Affine a) {
    for (auto it = a.terms.begin(); it != a.terms.end();) {
      it = it->second == 0 ? a.terms.erase(it) : std::next(it);
    }
    return a;
  }
  static Affine scaled(Affine a, std::int64_t c) {
    for (auto& [v, k] : a.terms) k *= c;
    a.constant *= c;
    return normalized(a);
  }

  std::map<std::string, std::int64_t> extents_;
  std::vector<std::string> order_;
};

int access_depth(const IrExpr& e) {
  int inner = 0;
  for (const auto& a : e.args) inner = std::max(inner, access_depth(*a));
  return e.kind == IrExpr::Kind::kAccess ? inner + 1 : inner;
}

constexpr int kMaxAccessDepth = 2;

/// Builds element formulas for one nest.
class NestBuilder {
 public:
  NestBuilder(const std::map<const Node*, std::string>& names,
              const std::unordered_set<const Node*>& literals)
      : names_(names), literals_(literals) {}

  Comprehension build(const NodeRef& node, const std::string& target) {
    Comprehension c;
    c.target = target;
    std::vector<IrRef> idx;
    for (int k = 0; k < node->rank(); ++k) {
      Loop l;
      l.var = "i" + std::to_string(k);
      l.extent = node->shape()[k];
      l.tags = node->tags_on(k);
      alg_.declare(l.var, l.extent);
      idx.push_back(ir::var(l.var));
      c.loops.push_back(std::move(l));
    }
    c.value = expand(node, idx, true);
    return c;
  }

 private:
  IrRef element(const NodeRef& n, const std::vector<IrRef>& idx) {
    if (n->is_leaf() || names_.count(n.get())) {
      if (literals_.count(n.get())) {
        return ir::constant(n->as<DataPayload>().values->at(0), n->dtype());
      }
      auto it = names_.find(n.get());
      if (it == names_.end()) {
        throw InvalidProgram("no array assigned to " + describe(*n));
      }
      return ir::access(it->second, idx, n->dtype());
    }
    return expand(n, idx, false);
  }

  IrRef affine_of(const AffineIndex& a, const std::vector<IrRef>& idx) {
    IrRef out = ir::index_constant(a.offset);
    for (std::size_t k = 0; k < a.coeffs.size(); ++k) {
      if (a.coeffs[k] != 0) out = alg_.add(out, alg_.mul_constant(idx[k], a.coeffs[k]));
    }
    return out;
  }

  IrRef lambda(const ScalarExpr& e, const Node& n, const std::vector<IrRef>& idx) {
    switch (e.kind) {
      case ScalarExpr::Kind::kConst:
        return ir::constant(e.value, e.dtype);
      case ScalarExpr::Kind::kIndex:
        return idx[e.index];
      case ScalarExpr::Kind::kInput: {
        std::vector<IrRef> sub;
        for (const auto& a : e.access) sub.push_back(affine_of(a, idx));
        return element(n.inputs()[e.index], sub);
      }
      case ScalarExpr::Kind::kApply: {
        std::vector<IrRef> args;
        for (const auto& a : e.args) args.push_back(lambda(*a, n, idx));
        return ir::apply(e.op, std::move(args), e.dtype);
      }
    }
    return nullptr;
  }

  IrRef expand(const NodeRef& n, const std::vector<IrRef>& idx, bool root) {
    switch (n->kind()) {
      case NodeKind::kIndexLambda:
        return lambda(*n->as<IndexLambdaPayload>().expr, *n, idx);
      case NodeKind::kReshape: {
        const auto& in = n->inputs()[0]->shape();
        const auto out_strides = row_major_strides(n->shape());
        IrRef linear = ir::index_constant(0);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          linear = alg_.add(linear, alg_.mul_constant(idx[k], out_strides[k]));
        }
        const auto in_strides = row_major_strides(in);
        std::vector<IrRef> sub;
        for (std::size_t j = 0; j < in.size(); ++j) {
          sub.push_back(alg_.mod(alg_.floordiv(linear, in_strides[j]), in[j]));
        }
        return element(n->inputs()[0], sub);
      }
      case NodeKind::kIndexing:
        return indexing(n, idx, root);
      case NodeKind::kEinsum:
        return einsum(n, idx);
      case NodeKind::kConcatenate: {
        const int axis = n->as<AxisPayload>().axis;
        std::vector<std::int64_t> offsets{0};
        for (const auto& in : n->inputs()) offsets.push_back(offsets.back() + in->shape()[axis]);
        auto piece = [&](std::size_t k) {
          auto sub = idx;
          sub[axis] = alg_.add_constant(idx[axis], -offsets[k]);
          return element(n->inputs()[k], sub);
        };
        if (auto a = alg_.affine(idx[axis]); a && a->terms.empty()) {
          std::size_t k = 0;
          while (k + 1 < n->inputs().size() && a->constant >= offsets[k + 1]) ++k;
          return piece(k);
        }
        IrRef out = piece(n->inputs().size() - 1);
        for (std::size_t k = n->inputs().size() - 1; k-- > 0;) {
          auto cond = ir::apply(OpCode::kLt, {idx[axis], ir::index_constant(offsets[k + 1])}, DType::kBool);
          out = ir::apply(OpCode::kWhere, {cond, piece(k), out}, n->dtype());
        }
        return out;
      }
      case NodeKind::kStack: {
        const int axis = n->as<AxisPayload>().axis;
        auto sub = idx;
        sub.erase(sub.begin() + axis);
        if (auto a = alg_.affine(idx[axis]); a && a->terms.empty()) {
          return element(n->inputs()[static_cast<std::size_t>(a->constant)], sub);
        }
        IrRef out = element(n->inputs().back(), sub);
        for (std::size_t k = n->inputs().size() - 1; k-- > 0;) {
          auto cond = ir::apply(OpCode::kEq, {idx[axis], ir::index_constant(static_cast<std::int64_t>(k))},
                                DType::kBool);
          out = ir::apply(OpCode::kWhere, {cond, element(n->inputs()[k], sub), out}, n->dtype());
        }
        return out;
      }
      default:
        throw InvalidProgram("cannot lower " + describe(*n) + " inline");
    }
  }

  IrRef indexing(const NodeRef& n, const std::vector<IrRef>& idx, bool root) {
    const auto& sels = n->as<IndexingPayload>().selectors;
    std::vector<IrRef> sub;
    std::size_t k = 0;
    bool gathers = false;
    for (const auto& s : sels) {
      if (const auto* i = std::get_if<std::int64_t>(&s)) {
        sub.push_back(ir::index_constant(*i));
      } else if (const auto* sl = std::get_if<Slice>(&s)) {
        sub.push_back(alg_.add_constant(alg_.mul_constant(idx[k++], sl->step), sl->start));
      } else {
        const auto& arr = n->inputs()[std::get<ArraySelector>(s).input];
        std::vector<IrRef> at(idx.begin() + static_cast<long>(k),
                              idx.begin() + static_cast<long>(k) + arr->rank());
        k += static_cast<std::size_t>(arr->rank());
        sub.push_back(element(arr, at));
        gathers = true;
      }
    }
    IrRef out = element(n->inputs()[0], sub);
    if (gathers && access_depth(*out) > kMaxAccessDepth) {
      const Node* culprit = n.get();
      if (root) {
        culprit = nullptr;
        for (std::size_t t = n->inputs().size(); t-- > 0;) {
          const auto& in = n->inputs()[(t + 1) % n->inputs().size()];
          if (!in->is_leaf() && !names_.count(in.get())) {
            culprit = in.get();
            break;
          }
        }
        if (!culprit) culprit = n.get();
      }
      throw UnsupportedComposition("gather nesting deeper than " + std::to_string(kMaxAccessDepth) +
                                       " levels at " + describe(*n),
                                   culprit->hash(), culprit);
    }
    return out;
  }

  IrRef einsum(const NodeRef& n, const std::vector<IrRef>& idx) {
    const auto spec = parse_einsum(n->as<EinsumPayload>().spec, n->inputs().size());
    const std::string reduced = spec.reduced();
    std::map<char, IrRef> letter;
    std::map<char, std::int64_t> extent;
    for (std::size_t k = 0; k < spec.inputs.size(); ++k) {
      for (std::size_t j = 0; j < spec.inputs[k].size(); ++j) {
        extent[spec.inputs[k][j]] = n->inputs()[k]->shape()[j];
      }
    }
    for (std::size_t o = 0; o < spec.output.size(); ++o) letter[spec.output[o]] = idx[o];
    std::vector<std::string> vars;
    std::vector<std::int64_t> extents;
    for (char c : reduced) {
      std::string v = "r" + std::to_string(next_reduce_++);
      alg_.declare(v, extent[c]);
      letter[c] = ir::var(v);
      vars.push_back(v);
      extents.push_back(extent[c]);
    }
    IrRef p;
    DType pd = DType::kF64;
    for (std::size_t k = 0; k < spec.inputs.size(); ++k) {
      std::vector<IrRef> sub;
      for (char c : spec.inputs[k]) sub.push_back(letter[c]);
      IrRef f = element(n->inputs()[k], sub);
      if (k == 0) {
        p = f;
        pd = n->inputs()[0]->dtype();
      } else {
        const DType operands[] = {pd, n->inputs()[k]->dtype()};
        pd = result_dtype(OpCode::kMul, operands);
        p = ir::apply(OpCode::kMul, {p, f}, pd);
      }
    }
    if (reduced.empty()) return p;
    return ir::reduce(ReduceOp::kSum, std::move(vars), std::move(extents), p, n->dtype());
  }

  const std::map<const Node*, std::string>& names_;
  const std::unordered_set<const Node*>& literals_;
  IndexAlgebra alg_;
  int next_reduce_ = 0;
};

class Lowerer {
 public:
  Lowerer(const Graph& graph, const LowerOptions& options) : graph_(graph), options_(options) {}

  IrProgram run() {
    IrProgram prog;
    prog.name = options_.program_name;
    const auto order = topo_order(graph_);
    std::unordered_map<const Node*, std::vector<std::string>> output_names;
    for (const auto& [name, node] : graph_.outputs) output_names[node.get()].push_back(name);
    for (const auto& [name, node] : graph_.outputs) outputs_.insert(node.get());
    std::unordered_map<const Node*, std::vector<NodeRef>> call_results;
    for (const auto& n : order) {
      switch (n->kind()) {
        case NodeKind::kSend:
        case NodeKind::kReceive:
        case NodeKind::kSendWrapper:
          throw CommunicationInSingleProcessGraph("single-process lowering met " + describe(*n));
        case NodeKind::kCall:
          for (const auto& a : n->inputs()) call_args_.insert(a.get());
          break;
        case NodeKind::kCallResult:
          call_results[n->inputs()[0].get()].push_back(n);
          break;
        default:
          break;
      }
    }

    // Placeholders claim their own names first.
    std::map<std::string, const Node*> placeholder_by_name;
    for (const auto& n : order) {
      if (n->kind() != NodeKind::kPlaceholder) continue;
      const auto& p = n->as<PlaceholderPayload>();
      if (!is_identifier(p.name)) throw InvalidNode("placeholder name '" + p.name + "' is not an identifier");
      auto [it, inserted] = placeholder_by_name.emplace(p.name, n.get());
      if (!inserted) {
        const Node& other = *it->second;
        if (other.shape() != n->shape() || other.dtype() != n->dtype()) {
          throw InvalidNode("placeholder '" + p.name + "' declared with two signatures");
        }
      } else {
        used_.insert(p.name);
        prog.arrays.push_back({p.name, n->shape(), n->dtype(), Storage::kInput, nullptr});
      }
      names_[n.get()] = p.name;
    }

    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& n = order[k];
      const auto outs = output_names.find(n.get());
      if (n->kind() == NodeKind::kData) {
        const auto& d = n->as<DataPayload>();
        if (n->rank() == 0 && !call_args_.count(n.get())) {
          literals_.insert(n.get());
          continue;
        }
        std::string name = is_identifier(d.name) && !used_.count(d.name) ? d.name : "_mirge_d" + std::to_string(k);
        names_[n.get()] = claim(name);
        prog.arrays.push_back({names_[n.get()], n->shape(), n->dtype(), Storage::kConstant, d.values});
        continue;
      }
      if (n->is_leaf() || !stored(*n) || n->kind() == NodeKind::kCall) continue;
      if (outs != output_names.end()) {
        const auto& first = outs->second.front();
        names_[n.get()] = claim("out_" + sanitize_identifier(first));
        prog.arrays.push_back({names_[n.get()], n->shape(), n->dtype(), Storage::kOutput, nullptr});
        prog.outputs[first] = names_[n.get()];
      } else {
        names_[n.get()] = claim("_mirge_t" + std::to_string(k));
        prog.arrays.push_back({names_[n.get()], n->shape(), n->dtype(), Storage::kTemporary, nullptr});
      }
    }

    for (const auto& n : order) {
      if (n->kind() == NodeKind::kCall) {
        prog.steps.emplace_back(call_site(n, call_results[n.get()], prog));
        continue;
      }
      if (n->is_leaf() || !names_.count(n.get()) || n->kind() == NodeKind::kCallResult) continue;
      NestBuilder b(names_, literals_);
      auto c = b.build(n, names_.at(n.get()));
      prog.steps.emplace_back(make_nest(std::move(c)));
    }

    // Copies for outputs that are leaves or share a node with another output.
    for (const auto& [name, node] : graph_.outputs) {
      if (prog.outputs.count(name)) continue;
      const std::string target = claim("out_" + sanitize_identifier(name));
      prog.arrays.push_back({target, node->shape(), node->dtype(), Storage::kOutput, nullptr});
      prog.outputs[name] = target;
      Comprehension c;
      c.target = target;
      std::vector<IrRef> idx;
      for (int k = 0; k < node->rank(); ++k) {
        c.loops.push_back({"i" + std::to_string(k), node->shape()[k], node->tags_on(k), false});
        idx.push_back(ir::var("i" + std::to_string(k)));
      }
      if (literals_.count(node.get())) {
        c.value = ir::constant(node->as<DataPayload>().values->at(0), node->dtype());
      } else {
        c.value = ir::access(names_.at(node.get()), idx, node->dtype());
      }
      prog.steps.emplace_back(make_nest(std::move(c)));
    }
    prog.functions = std::move(functions_);
    drop_unread_temporaries(prog);
    return prog;
  }

  std::vector<std::string> dropped;

 private:
  /// Static selection can bypass a stored node (an Indexing of a Stack, say),
  /// leaving a temporary nobody reads. Its producer is dead work.
  void drop_unread_temporaries(IrProgram& prog) {
    for (bool changed = true; changed;) {
      changed = false;
      std::set<std::string> read;
      for (const auto& s : prog.steps) {
        for (auto& r : step_reads(s)) read.insert(std::move(r));
      }
      std::set<std::string> dead;
      for (const auto& d : prog.arrays) {
        if (d.storage == Storage::kTemporary && !read.count(d.name)) dead.insert(d.name);
      }
      if (dead.empty()) break;
      std::vector<Step> kept;
      for (auto& s : prog.steps) {
        if (auto* c = std::get_if<CallSite>(&s)) {
          std::erase_if(c->results, [&](const auto& r) { return dead.count(r.second) > 0; });
          if (!c->results.empty()) kept.push_back(std::move(s));
          continue;
        }
        const auto writes = step_writes(s);
        if (!std::all_of(writes.begin(), writes.end(), [&](const auto& w) { return dead.count(w) > 0; })) {
          kept.push_back(std::move(s));
        }
      }
      prog.steps = std::move(kept);
      std::erase_if(prog.arrays, [&](const ArrayDecl& d) { return dead.count(d.name) > 0; });
      dropped.insert(dropped.end(), dead.begin(), dead.end());
      changed = true;
    }
    if (dropped.empty()) return;
    for (std::size_t k = 0; k < prog.steps.size(); ++k) {
      std::visit([&](auto& st) { st.id = static_cast<int>(k); }, prog.steps[k]);
    }
    std::set<std::string> called;
    for (const auto& s : prog.steps) {
      if (const auto* c = std::get_if<CallSite>(&s)) called.insert(c->function);
    }
    std::erase_if(prog.functions, [&](const auto& f) { return !called.count(f.first); });
  }

 public:

 private:
  bool stored(const Node& n) const {
    return n.materialized() || outputs_.count(&n) || call_args_.count(&n) || forced_materialization(n);
  }

  std::string claim(std::string name) {
    std::string candidate = name;
    for (int k = 1; used_.count(candidate); ++k) candidate = name + "_" + std::to_string(k);
    used_.insert(candidate);
    return candidate;
  }

  LoopNest make_nest(Comprehension c) {
    LoopNest n;
    n.id = next_step_++;
    Statement st;
    st.target = c.target;
    for (const auto& l : c.loops) st.index.push_back(ir::var(l.var));
    st.value = std::move(c.value);
    n.loops = std::move(c.loops);
    n.body.push_back(std::move(st));
    return n;
  }

  CallSite call_site(const NodeRef& call, const std::vector<NodeRef>& results, IrProgram& prog) {
    const NodeRef& def = call->as<CallPayload>().function;
    const auto& fn = def->as<FunctionPayload>();
    std::string fname;
    for (const auto& [known, name] : function_names_) {
      if (structurally_equal(known, def)) fname = name;
    }
    if (fname.empty()) {
      const std::string base = sanitize_identifier(fn.name);
      fname = base;
      for (int k = 1; functions_.count(fname); ++k) fname = base + "_" + std::to_string(k);
      LowerOptions sub_opts = options_;
      sub_opts.program_name = fname;
      functions_[fname] = std::make_shared<IrProgram>(lower(function_body(*def), sub_opts));
      function_names_.emplace_back(def, fname);
    }
    const IrProgram& callee = *functions_.at(fname);
    CallSite c;
    c.id = next_step_++;
    c.function = fname;
    for (std::size_t k = 0; k < fn.params.size(); ++k) {
      const std::string inner = fn.params[k].second->as<PlaceholderPayload>().name;
      if (!callee.find_array(inner)) continue;  // parameter unused by the body
      c.args.emplace_back(inner, names_.at(call->inputs()[k].get()));
    }
    for (const auto& r : results) {
      c.results.emplace_back(callee.outputs.at(r->as<CallResultPayload>().name), names_.at(r.get()));
    }
    (void)prog;
    return c;
  }

  const Graph& graph_;
  const LowerOptions& options_;
  std::map<const Node*, std::string> names_;
  std::unordered_set<const Node*> literals_;
  std::unordered_set<const Node*> outputs_;
  std::unordered_set<const Node*> call_args_;
  std::set<std::string> used_;
  std::map<std::string, std::shared_ptr<const IrProgram>> functions_;
  std::vector<std::pair<NodeRef, std::string>> function_names_;
  int next_step_ = 0;
};

}  // namespace

Comprehension to_comprehension(const NodeRef& node, const std::map<const Node*, std::string>& names,
                               const std::string& target) {
  std::unordered_set<const Node*> literals;
  for (const auto& n : topo_order(std::span<const NodeRef>(&node, 1))) {
    if (n->kind() == NodeKind::kData && n->rank() == 0 && !names.count(n.get())) literals.insert(n.get());
  }
  NestBuilder b(names, literals);
  return b.build(node, target);
}

IrProgram lower(const Graph& graph, const LowerOptions& options, PassLog* log) {
  Graph g = graph;
  for (int attempt = 0;; ++attempt) {
    try {
      Lowerer l(g, options);
      IrProgram prog = l.run();
      if (log) {
        for (const auto& name : l.dropped) log->add("lower: dropped unread temporary " + name);
      }
      return prog;
    } catch (const UnsupportedComposition& e) {
      if (!options.legalize || attempt > 10000) throw;
      const void* culprit = e.culprit();
      bool changed = false;
      g = rewrite_graph(g, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
        bool same = inputs.size() == orig->inputs().size();
        for (std::size_t i = 0; same && i < inputs.size(); ++i) same = inputs[i] == orig->inputs()[i];
        NodeRef n = same ? orig : orig->with_inputs(std::move(inputs));
        if (orig.get() == culprit && !n->materialized()) {
          changed = true;
          return n->with_materialized(true);
        }
        return n;
      });
      if (!changed) throw;
      if (log) log->add("lower: materialized gather " + describe(*static_cast<const Node*>(culprit)) +
                        " to bound indirection depth");
    }
  }
}

}  // namespace arrayflow
