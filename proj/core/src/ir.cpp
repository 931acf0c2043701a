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

#include "arrayflow/ir.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "internal/iterate.hpp"

namespace arrayflow {

std::string_view storage_name(Storage s) {
  switch (s) {
    case Storage::kInput: return "input";
    case Storage::kConstant: return "constant";
    case Storage::kOutput: return "output";
    case Storage::kTemporary: return "temporary";
  }
  return "?";
}

std::string_view reduce_name(ReduceOp op) {
  switch (op) {
    case ReduceOp::kSum: return "sum";
    case ReduceOp::kMax: return "max";
    case ReduceOp::kMin: return "min";
  }
  return "?";
}

namespace ir {

IrRef constant(double value, DType dtype) {
  auto e = std::make_shared<IrExpr>();
  e->kind = IrExpr::Kind::kConst;
  e->dtype = dtype;
  e->value = cast_value(dtype, value);
  return e;
}

IrRef index_constant(std::int64_t value) {
  return constant(static_cast<double>(value), DType::kI64);
}

IrRef var(std::string name) {
  auto e = std::make_shared<IrExpr>();
  e->kind = IrExpr::Kind::kVar;
  e->dtype = DType::kI64;
  e->name = std::move(name);
  return e;
}

IrRef access(std::string array, std::vector<IrRef> indices, DType dtype) {
  auto e = std::make_shared<IrExpr>();
  e->kind = IrExpr::Kind::kAccess;
  e->dtype = dtype;
  e->name = std::move(array);
  e->args = std::move(indices);
  return e;
}

IrRef scalar(std::string name, DType dtype) {
  auto e = std::make_shared<IrExpr>();
  e->kind = IrExpr::Kind::kScalar;
  e->dtype = dtype;
  e->name = std::move(name);
  return e;
}

IrRef apply(OpCode op, std::vector<IrRef> args, DType dtype) {
  auto e = std::make_shared<IrExpr>();
  e->kind = IrExpr::Kind::kApply;
  e->dtype = dtype;
  e->op = op;
  e->args = std::move(args);
  return e;
}

IrRef reduce(ReduceOp op, std::vector<std::string> vars, std::vector<std::int64_t> extents,
             IrRef body, DType dtype) {
  auto e = std::make_shared<IrExpr>();
  e->kind = IrExpr::Kind::kReduce;
  e->dtype = dtype;
  e->reduce = op;
  e->reduce_vars = std::move(vars);
  e->reduce_extents = std::move(extents);
  e->args = {std::move(body)};
  return e;
}

}  // namespace ir

bool ir_equal(const IrExpr& a, const IrExpr& b) {
  if (&a == &b) return true;
  if (a.kind != b.kind || a.dtype != b.dtype) return false;
  switch (a.kind) {
    case IrExpr::Kind::kConst:
      return std::bit_cast<std::uint64_t>(a.value) == std::bit_cast<std::uint64_t>(b.value);
    case IrExpr::Kind::kVar:
    case IrExpr::Kind::kScalar:
      return a.name == b.name;
    case IrExpr::Kind::kAccess:
      return a.name == b.name && ir_equal(a.args, b.args);
    case IrExpr::Kind::kApply:
      return a.op == b.op && ir_equal(a.args, b.args);
    case IrExpr::Kind::kReduce:
      return a.reduce == b.reduce && a.reduce_vars == b.reduce_vars &&
             a.reduce_extents == b.reduce_extents && ir_equal(a.args, b.args);
  }
  return false;
}

bool ir_equal(const std::vector<IrRef>& a, const std::vector<IrRef>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!ir_equal(*a[i], *b[i])) return false;
  }
  return true;
}

namespace {

int precedence(const IrExpr& e) {
  if (e.kind != IrExpr::Kind::kApply) return 10;
  switch (e.op) {
    case OpCode::kLt:
    case OpCode::kLe:
    case OpCode::kGt:
    case OpCode::kGe:
    case OpCode::kEq:
    case OpCode::kNe:
      return 1;
    case OpCode::kAdd:
    case OpCode::kSub:
      return 2;
    case OpCode::kMul:
    case OpCode::kDiv:
    case OpCode::kFloorDiv:
    case OpCode::kMod:
      return 3;
    case OpCode::kNeg:
      return 4;
    default:
      return 10;
  }
}

std::string_view infix(OpCode op) {
  switch (op) {
    case OpCode::kAdd: return " + ";
    case OpCode::kSub: return " - ";
    case OpCode::kMul: return " * ";
    case OpCode::kDiv: return " / ";
    case OpCode::kFloorDiv: return " // ";
    case OpCode::kMod: return " % ";
    case OpCode::kLt: return " < ";
    case OpCode::kLe: return " <= ";
    case OpCode::kGt: return " > ";
    case OpCode::kGe: return " >= ";
    case OpCode::kEq: return " == ";
    case OpCode::kNe: return " != ";
    default: return "";
  }
}

std::string const_string(const IrExpr& e) {
  switch (e.dtype) {
    case DType::kI64: return std::to_string(static_cast<std::int64_t>(e.value));
    case DType::kBool: return e.value != 0.0 ? "true" : "false";
    default: return format_double(e.value);
  }
}

}  // namespace

std::string ir_string(const IrExpr& e) {
  switch (e.kind) {
    case IrExpr::Kind::kConst:
      return const_string(e);
    case IrExpr::Kind::kVar:
    case IrExpr::Kind::kScalar:
      return e.name;
    case IrExpr::Kind::kAccess: {
      if (e.args.empty()) return e.name;
      std::string s = e.name + "[";
      for (std::size_t i = 0; i < e.args.size(); ++i) s += (i ? ", " : "") + ir_string(*e.args[i]);
      return s + "]";
    }
    case IrExpr::Kind::kApply: {
      const int p = precedence(e);
      if (e.op == OpCode::kNeg) {
        const auto inner = ir_string(*e.args[0]);
        return precedence(*e.args[0]) < p ? "-(" + inner + ")" : "-" + inner;
      }
      if (p < 10) {
        auto l = ir_string(*e.args[0]);
        auto r = ir_string(*e.args[1]);
        if (precedence(*e.args[0]) < p) l = "(" + l + ")";
        if (precedence(*e.args[1]) <= p) r = "(" + r + ")";
        return l + std::string(infix(e.op)) + r;
      }
      std::string s(op_name(e.op));
      s += "(";
      for (std::size_t i = 0; i < e.args.size(); ++i) s += (i ? ", " : "") + ir_string(*e.args[i]);
      return s + ")";
    }
    case IrExpr::Kind::kReduce: {
      std::string s(reduce_name(e.reduce));
      s += "(";
      for (std::size_t i = 0; i < e.reduce_vars.size(); ++i) {
        s += (i ? ", " : "") + e.reduce_vars[i] + " in 0.." + std::to_string(e.reduce_extents[i]);
      }
      return s + ": " + ir_string(*e.args[0]) + ")";
    }
  }
  return "?";
}

const ArrayDecl* IrProgram::find_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::size_t IrProgram::nest_count() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += std::holds_alternative<LoopNest>(s);
  return n;
}

std::size_t IrProgram::temporary_count() const {
  std::size_t n = 0;
  for (const auto& a : arrays) n += a.storage == Storage::kTemporary;
  return n;
}

int step_id(const Step& s) {
  return std::visit([](const auto& x) { return x.id; }, s);
}

namespace {

void collect_accesses(const IrExpr& e, std::vector<std::string>& out) {
  if (e.kind == IrExpr::Kind::kAccess) out.push_back(e.name);
  for (const auto& a : e.args) collect_accesses(*a, out);
}

void unique(std::vector<std::string>& v) {
  std::vector<std::string> out;
  for (auto& s : v) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  }
  v = std::move(out);
}

}  // namespace

std::vector<std::string> step_reads(const Step& step) {
  std::vector<std::string> out;
  if (const auto* n = std::get_if<LoopNest>(&step)) {
    for (const auto& st : n->body) {
      for (const auto& i : st.index) collect_accesses(*i, out);
      collect_accesses(*st.value, out);
    }
  } else {
    for (const auto& [callee, caller] : std::get<CallSite>(step).args) out.push_back(caller);
  }
  unique(out);
  return out;
}

std::vector<std::string> step_writes(const Step& step) {
  std::vector<std::string> out;
  if (const auto* n = std::get_if<LoopNest>(&step)) {
    for (const auto& st : n->body) {
      if (!st.scalar_target) out.push_back(st.target);
    }
  } else {
    for (const auto& [callee, caller] : std::get<CallSite>(step).results) out.push_back(caller);
  }
  unique(out);
  return out;
}

std::vector<std::pair<int, int>> step_dependencies(const IrProgram& program) {
  std::unordered_map<std::string, std::vector<int>> writers;
  for (int s = 0; s < static_cast<int>(program.steps.size()); ++s) {
    for (const auto& w : step_writes(program.steps[s])) writers[w].push_back(s);
  }
  std::set<std::pair<int, int>> edges;
  for (int s = 0; s < static_cast<int>(program.steps.size()); ++s) {
    for (const auto& r : step_reads(program.steps[s])) {
      for (int w : writers[r]) {
        if (w != s) edges.emplace(w, s);
      }
    }
  }
  return {edges.begin(), edges.end()};
}

bool is_identifier(const std::string& name) {
  if (name.empty()) return false;
  const auto ok_first = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  if (!ok_first(name[0])) return false;
  for (char c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  }
  return true;
}

std::string sanitize_identifier(const std::string& name) {
  std::string s = name;
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') c = '_';
  }
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) s = "_" + s;
  return s;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

constexpr std::int64_t kEnumerationLimit = 1'000'000;

class Validator {
 public:
  Validator(const IrProgram& p, std::vector<std::string>& diags, std::string prefix)
      : p_(p), diags_(diags), prefix_(std::move(prefix)) {}

  void run() {
    std::set<std::string> names;
    for (const auto& a : p_.arrays) {
      if (!names.insert(a.name).second) report("duplicate declaration: " + a.name);
      if (a.storage == Storage::kConstant &&
          (!a.values || static_cast<std::int64_t>(a.values->size()) != element_count(a.shape))) {
        report("constant without matching values: " + a.name);
      }
    }
    for (const auto& [out, arr] : p_.outputs) {
      const auto* d = p_.find_array(arr);
      if (!d) report("undeclared: " + arr);
      else if (d->storage != Storage::kOutput) report("graph output " + out + " maps to non-output " + arr);
    }
    std::unordered_map<std::string, std::vector<int>> writers;
    for (int s = 0; s < static_cast<int>(p_.steps.size()); ++s) {
      for (const auto& w : step_writes(p_.steps[s])) writers[w].push_back(s);
    }
    std::set<std::string> read_anywhere;
    for (int s = 0; s < static_cast<int>(p_.steps.size()); ++s) {
      const auto& step = p_.steps[s];
      for (const auto& r : step_reads(step)) {
        read_anywhere.insert(r);
        const auto* d = p_.find_array(r);
        if (!d) continue;  // reported per access
        if (d->storage == Storage::kInput || d->storage == Storage::kConstant) continue;
        const auto& ws = writers[r];
        const bool earlier = std::any_of(ws.begin(), ws.end(), [&](int w) { return w <= s; });
        if (!ws.empty() && !earlier) {
          report("step " + std::to_string(step_id(step)) + " reads " + r + " before it is written");
        }
      }
      for (const auto& w : step_writes(step)) {
        const auto* d = p_.find_array(w);
        if (!d) report("undeclared: " + w);
        else if (d->storage == Storage::kInput || d->storage == Storage::kConstant) {
          report("write to read-only array: " + w);
        }
      }
      if (const auto* n = std::get_if<LoopNest>(&step)) check_nest(*n);
      else check_call(std::get<CallSite>(step));
    }
    for (const auto& [name, ws] : writers) {
      if (ws.size() > 1) report("multiple writers: " + name);
    }
    for (const auto& a : p_.arrays) {
      if (a.storage == Storage::kTemporary) {
        if (writers[a.name].empty()) report("temporary without producer: " + a.name);
        if (!read_anywhere.count(a.name)) report("temporary without consumer: " + a.name);
      }
      if (a.storage == Storage::kOutput && writers[a.name].empty()) {
        report("output never written: " + a.name);
      }
    }
    for (const auto& [name, fn] : p_.functions) {
      Validator sub(*fn, diags_, prefix_ + "function " + name + ": ");
      sub.run();
    }
  }

 private:
  void report(std::string msg) { diags_.push_back(prefix_ + std::move(msg)); }

  void check_expr(const IrExpr& e, const std::set<std::string>& vars,
                  const std::set<std::string>& scalars, const std::string& where) {
    switch (e.kind) {
      case IrExpr::Kind::kConst:
        return;
      case IrExpr::Kind::kVar:
        if (!vars.count(e.name)) report(where + ": unbound variable " + e.name);
        return;
      case IrExpr::Kind::kScalar:
        if (!scalars.count(e.name)) report(where + ": scalar " + e.name + " read before assignment");
        return;
      case IrExpr::Kind::kAccess: {
        const auto* d = p_.find_array(e.name);
        if (!d) {
          report("undeclared: " + e.name);
        } else if (d->shape.size() != e.args.size()) {
          report(where + ": " + e.name + " indexed with " + std::to_string(e.args.size()) +
                 " indices, rank " + std::to_string(d->shape.size()));
        } else {
          for (std::size_t j = 0; j < e.args.size(); ++j) {
            const auto& ix = *e.args[j];
            if (ix.kind == IrExpr::Kind::kConst &&
                (ix.value < 0 || ix.value >= static_cast<double>(d->shape[j]))) {
              report(where + ": constant index " + const_string(ix) + " out of bounds for " +
                     e.name + " axis " + std::to_string(j));
            }
          }
        }
        for (const auto& a : e.args) check_expr(*a, vars, scalars, where);
        return;
      }
      case IrExpr::Kind::kApply:
        if (static_cast<int>(e.args.size()) != arity(e.op)) {
          report(where + ": arity mismatch for " + std::string(op_name(e.op)));
        }
        for (const auto& a : e.args) check_expr(*a, vars, scalars, where);
        return;
      case IrExpr::Kind::kReduce: {
        auto inner = vars;
        for (const auto& v : e.reduce_vars) {
          if (!inner.insert(v).second) report(where + ": reduction variable " + v + " shadows");
        }
        check_expr(*e.args[0], inner, scalars, where);
        return;
      }
    }
  }

  static std::optional<std::int64_t> eval_index(const IrExpr& e,
                                                const std::unordered_map<std::string, std::int64_t>& env) {
    switch (e.kind) {
      case IrExpr::Kind::kConst:
        return static_cast<std::int64_t>(e.value);
      case IrExpr::Kind::kVar: {
        auto it = env.find(e.name);
        if (it == env.end()) return std::nullopt;
        return it->second;
      }
      case IrExpr::Kind::kApply: {
        if (e.args.size() != 2) return std::nullopt;
        auto a = eval_index(*e.args[0], env);
        auto b = eval_index(*e.args[1], env);
        if (!a || !b) return std::nullopt;
        switch (e.op) {
          case OpCode::kAdd: return *a + *b;
          case OpCode::kSub: return *a - *b;
          case OpCode::kMul: return *a * *b;
          case OpCode::kFloorDiv:
            if (*b == 0) return std::nullopt;
            return static_cast<std::int64_t>(std::floor(static_cast<double>(*a) / static_cast<double>(*b)));
          case OpCode::kMod:
            if (*b == 0) return std::nullopt;
            return ((*a % *b) + *b) % *b;
          default: return std::nullopt;
        }
      }
      default:
        return std::nullopt;
    }
  }

  void check_nest(const LoopNest& n) {
    const std::string where = "nest " + std::to_string(n.id);
    std::set<std::string> vars;
    std::int64_t iterations = 1;
    for (const auto& l : n.loops) {
      if (!vars.insert(l.var).second) report(where + ": duplicate loop variable " + l.var);
      if (l.extent < 0) report(where + ": negative extent for " + l.var);
      iterations *= std::max<std::int64_t>(l.extent, 0);
    }
    std::set<std::string> declared_scalars;
    for (const auto& [s, dt] : n.scalars) declared_scalars.insert(s);
    std::set<std::string> assigned;
    std::set<std::string> written_here;
    for (std::size_t k = 0; k < n.body.size(); ++k) {
      const auto& st = n.body[k];
      const std::string w = where + " statement " + std::to_string(k);
      if (!st.value) {
        report(w + ": missing value");
        continue;
      }
      // Reads of arrays written by a later statement of this nest.
      std::vector<std::string> reads;
      collect_accesses(*st.value, reads);
      for (const auto& r : reads) {
        if (r == st.target || written_here.count(r)) continue;
        for (std::size_t later = k + 1; later < n.body.size(); ++later) {
          if (!n.body[later].scalar_target && n.body[later].target == r) {
            report(w + ": reads " + r + " before its write in the same nest");
          }
        }
      }
      check_expr(*st.value, vars, assigned, w);
      for (const auto& ix : st.index) check_expr(*ix, vars, assigned, w);
      if (st.scalar_target) {
        if (!declared_scalars.count(st.target)) report(w + ": undeclared scalar " + st.target);
        if (!assigned.insert(st.target).second) report(w + ": scalar " + st.target + " assigned twice");
        continue;
      }
      written_here.insert(st.target);
      const auto* d = p_.find_array(st.target);
      if (!d) continue;
      if (d->shape.size() != st.index.size()) {
        report(w + ": " + st.target + " written with " + std::to_string(st.index.size()) +
               " indices, rank " + std::to_string(d->shape.size()));
        continue;
      }
      check_single_assignment(n, st, *d, iterations, w);
    }
  }

  void check_single_assignment(const LoopNest& n, const Statement& st, const ArrayDecl& d,
                               std::int64_t iterations, const std::string& where) {
    if (iterations > kEnumerationLimit) return;
    std::vector<char>& marks = marks_[d.name];
    marks.resize(static_cast<std::size_t>(element_count(d.shape)), 0);
    Shape extents;
    for (const auto& l : n.loops) extents.push_back(l.extent);
    std::unordered_map<std::string, std::int64_t> env;
    bool reported = false;
    for_each_index(extents, [&](std::span<const std::int64_t> it) {
      if (reported) return;
      for (std::size_t k = 0; k < n.loops.size(); ++k) env[n.loops[k].var] = it[k];
      std::int64_t off = 0;
      for (std::size_t j = 0; j < st.index.size(); ++j) {
        auto v = eval_index(*st.index[j], env);
        if (!v) {
          reported = true;  // not enumerable; nothing to check
          return;
        }
        if (*v < 0 || *v >= d.shape[j]) {
          report(where + ": write to " + d.name + " out of bounds on axis " + std::to_string(j));
          reported = true;
          return;
        }
        off = off * d.shape[j] + *v;
      }
      if (marks[static_cast<std::size_t>(off)]++) {
        report(where + ": element " + std::to_string(off) + " of " + d.name + " written twice");
        reported = true;
      }
    });
  }

  void check_call(const CallSite& c) {
    const std::string where = "call " + std::to_string(c.id);
    auto it = p_.functions.find(c.function);
    if (it == p_.functions.end()) {
      report(where + ": unknown function " + c.function);
      return;
    }
    const IrProgram& callee = *it->second;
    auto check_pair = [&](const std::string& inner, const std::string& outer, Storage want) {
      const auto* ci = callee.find_array(inner);
      const auto* co = p_.find_array(outer);
      if (!co) report("undeclared: " + outer);
      if (!ci || ci->storage != want) {
        report(where + ": " + inner + " is not a " + std::string(storage_name(want)) + " of " + c.function);
        return;
      }
      if (co && (co->shape != ci->shape || co->dtype != ci->dtype)) {
        report(where + ": " + outer + " does not match " + c.function + "." + inner);
      }
    };
    for (const auto& [inner, outer] : c.args) check_pair(inner, outer, Storage::kInput);
    for (const auto& [inner, outer] : c.results) check_pair(inner, outer, Storage::kOutput);
    for (const auto& a : callee.arrays) {
      if (a.storage != Storage::kInput) continue;
      const bool bound = std::any_of(c.args.begin(), c.args.end(),
                                     [&](const auto& p) { return p.first == a.name; });
      if (!bound) report(where + ": input " + a.name + " of " + c.function + " unbound");
    }
  }

  const IrProgram& p_;
  std::vector<std::string>& diags_;
  std::string prefix_;
  std::unordered_map<std::string, std::vector<char>> marks_;
};

void dump_program(const IrProgram& p, std::ostringstream& os, const std::string& indent) {
  os << indent << "program " << p.name << "\n";
  for (const auto& a : p.arrays) {
    os << indent << "  " << storage_name(a.storage) << " " << a.name << ": "
       << dtype_name(a.dtype) << shape_string(a.shape) << "\n";
  }
  for (const auto& step : p.steps) {
    if (const auto* n = std::get_if<LoopNest>(&step)) {
      os << indent << "nest " << n->id << "\n";
      std::string pad = indent + "  ";
      for (const auto& l : n->loops) {
        os << pad << "for " << l.var << " in 0.." << l.extent;
        if (!l.tags.empty()) {
          os << " [";
          for (std::size_t t = 0; t < l.tags.size(); ++t) os << (t ? ", " : "") << l.tags[t].to_string();
          os << "]";
        }
        if (l.parallel) os << " parallel";
        os << "\n";
        pad += "  ";
      }
      for (const auto& [s, dt] : n->scalars) os << pad << "scalar " << s << ": " << dtype_name(dt) << "\n";
      for (const auto& st : n->body) {
        os << pad << st.target;
        if (!st.scalar_target && !st.index.empty()) {
          os << "[";
          for (std::size_t i = 0; i < st.index.size(); ++i) os << (i ? ", " : "") << ir_string(*st.index[i]);
          os << "]";
        }
        os << " = " << ir_string(*st.value) << "\n";
      }
    } else {
      const auto& c = std::get<CallSite>(step);
      os << indent << "call " << c.id << " " << c.function << "(";
      for (std::size_t i = 0; i < c.args.size(); ++i) {
        os << (i ? ", " : "") << c.args[i].first << " <- " << c.args[i].second;
      }
      os << ") -> (";
      for (std::size_t i = 0; i < c.results.size(); ++i) {
        os << (i ? ", " : "") << c.results[i].first << " -> " << c.results[i].second;
      }
      os << ")\n";
    }
  }
  for (const auto& [name, arr] : p.outputs) os << indent << "result " << name << " = " << arr << "\n";
  for (const auto& [name, fn] : p.functions) dump_program(*fn, os, indent + "  ");
}

}  // namespace

std::vector<std::string> validate(const IrProgram& program) {
  std::vector<std::string> diags;
  Validator v(program, diags, "");
  v.run();
  return diags;
}

std::string dump(const IrProgram& program) {
  std::ostringstream os;
  dump_program(program, os, "");
  return os.str();
}

}  // namespace arrayflow
