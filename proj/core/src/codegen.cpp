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
#include <fstream>
#include <set>
#include <sstream>

#include "arrayflow/backend.hpp"
#include "arrayflow/errors.hpp"

namespace arrayflow {
namespace {

std::string c_type(DType d) {
  switch (d) {
    case DType::kF64: return "double";
    case DType::kF32: return "float";
    case DType::kI64: return "long";
    case DType::kBool: return "char";
  }
  return "double";
}

std::string c_literal(double v, DType d) {
  switch (d) {
    case DType::kF64: return format_double(v);
    case DType::kF32: return format_double(v) + "f";
    case DType::kI64: return std::to_string(static_cast<std::int64_t>(v));
    case DType::kBool: return v != 0.0 ? "1" : "0";
  }
  return format_double(v);
}

// C precedence tiers used for parenthesization.
enum Prec { kTernary = 1, kCompare = 2, kAdditive = 3, kMultiplicative = 4, kUnary = 5, kAtom = 6 };

struct Text {
  std::string s;
  int prec = kAtom;
};

constexpr std::string_view kHelpers =
    "inline long floordiv_i64(long a, long b) {\n"
    "    long q = a / b;\n"
    "    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;\n"
    "}\n"
    "inline long mod_i64(long a, long b) {\n"
    "    long r = a % b;\n"
    "    return (r != 0 && ((r < 0) != (b < 0))) ? r + b : r;\n"
    "}\n\n";

class KernelWriter {
 public:
  KernelWriter(const IrProgram& program, const LoopNest& nest, std::string name, PassLog* log)
      : program_(program), nest_(nest), name_(std::move(name)), log_(log) {}

  KernelSource write() {
    KernelSource k;
    k.name = name_;
    const auto reads = step_reads(nest_);
    const auto writes = step_writes(nest_);
    for (const auto& decl : program_.arrays) {
      const bool r = std::count(reads.begin(), reads.end(), decl.name) > 0;
      const bool w = std::count(writes.begin(), writes.end(), decl.name) > 0;
      if (!r && !w) continue;
      KernelParam p;
      p.name = decl.name;
      p.dtype = decl.dtype;
      p.written = w;
      p.pointer = w || !decl.shape.empty();
      k.params.push_back(p);
      params_[decl.name] = &decl;
      by_value_[decl.name] = !p.pointer;
    }

    std::vector<const Loop*> global;
    std::vector<const Loop*> sequential;
    int parallel = 0;
    for (const auto& l : nest_.loops) {
      if (l.parallel) ++parallel;
      if (l.parallel && static_cast<int>(global.size()) < kMaxGlobalDims) global.push_back(&l);
      else sequential.push_back(&l);
    }
    if (parallel > kMaxGlobalDims && log_) {
      log_->add("warning: TooManyParallelDims: " + name_ + " has " + std::to_string(parallel) +
                " parallel loops; " + std::to_string(parallel - kMaxGlobalDims) + " run sequentially");
    }

    indent_ = 1;
    for (std::size_t d = 0; d < global.size(); ++d) {
      line("long " + global[d]->var + " = get_global_id(" + std::to_string(d) + ");");
      k.global_size.push_back(global[d]->extent);
    }
    int opened = 0;
    if (!global.empty()) {
      std::string guard;
      for (const Loop* l : global) {
        guard += (guard.empty() ? "" : " && ") + l->var + " < " + std::to_string(l->extent);
      }
      line("if (" + guard + ") {");
      ++indent_;
      ++opened;
    }
    for (const Loop* l : sequential) {
      line("for (long " + l->var + " = 0; " + l->var + " < " + std::to_string(l->extent) + "; ++" +
           l->var + ") {");
      ++indent_;
      ++opened;
    }
    for (const auto& st : nest_.body) statement(st);
    for (; opened > 0; --opened) {
      --indent_;
      line("}");
    }

    k.body = body_.str();
    std::ostringstream text;
    if (helpers_) text << kHelpers;
    text << "__kernel void " << k.name << "(";
    for (std::size_t i = 0; i < k.params.size(); ++i) {
      const auto& p = k.params[i];
      text << (i ? ",\n    " : "\n    ");
      if (!p.pointer) text << "const " << c_type(p.dtype) << " " << p.name;
      else text << "__global " << (p.written ? "" : "const ") << c_type(p.dtype) << " *" << p.name;
    }
    text << ")\n{\n" << k.body << "}\n";
    k.text = text.str();
    return k;
  }

 private:
  void line(const std::string& s) { body_ << std::string(4 * indent_, ' ') << s << "\n"; }

  void statement(const Statement& st) {
    DType dt = DType::kF64;
    std::string lhs;
    if (st.scalar_target) {
      for (const auto& [n, d] : nest_.scalars) {
        if (n == st.target) dt = d;
      }
      lhs = c_type(dt) + " " + st.target;
    } else {
      const ArrayDecl* decl = params_.at(st.target);
      dt = decl->dtype;
      lhs = st.target + "[" + flat_index(*decl, st.index) + "]";
    }
    Text v = expr(*st.value);
    std::string rhs = v.s;
    if (dt == DType::kBool && st.value->dtype != DType::kBool) rhs = wrap(v, kCompare + 1) + " != 0";
    line(lhs + " = " + rhs + ";");
  }

  std::string flat_index(const ArrayDecl& decl, const std::vector<IrRef>& index) {
    if (index.empty()) return "0";
    const auto strides = row_major_strides(decl.shape);
    IrRef flat;
    for (std::size_t k = 0; k < index.size(); ++k) {
      IrRef term = strides[k] == 1
                       ? index[k]
                       : ir::apply(OpCode::kMul, {ir::index_constant(strides[k]), index[k]}, DType::kI64);
      flat = flat ? ir::apply(OpCode::kAdd, {flat, term}, DType::kI64) : term;
    }
    return expr(*flat).s;
  }

  static std::string wrap(const Text& t, int min_prec) {
    return t.prec < min_prec ? "(" + t.s + ")" : t.s;
  }

  /// Binds non-trivial operands to registers so they are evaluated once.
  std::string bind(const Text& t, DType d) {
    if (t.prec == kAtom) return t.s;
    std::string name = "t" + std::to_string(next_local_++);
    line(c_type(d) + " " + name + " = " + t.s + ";");
    return name;
  }

  Text expr(const IrExpr& e) {
    switch (e.kind) {
      case IrExpr::Kind::kConst: {
        std::string s = c_literal(e.value, e.dtype);
        return {s, s[0] == '-' ? kUnary : kAtom};
      }
      case IrExpr::Kind::kVar:
      case IrExpr::Kind::kScalar:
        return {e.name, kAtom};
      case IrExpr::Kind::kAccess: {
        if (by_value_.at(e.name)) return {e.name, kAtom};
        return {e.name + "[" + flat_index(*params_.at(e.name), e.args) + "]", kAtom};
      }
      case IrExpr::Kind::kReduce:
        return reduce(e);
      case IrExpr::Kind::kApply:
        return apply(e);
    }
    return {};
  }

  Text reduce(const IrExpr& e) {
    const std::string acc = "acc" + std::to_string(next_acc_++);
    const std::string init = e.reduce == ReduceOp::kSum   ? c_literal(0.0, e.dtype)
                             : e.reduce == ReduceOp::kMax ? "-INFINITY"
                                                          : "INFINITY";
    line(c_type(e.dtype) + " " + acc + " = " + init + ";");
    for (std::size_t k = 0; k < e.reduce_vars.size(); ++k) {
      const auto& v = e.reduce_vars[k];
      line("for (long " + v + " = 0; " + v + " < " + std::to_string(e.reduce_extents[k]) + "; ++" + v + ") {");
      ++indent_;
    }
    Text body = expr(*e.args[0]);
    switch (e.reduce) {
      case ReduceOp::kSum: line(acc + " += " + body.s + ";"); break;
      case ReduceOp::kMax: {
        const std::string b = bind(body, e.dtype);
        line(acc + " = " + b + " > " + acc + " ? " + b + " : " + acc + ";");
        break;
      }
      case ReduceOp::kMin: {
        const std::string b = bind(body, e.dtype);
        line(acc + " = " + b + " < " + acc + " ? " + b + " : " + acc + ";");
        break;
      }
    }
    for (std::size_t k = 0; k < e.reduce_vars.size(); ++k) {
      --indent_;
      line("}");
    }
    return {acc, kAtom};
  }

  Text binary(const IrExpr& e, std::string_view op, int prec) {
    Text a = expr(*e.args[0]);
    Text b = expr(*e.args[1]);
    return {wrap(a, prec) + " " + std::string(op) + " " + wrap(b, prec + 1), prec};
  }

  Text call(std::string_view fn, const IrExpr& e) {
    std::string s = std::string(fn) + "(";
    for (std::size_t i = 0; i < e.args.size(); ++i) s += (i ? ", " : "") + expr(*e.args[i]).s;
    return {s + ")", kAtom};
  }

  Text apply(const IrExpr& e) {
    const bool floating = is_floating(e.dtype);
    switch (e.op) {
      case OpCode::kAdd: return binary(e, "+", kAdditive);
      case OpCode::kSub: return binary(e, "-", kAdditive);
      case OpCode::kMul: return binary(e, "*", kMultiplicative);
      case OpCode::kDiv: {
        Text a = expr(*e.args[0]);
        Text b = expr(*e.args[1]);
        std::string lhs = wrap(a, kMultiplicative);
        if (!is_floating(e.args[0]->dtype) && !is_floating(e.args[1]->dtype)) {
          lhs = "(" + c_type(e.dtype) + ")" + wrap(a, kUnary);
        }
        return {lhs + " / " + wrap(b, kMultiplicative + 1), kMultiplicative};
      }
      case OpCode::kLt: return binary(e, "<", kCompare);
      case OpCode::kLe: return binary(e, "<=", kCompare);
      case OpCode::kGt: return binary(e, ">", kCompare);
      case OpCode::kGe: return binary(e, ">=", kCompare);
      case OpCode::kEq: return binary(e, "==", kCompare);
      case OpCode::kNe: return binary(e, "!=", kCompare);
      case OpCode::kMax:
      case OpCode::kMin: {
        const std::string a = bind(expr(*e.args[0]), e.args[0]->dtype);
        const std::string b = bind(expr(*e.args[1]), e.args[1]->dtype);
        const char* cmp = e.op == OpCode::kMax ? " > " : " < ";
        return {a + cmp + b + " ? " + a + " : " + b, kTernary};
      }
      case OpCode::kWhere: {
        Text c = expr(*e.args[0]);
        Text a = expr(*e.args[1]);
        Text b = expr(*e.args[2]);
        return {wrap(c, kCompare) + " ? " + wrap(a, kCompare) + " : " + wrap(b, kTernary), kTernary};
      }
      case OpCode::kNeg: return {"-" + wrap(expr(*e.args[0]), kUnary), kUnary};
      case OpCode::kAbs: return call(floating ? "fabs" : "abs", e);
      case OpCode::kSqrt: return call("sqrt", e);
      case OpCode::kExp: return call("exp", e);
      case OpCode::kLog: return call("log", e);
      case OpCode::kPow: return call("pow", e);
      case OpCode::kFloorDiv:
        if (floating) {
          Text a = expr(*e.args[0]);
          Text b = expr(*e.args[1]);
          return {"floor(" + wrap(a, kMultiplicative) + " / " + wrap(b, kMultiplicative + 1) + ")", kAtom};
        }
        helpers_ = true;
        return call("floordiv_i64", e);
      case OpCode::kMod:
        if (floating) {
          const std::string a = bind(expr(*e.args[0]), e.dtype);
          const std::string b = bind(expr(*e.args[1]), e.dtype);
          return {a + " - floor(" + a + " / " + b + ") * " + b, kAdditive};
        }
        helpers_ = true;
        return call("mod_i64", e);
    }
    return {};
  }

  const IrProgram& program_;
  const LoopNest& nest_;
  std::string name_;
  PassLog* log_;
  std::map<std::string, const ArrayDecl*> params_;
  std::map<std::string, bool> by_value_;
  std::ostringstream body_;
  int indent_ = 1;
  int next_local_ = 0;
  int next_acc_ = 0;
  bool helpers_ = false;
};

class Emitter {
 public:
  explicit Emitter(PassLog* log) : log_(log) {}

  KernelBundle run(const IrProgram& program) {
    emit_program(program);
    schedule(program, "", {});
    return std::move(bundle_);
  }

 private:
  static std::string kernel_name(const IrProgram& p, const LoopNest& n) {
    return p.name + "_" + std::to_string(n.id);
  }

  void emit_program(const IrProgram& p) {
    if (!emitted_.insert(p.name).second) return;
    for (const auto& step : p.steps) {
      if (const auto* nest = std::get_if<LoopNest>(&step)) {
        bundle_.kernels.push_back(KernelWriter(p, *nest, kernel_name(p, *nest), log_).write());
      }
    }
    for (const auto& [name, f] : p.functions) emit_program(*f);
  }

  void schedule(const IrProgram& p, const std::string& prefix,
                const std::map<std::string, std::string>& outer) {
    auto resolve = [&](const std::string& a) {
      auto it = outer.find(a);
      return it != outer.end() ? it->second : prefix + a;
    };
    for (const auto& step : p.steps) {
      if (const auto* nest = std::get_if<LoopNest>(&step)) {
        const std::string name = kernel_name(p, *nest);
        const auto& k = *std::find_if(bundle_.kernels.begin(), bundle_.kernels.end(),
                                      [&](const KernelSource& s) { return s.name == name; });
        Launch l;
        l.kernel = name;
        l.global_size = k.global_size;
        for (const auto& param : k.params) l.bindings.emplace_back(param.name, resolve(param.name));
        bundle_.schedule.push_back(std::move(l));
        continue;
      }
      const auto& c = std::get<CallSite>(step);
      const auto& callee = *p.functions.at(c.function);
      std::map<std::string, std::string> inner;
      for (const auto& [in, caller] : c.args) inner[in] = resolve(caller);
      for (const auto& [out, caller] : c.results) inner[out] = resolve(caller);
      schedule(callee, prefix + c.function + "@" + std::to_string(c.id) + ".", inner);
    }
  }

  PassLog* log_;
  KernelBundle bundle_;
  std::set<std::string> emitted_;
};

}  // namespace

KernelBundle emit_kernels(const IrProgram& program, PassLog* log) { return Emitter(log).run(program); }

std::vector<std::filesystem::path> write_kernel_files(const KernelBundle& bundle,
                                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& k : bundle.kernels) {
    auto path = dir / (k.name + ".cl");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidProgram("cannot write " + path.string());
    out << "// Generated by arrayflow\n\n" << k.text;
    paths.push_back(path);
  }
  return paths;
}

}  // namespace arrayflow
