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
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "arrayflow/backend.hpp"
#include "arrayflow/errors.hpp"

namespace arrayflow {
namespace {

using Clock = std::chrono::steady_clock;

struct Buffer {
  const ArrayDecl* decl = nullptr;
  std::vector<std::int64_t> strides;
  std::vector<double> data;
};

/// Flattened expression: children refer to earlier entries.
struct Op {
  IrExpr::Kind kind = IrExpr::Kind::kConst;
  OpCode op = OpCode::kAdd;
  ReduceOp reduce = ReduceOp::kSum;
  DType dtype = DType::kF64;
  double value = 0.0;
  int slot = 0;  // variable / scalar slot or buffer index
  std::vector<int> args;
  std::vector<int> vars;
  std::vector<std::int64_t> extents;
};

struct CompiledStatement {
  bool scalar = false;
  int target = 0;
  DType dtype = DType::kF64;
  std::vector<int> index;
  int value = 0;
};

class NestRunner {
 public:
  NestRunner(const IrProgram& program, const LoopNest& nest, std::vector<Buffer>& buffers,
             const std::unordered_map<std::string, int>& buffer_index)
      : program_(program), nest_(nest), buffers_(buffers), buffer_index_(buffer_index) {
    for (const auto& l : nest.loops) loop_slots_.push_back(var_slot(l.var));
    for (const auto& [name, dtype] : nest.scalars) scalar_slot(name);
    for (const auto& st : nest.body) {
      CompiledStatement c;
      c.scalar = st.scalar_target;
      if (c.scalar) {
        c.target = scalar_slot(st.target);
        for (const auto& [name, dtype] : nest.scalars) {
          if (name == st.target) c.dtype = dtype;
        }
      } else {
        c.target = buffer(st.target);
        c.dtype = buffers_[c.target].decl->dtype;
        for (const auto& i : st.index) c.index.push_back(compile(*i));
      }
      c.value = compile(*st.value);
      statements_.push_back(std::move(c));
    }
    vars_.assign(var_names_.size(), 0.0);
    scalars_.assign(scalar_names_.size(), 0.0);
  }

  std::int64_t run() {
    const std::size_t rank = loop_slots_.size();
    std::vector<std::int64_t> i(rank, 0);
    std::int64_t count = 1;
    for (const auto& l : nest_.loops) count *= l.extent;
    if (count == 0) return 0;
    for (std::int64_t n = 0; n < count; ++n) {
      for (std::size_t k = 0; k < rank; ++k) vars_[loop_slots_[k]] = static_cast<double>(i[k]);
      for (const auto& st : statements_) {
        const double v = cast_value(st.dtype, eval(st.value));
        if (st.scalar) {
          scalars_[st.target] = v;
        } else {
          auto& b = buffers_[st.target];
          b.data[offset(st.target, st.index)] = v;
        }
      }
      for (std::size_t k = rank; k-- > 0;) {
        if (++i[k] < nest_.loops[k].extent) break;
        i[k] = 0;
      }
    }
    return count;
  }

 private:
  int var_slot(const std::string& name) {
    auto [it, inserted] = var_index_.emplace(name, static_cast<int>(var_names_.size()));
    if (inserted) var_names_.push_back(name);
    return it->second;
  }
  int scalar_slot(const std::string& name) {
    auto [it, inserted] = scalar_index_.emplace(name, static_cast<int>(scalar_names_.size()));
    if (inserted) scalar_names_.push_back(name);
    return it->second;
  }
  int buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    if (it == buffer_index_.end()) throw InvalidProgram("undeclared array '" + name + "' in " + program_.name);
    return it->second;
  }

  int compile(const IrExpr& e) {
    Op op;
    op.kind = e.kind;
    op.op = e.op;
    op.reduce = e.reduce;
    op.dtype = e.dtype;
    op.value = e.value;
    switch (e.kind) {
      case IrExpr::Kind::kVar: op.slot = var_slot(e.name); break;
      case IrExpr::Kind::kScalar: op.slot = scalar_slot(e.name); break;
      case IrExpr::Kind::kAccess: op.slot = buffer(e.name); break;
      case IrExpr::Kind::kReduce:
        for (const auto& v : e.reduce_vars) op.vars.push_back(var_slot(v));
        op.extents = e.reduce_extents;
        break;
      default: break;
    }
    for (const auto& a : e.args) op.args.push_back(compile(*a));
    ops_.push_back(std::move(op));
    return static_cast<int>(ops_.size()) - 1;
  }

  std::size_t offset(int buf, const std::vector<int>& index) {
    const auto& b = buffers_[buf];
    std::int64_t off = 0;
    for (std::size_t k = 0; k < index.size(); ++k) {
      const double raw = eval(index[k]);
      const auto i = static_cast<std::int64_t>(raw);
      const std::int64_t extent = b.decl->shape[k];
      if (!(raw >= 0) || i >= extent) {
        throw OutOfBoundsIndex(program_.name + " nest " + std::to_string(nest_.id) + ": index " +
                               format_index(raw) + " out of range for axis " + std::to_string(k) +
                               " of '" + b.decl->name + "' with extent " + std::to_string(extent));
      }
      off += i * b.strides[k];
    }
    return static_cast<std::size_t>(off);
  }

  static std::string format_index(double v) {
    if (std::isfinite(v) && v == std::trunc(v)) return std::to_string(static_cast<std::int64_t>(v));
    return format_double(v);
  }

  double eval(int id) {
    const Op& op = ops_[id];
    switch (op.kind) {
      case IrExpr::Kind::kConst: return op.value;
      case IrExpr::Kind::kVar: return vars_[op.slot];
      case IrExpr::Kind::kScalar: return scalars_[op.slot];
      case IrExpr::Kind::kAccess: return buffers_[op.slot].data[offset(op.slot, op.args)];
      case IrExpr::Kind::kApply: {
        if (op.op == OpCode::kWhere) {
          const double c = eval(op.args[0]);
          return cast_value(op.dtype, eval(op.args[c != 0.0 ? 1 : 2]));
        }
        const double a = eval(op.args[0]);
        const double b = op.args.size() > 1 ? eval(op.args[1]) : 0.0;
        return apply_op(op.op, op.dtype, a, b);
      }
      case IrExpr::Kind::kReduce: {
        const OpCode combine = op.reduce == ReduceOp::kSum   ? OpCode::kAdd
                               : op.reduce == ReduceOp::kMax ? OpCode::kMax
                                                             : OpCode::kMin;
        double acc = op.reduce == ReduceOp::kSum   ? 0.0
                     : op.reduce == ReduceOp::kMax ? -std::numeric_limits<double>::infinity()
                                                   : std::numeric_limits<double>::infinity();
        std::int64_t count = 1;
        for (auto e : op.extents) count *= e;
        if (count == 0) return cast_value(op.dtype, acc);
        const std::size_t r = op.vars.size();
        std::vector<std::int64_t> i(r, 0);
        for (std::int64_t n = 0; n < count; ++n) {
          for (std::size_t k = 0; k < r; ++k) vars_[op.vars[k]] = static_cast<double>(i[k]);
          acc = apply_op(combine, op.dtype, acc, eval(op.args[0]));
          for (std::size_t k = r; k-- > 0;) {
            if (++i[k] < op.extents[k]) break;
            i[k] = 0;
          }
        }
        return acc;
      }
    }
    return 0.0;
  }

  const IrProgram& program_;
  const LoopNest& nest_;
  std::vector<Buffer>& buffers_;
  const std::unordered_map<std::string, int>& buffer_index_;
  std::vector<Op> ops_;
  std::vector<CompiledStatement> statements_;
  std::vector<int> loop_slots_;
  std::unordered_map<std::string, int> var_index_;
  std::vector<std::string> var_names_;
  std::unordered_map<std::string, int> scalar_index_;
  std::vector<std::string> scalar_names_;
  std::vector<double> vars_;
  std::vector<double> scalars_;
};

class Interpreter {
 public:
  explicit Interpreter(Clock::time_point start) : start_(start) {}

  /// Runs `program` with inputs by array name; returns every output array.
  std::map<std::string, NdArray> run(const IrProgram& program, const std::map<std::string, NdArray>& inputs) {
    std::vector<Buffer> buffers;
    std::unordered_map<std::string, int> index;
    for (const auto& decl : program.arrays) {
      Buffer b;
      b.decl = &decl;
      b.strides = row_major_strides(decl.shape);
      switch (decl.storage) {
        case Storage::kInput: {
          auto it = inputs.find(decl.name);
          if (it == inputs.end()) {
            throw UnboundPlaceholder("no binding for input '" + decl.name + "' of " + program.name);
          }
          if (it->second.shape != decl.shape) {
            throw BindingMismatch("input '" + decl.name + "' expects shape " + shape_string(decl.shape) +
                                  ", got " + shape_string(it->second.shape));
          }
          if (it->second.dtype != decl.dtype) {
            throw BindingMismatch("input '" + decl.name + "' expects dtype " +
                                  std::string(dtype_name(decl.dtype)) + ", got " +
                                  std::string(dtype_name(it->second.dtype)));
          }
          b.data = it->second.data;
          break;
        }
        case Storage::kConstant:
          b.data = decl.values ? *decl.values : std::vector<double>{};
          break;
        default:
          b.data.assign(static_cast<std::size_t>(element_count(decl.shape)), 0.0);
      }
      index[decl.name] = static_cast<int>(buffers.size());
      buffers.push_back(std::move(b));
    }

    for (const auto& step : program.steps) {
      if (const auto* nest = std::get_if<LoopNest>(&step)) {
        NestRunner runner(program, *nest, buffers, index);
        const auto t0 = Clock::now();
        const std::int64_t elements = runner.run();
        const auto t1 = Clock::now();
        record(program.name + "_" + std::to_string(nest->id), elements, t0, t1);
        count_numeric_operation();
        continue;
      }
      const auto& call = std::get<CallSite>(step);
      const auto& callee = *program.functions.at(call.function);
      std::map<std::string, NdArray> args;
      for (const auto& [inner, outer] : call.args) {
        const Buffer& b = buffers[index.at(outer)];
        args[inner] = NdArray(b.decl->shape, b.decl->dtype, b.data);
      }
      auto results = run(callee, args);
      for (const auto& [inner, outer] : call.results) {
        Buffer& b = buffers[index.at(outer)];
        b.data = results.at(inner).data;
        for (auto& v : b.data) v = cast_value(b.decl->dtype, v);
      }
    }

    std::map<std::string, NdArray> out;
    for (const auto& b : buffers) {
      if (b.decl->storage == Storage::kOutput) out[b.decl->name] = NdArray(b.decl->shape, b.decl->dtype, b.data);
    }
    return out;
  }

  std::vector<ProfileRecord> take_profile() { return std::move(profile_); }

 private:
  void record(const std::string& kernel, std::int64_t elements, Clock::time_point t0, Clock::time_point t1) {
    auto it = std::find_if(profile_.begin(), profile_.end(),
                           [&](const ProfileRecord& r) { return r.kernel == kernel; });
    if (it == profile_.end()) {
      profile_.push_back({kernel, 0, 0, {}});
      it = std::prev(profile_.end());
    }
    ++it->count;
    it->elements += elements;
    auto ns = [&](Clock::time_point t) {
      return std::chrono::duration_cast<std::chrono::nanoseconds>(t - start_).count();
    };
    it->intervals.emplace_back(ns(t0), ns(t1));
  }

  Clock::time_point start_;
  std::vector<ProfileRecord> profile_;
};

}  // namespace

std::int64_t ProfileRecord::total_ns() const {
  std::int64_t t = 0;
  for (const auto& [a, b] : intervals) t += b - a;
  return t;
}

std::int64_t RunResult::launches() const {
  std::int64_t n = 0;
  for (const auto& r : profile) n += r.count;
  return n;
}

RunResult run_ir(const IrProgram& program, const Bindings& bindings) {
  Interpreter interp(Clock::now());
  auto arrays = interp.run(program, bindings);
  RunResult r;
  for (const auto& [name, array] : program.outputs) r.outputs[name] = arrays.at(array);
  r.profile = interp.take_profile();
  return r;
}

std::string profile_csv(const std::vector<ProfileRecord>& profile) {
  std::ostringstream os;
  os << "kernel,count,elements,total_ns\n";
  for (const auto& r : profile) os << r.kernel << "," << r.count << "," << r.elements << "," << r.total_ns() << "\n";
  return os.str();
}

std::string_view StageTimings::name(Stage s) {
  switch (s) {
    case Stage::kAssemble: return "assemble ADFG";
    case Stage::kTransform: return "transform ADFG";
    case Stage::kGenerateIr: return "generate scalar IR";
    case Stage::kFusion: return "loop fusion";
    case Stage::kContraction: return "array contraction";
    case Stage::kOtherIr: return "other IR transforms";
    case Stage::kCodegen: return "codegen";
    case Stage::kExecution: return "execution";
  }
  return "?";
}

double StageTimings::total() const {
  double t = 0.0;
  for (double s : seconds) t += s;
  return t;
}

std::array<double, kStageCount> StageTimings::percentages() const {
  std::array<double, kStageCount> p{};
  const double t = total();
  for (std::size_t k = 0; k < kStageCount; ++k) p[k] = t > 0.0 ? 100.0 * seconds[k] / t : 100.0 / kStageCount;
  return p;
}

std::string StageTimings::report() const {
  std::ostringstream os;
  const auto pct = percentages();
  os << std::fixed;
  for (std::size_t k = 0; k < kStageCount; ++k) {
    os << std::left << std::setw(22) << name(static_cast<Stage>(k)) << std::right << std::setw(12)
       << std::setprecision(6) << seconds[k] << " s " << std::setw(7) << std::setprecision(2) << pct[k] << "%\n";
  }
  os << std::left << std::setw(22) << "total" << std::right << std::setw(12) << std::setprecision(6) << total()
     << " s\n";
  return os.str();
}

StageTimer::~StageTimer() {
  if (sink_) sink_->add(stage_, std::chrono::duration<double>(Clock::now() - start_).count());
}

}  // namespace arrayflow
