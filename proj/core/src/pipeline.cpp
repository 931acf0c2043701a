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

#include "arrayflow/pipeline.hpp"

#include "arrayflow/errors.hpp"

namespace arrayflow {

CompiledProgram build_program(const Graph& graph, const PipelineOptions& options, StageTimings* timings) {
  CompiledProgram out;
  {
    StageTimer t(timings, Stage::kTransform);
    out.graph = run_graph_passes(graph, options.graph, &out.log);
  }
  IrProgram ir;
  {
    StageTimer t(timings, Stage::kGenerateIr);
    ir = lower(out.graph, options.lower, &out.log);
  }
  if (options.ir.fuse) {
    StageTimer t(timings, Stage::kFusion);
    ir = fuse_loops(ir, &out.log);
  }
  if (options.ir.contract) {
    StageTimer t(timings, Stage::kContraction);
    ir = contract_arrays(ir, &out.log);
  }
  {
    StageTimer t(timings, Stage::kOtherIr);
    if (options.ir.parallel) ir = tag_parallel(ir, &out.log);
    const auto problems = validate(ir);
    if (!problems.empty()) throw InvalidProgram("lowered program is malformed: " + problems.front());
  }
  out.ir = std::move(ir);
  if (options.emit) {
    StageTimer t(timings, Stage::kCodegen);
    out.kernels = emit_kernels(out.ir, &out.log);
  }
  return out;
}

RunResult execute(const CompiledProgram& program, const Bindings& bindings, StageTimings* timings) {
  StageTimer t(timings, Stage::kExecution);
  return run_ir(program.ir, bindings);
}

}  // namespace arrayflow
