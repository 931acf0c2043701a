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

// Graph-to-execution driver: graph passes, lowering, IR passes, kernel
// emission and interpretation, with per-stage timing.

#pragma once

#include "arrayflow/backend.hpp"
#include "arrayflow/ir_passes.hpp"
#include "arrayflow/passes.hpp"

namespace arrayflow {

struct PipelineOptions {
  PassConfig graph;
  IrPassConfig ir;
  LowerOptions lower;
  bool emit = true;
};

struct CompiledProgram {
  Graph graph;  // after graph passes
  IrProgram ir;  // after IR passes
  KernelBundle kernels;
  PassLog log;
};

CompiledProgram build_program(const Graph& graph, const PipelineOptions& options = {},
                              StageTimings* timings = nullptr);

RunResult execute(const CompiledProgram& program, const Bindings& bindings,
                  StageTimings* timings = nullptr);

}  // namespace arrayflow
