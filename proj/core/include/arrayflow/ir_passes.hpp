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

// Loop-level optimizations on the IR: fusion of compatible nests, array
// contraction into nest-local scalars, and parallel loop marking. Each pass
// is applied to called function programs as well.

#pragma once

#include "arrayflow/ir.hpp"
#include "arrayflow/passes.hpp"

namespace arrayflow {

/// Merges nests with equal loop extents and tag keys when every
/// cross-nest read is at the producer's own index and no cycle forms.
IrProgram fuse_loops(const IrProgram& program, PassLog* log = nullptr);

/// Replaces temporaries with scalars when they are produced and consumed at
/// one index inside a single nest.
IrProgram contract_arrays(const IrProgram& program, PassLog* log = nullptr);

/// Marks loops whose iterations touch disjoint elements of every array the
/// nest writes.
IrProgram tag_parallel(const IrProgram& program, PassLog* log = nullptr);

struct IrPassConfig {
  bool fuse = true;
  bool contract = true;
  bool parallel = true;
};

IrProgram run_ir_passes(const IrProgram& program, const IrPassConfig& config = {},
                        PassLog* log = nullptr);

}  // namespace arrayflow
