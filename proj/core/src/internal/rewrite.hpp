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

#pragma once

#include <vector>

#include "arrayflow/adfg.hpp"

namespace arrayflow {

/// `orig` itself when every input is unchanged, else a copy over `inputs`.
inline NodeRef keep_or_rebuild(const NodeRef& orig, std::vector<NodeRef> inputs) {
  bool same = inputs.size() == orig->inputs().size();
  for (std::size_t i = 0; same && i < inputs.size(); ++i) same = inputs[i] == orig->inputs()[i];
  if (same) return orig;
  return orig->with_inputs(std::move(inputs));
}

/// Rebuilds a Call over a replacement FunctionDefinition, keeping tags/flag.
inline NodeRef rebuild_call(const NodeRef& orig, NodeRef function, std::vector<NodeRef> inputs) {
  if (function == orig->as<CallPayload>().function) return keep_or_rebuild(orig, std::move(inputs));
  return Node::create(NodeKind::kCall, std::move(inputs), CallPayload{std::move(function)},
                      orig->axis_tags(), orig->materialized());
}

inline std::size_t node_count(const Graph& g) { return topo_order(g).size(); }

}  // namespace arrayflow
