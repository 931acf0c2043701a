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

// Reference interpreter for the array dataflow graph. Every equivalence test
// in the project compares against this evaluator.

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>

#include "arrayflow/adfg.hpp"
#include "arrayflow/types.hpp"

namespace arrayflow {

using Bindings = std::map<std::string, NdArray>;

/// Supplies the value of a Receive node when evaluating a distributed
/// program globally.
using ReceiveResolver = std::function<NdArray(const Node& receive)>;

/// Process-wide count of array-level numeric evaluations (eager node
/// evaluations plus executed loop nests).
std::uint64_t numeric_operation_count();
void count_numeric_operation(std::uint64_t n = 1);

/// Checks a bound value against a placeholder's shape and casts it to the
/// placeholder dtype. Throws BindingMismatch.
NdArray bind_placeholder(const PlaceholderPayload& p, const NdArray& value);

class EagerEvaluator {
 public:
  explicit EagerEvaluator(Bindings bindings, ReceiveResolver resolver = {});

  const NdArray& evaluate(const NodeRef& node);

 private:
  NdArray compute(const Node& node);
  const std::map<std::string, NdArray>& call_results(const NodeRef& call);

  Bindings bindings_;
  ReceiveResolver resolver_;
  std::unordered_map<const Node*, NdArray> memo_;
  std::unordered_map<const Node*, std::map<std::string, NdArray>> calls_;
  std::vector<NodeRef> keep_alive_;
};

NdArray eager_eval(const NodeRef& node, const Bindings& bindings = {},
                   const ReceiveResolver& resolver = {});
std::map<std::string, NdArray> eager_eval(const Graph& graph, const Bindings& bindings = {},
                                          const ReceiveResolver& resolver = {});

}  // namespace arrayflow
