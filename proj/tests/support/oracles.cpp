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

#include "oracles.hpp"

#include <set>
#include <utility>

namespace arrayflow::testing {

namespace {

/// Pairs already proven equal; keeps shared sub-DAGs from being re-walked.
using ProvenPairs = std::set<std::pair<const Node*, const Node*>>;

bool deep_equal(const NodeRef& a, const NodeRef& b, ProvenPairs& proven);

bool payload_equal(const Node& a, const Node& b, ProvenPairs& proven) {
  switch (a.kind()) {
    case NodeKind::kData:
      return a.as<DataPayload>().name == b.as<DataPayload>().name &&
             *a.as<DataPayload>().values == *b.as<DataPayload>().values;
    case NodeKind::kPlaceholder:
      return a.as<PlaceholderPayload>().name == b.as<PlaceholderPayload>().name;
    case NodeKind::kIndexLambda:
      return expr_string(*a.as<IndexLambdaPayload>().expr) == expr_string(*b.as<IndexLambdaPayload>().expr);
    case NodeKind::kIndexing:
      return a.as<IndexingPayload>().selectors == b.as<IndexingPayload>().selectors;
    case NodeKind::kEinsum:
      return a.as<EinsumPayload>().spec == b.as<EinsumPayload>().spec;
    case NodeKind::kConcatenate:
    case NodeKind::kStack:
      return a.as<AxisPayload>().axis == b.as<AxisPayload>().axis;
    case NodeKind::kCall:
      return deep_equal(a.as<CallPayload>().function, b.as<CallPayload>().function, proven);
    case NodeKind::kCallResult:
      return a.as<CallResultPayload>().name == b.as<CallResultPayload>().name;
    case NodeKind::kFunctionDefinition: {
      const auto& fa = a.as<FunctionPayload>();
      const auto& fb = b.as<FunctionPayload>();
      if (fa.name != fb.name || fa.params.size() != fb.params.size() || fa.results.size() != fb.results.size()) {
        return false;
      }
      for (std::size_t k = 0; k < fa.params.size(); ++k) {
        if (fa.params[k].first != fb.params[k].first || !deep_equal(fa.params[k].second, fb.params[k].second, proven)) {
          return false;
        }
      }
      for (std::size_t k = 0; k < fa.results.size(); ++k) {
        if (fa.results[k].first != fb.results[k].first || !deep_equal(fa.results[k].second, fb.results[k].second, proven)) {
          return false;
        }
      }
      return true;
    }
    case NodeKind::kSend:
      return a.as<SendPayload>().dest == b.as<SendPayload>().dest && a.as<SendPayload>().tag == b.as<SendPayload>().tag;
    case NodeKind::kReceive:
      return a.as<ReceivePayload>().source == b.as<ReceivePayload>().source &&
             a.as<ReceivePayload>().tag == b.as<ReceivePayload>().tag;
    default:
      return true;
  }
}

bool deep_equal(const NodeRef& a, const NodeRef& b, ProvenPairs& proven) {
  if (proven.count({a.get(), b.get()})) return true;
  if (a->kind() != b->kind() || a->shape() != b->shape() || a->dtype() != b->dtype() ||
      a->axis_tags() != b->axis_tags() || a->materialized() != b->materialized() ||
      a->inputs().size() != b->inputs().size() || !payload_equal(*a, *b, proven)) {
    return false;
  }
  for (std::size_t k = 0; k < a->inputs().size(); ++k) {
    if (!deep_equal(a->inputs()[k], b->inputs()[k], proven)) return false;
  }
  proven.emplace(a.get(), b.get());
  return true;
}

}  // namespace

bool brute_equal(const NodeRef& a, const NodeRef& b) {
  ProvenPairs proven;
  return deep_equal(a, b, proven);
}

}  // namespace arrayflow::testing
