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

// Graph-level transformations: deduplication, constant folding, axis-tag
// propagation, call concatenation and materialization, plus the
// reads/writes/computes cost model.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "arrayflow/adfg.hpp"

namespace arrayflow {

/// Line-oriented record of what each pass did, printed by `--explain`.
class PassLog {
 public:
  void add(std::string line) { lines_.push_back(std::move(line)); }
  const std::vector<std::string>& lines() const { return lines_; }
  std::string text() const;

 private:
  std::vector<std::string> lines_;
};

using MaterializePredicate = std::function<bool(const Node&)>;

struct PassConfig {
  bool dedup = true;
  bool constant_fold = true;
  bool propagate_tags = true;
  bool concatenate_calls = true;
  bool materialize = true;
  /// Function names eligible for concatenation; unset means every function.
  std::optional<std::set<std::string>> concatenation_eligible;
  /// Replaces the heuristic: forced nodes plus those matching the predicate.
  MaterializePredicate materialization_override;
};

Graph dedup(const Graph& graph, PassLog* log = nullptr);
Graph constant_fold(const Graph& graph, PassLog* log = nullptr);
Graph propagate_tags(const Graph& graph, PassLog* log = nullptr);
Graph materialize(const Graph& graph, PassLog* log = nullptr,
                  const MaterializePredicate& override_rule = {});
Graph concatenate_calls(const Graph& graph,
                        const std::optional<std::set<std::string>>& eligible = std::nullopt,
                        PassLog* log = nullptr);

/// dedup -> constant_fold -> propagate_tags -> concatenate_calls -> materialize,
/// each gated by its flag.
Graph run_graph_passes(const Graph& graph, const PassConfig& config, PassLog* log = nullptr);

/// True for nodes materialize() always flags: outputs aside, Einsums with a
/// reduction and the Call machinery.
bool forced_materialization(const Node& node);

struct CostReport {
  std::int64_t reads = 0;
  std::int64_t writes = 0;
  std::int64_t computes = 0;
  std::int64_t ideal_computes = 0;
  std::int64_t materialized = 0;
  double recomputation_rate = 0.0;
  double materialization_rate = 0.0;

  /// "R:<reads> W:<writes> C:<computes>"
  std::string summary() const;
};

/// Counts under the graph's current materialization flags. Leaves (Data,
/// Placeholder, Receive) are materialized inputs and never computed.
CostReport cost_report(const Graph& graph);

/// One endpoint of an axis connection: operand -1 is the node itself,
/// k >= 0 its k-th input.
struct AxisRef {
  int operand = -1;
  int axis = 0;
  friend auto operator<=>(const AxisRef&, const AxisRef&) = default;
};

struct AxisConnections {
  std::vector<std::pair<AxisRef, AxisRef>> links;
  /// Endpoints whose position matters to the node's semantics (anything but a
  /// straight elementwise pass-through along that axis).
  std::vector<AxisRef> position_sensitive;
};

/// The symmetric axis-connection relation contributed by one node.
AxisConnections axis_connections(const Node& node);

/// Rebuilds a FunctionDefinition after its body was rewritten; parameters are
/// re-bound by name to the placeholders of the new body.
NodeRef rebuild_function(const Node& definition,
                         std::vector<std::pair<std::string, NodeRef>> results);

}  // namespace arrayflow
