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

#include "arrayflow/passes.hpp"

#include <set>
#include <unordered_map>
#include <unordered_set>

#include "arrayflow/eager.hpp"
#include "internal/rewrite.hpp"

namespace arrayflow {

std::string PassLog::text() const {
  std::string s;
  for (const auto& l : lines_) s += l + "\n";
  return s;
}

NodeRef rebuild_function(const Node& definition,
                         std::vector<std::pair<std::string, NodeRef>> results) {
  const auto& fn = definition.as<FunctionPayload>();
  std::vector<NodeRef> roots;
  for (const auto& [name, node] : results) roots.push_back(node);
  std::unordered_map<std::string, NodeRef> by_name;
  for (const auto& n : topo_order(roots)) {
    if (n->kind() == NodeKind::kPlaceholder) by_name.emplace(n->as<PlaceholderPayload>().name, n);
  }
  std::vector<std::pair<std::string, NodeRef>> params;
  for (const auto& [pname, ph] : fn.params) {
    auto it = by_name.find(ph->as<PlaceholderPayload>().name);
    params.emplace_back(pname, it == by_name.end() ? ph : it->second);
  }
  return adfg::function_definition(fn.name, std::move(params), std::move(results));
}

namespace {

using GraphPass = std::function<Graph(const Graph&)>;

/// Applies `pass` to the body of every function reached through Call nodes.
class BodyMapper {
 public:
  explicit BodyMapper(GraphPass pass) : pass_(std::move(pass)) {}

  NodeRef function(const NodeRef& def) {
    if (auto it = memo_.find(def.get()); it != memo_.end()) return it->second;
    Graph body = pass_(function_body(*def));
    std::vector<std::pair<std::string, NodeRef>> results;
    for (const auto& [name, node] : def->as<FunctionPayload>().results) {
      results.emplace_back(name, body.outputs.at(name));
    }
    NodeRef out = rebuild_function(*def, std::move(results));
    if (structurally_equal(out, def)) out = def;
    keep_.push_back(def);
    memo_.emplace(def.get(), out);
    return out;
  }

  NodeRef call(const NodeRef& orig, std::vector<NodeRef> inputs) {
    return rebuild_call(orig, function(orig->as<CallPayload>().function), std::move(inputs));
  }

 private:
  GraphPass pass_;
  std::unordered_map<const Node*, NodeRef> memo_;
  std::vector<NodeRef> keep_;
};

class Interner {
 public:
  NodeRef intern(NodeRef n) {
    auto& bucket = table_[n->hash()];
    for (const auto& c : bucket) {
      if (structurally_equal(c, n)) return c;
    }
    bucket.push_back(n);
    return n;
  }

 private:
  std::unordered_map<std::uint64_t, std::vector<NodeRef>> table_;
};

Graph dedup_impl(const Graph& graph) {
  Interner interner;
  BodyMapper bodies(dedup_impl);
  return rewrite_graph(graph, [&](const NodeRef& orig, std::vector<NodeRef> inputs) {
    if (orig->kind() == NodeKind::kCall) {
      auto def = interner.intern(bodies.function(orig->as<CallPayload>().function));
      return interner.intern(rebuild_call(orig, def, std::move(inputs)));
    }
    return interner.intern(keep_or_rebuild(orig, std::move(inputs)));
  });
}

bool is_fold_kind(NodeKind k) {
  switch (k) {
    case NodeKind::kIndexLambda:
    case NodeKind::kReshape:
    case NodeKind::kIndexing:
    case NodeKind::kEinsum:
    case NodeKind::kConcatenate:
    case NodeKind::kStack:
      return true;
    default:
      return false;
  }
}

Graph fold_impl(const Graph& graph, int* folded) {
  const auto order = topo_order(graph);
  std::unordered_set<const Node*> foldable;
  for (const auto& n : order) {
    bool ok = n->kind() == NodeKind::kData;
    if (is_fold_kind(n->kind())) {
      ok = true;
      for (const auto& in : n->inputs()) ok = ok && foldable.count(in.get());
    }
    if (ok) foldable.insert(n.get());
  }
  std::unordered_set<const Node*> frontier;
  for (const auto& [name, out] : graph.outputs) frontier.insert(out.get());
  for (const auto& n : order) {
    if (foldable.count(n.get())) continue;
    for (const auto& in : n->inputs()) frontier.insert(in.get());
  }
  EagerEvaluator ev({});
  BodyMapper bodies([folded](const Graph& g) { return fold_impl(g, folded); });
  return rewrite_graph(graph, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
    if (orig->kind() != NodeKind::kData && foldable.count(orig.get()) &&
        frontier.count(orig.get())) {
      const NdArray& value = ev.evaluate(orig);
      auto vals = std::make_shared<std::vector<double>>(value.data);
      if (folded) ++*folded;
      return Node::create(NodeKind::kData, {},
                          DataPayload{"", value.shape, value.dtype, std::move(vals)},
                          orig->axis_tags(), orig->materialized());
    }
    if (orig->kind() == NodeKind::kCall) return bodies.call(orig, std::move(inputs));
    return keep_or_rebuild(orig, std::move(inputs));
  });
}

Graph materialize_impl(const Graph& graph, const MaterializePredicate& override_rule) {
  const auto order = topo_order(graph);
  const auto counts = count_successors(graph);
  std::unordered_set<const Node*> outputs;
  for (const auto& [name, out] : graph.outputs) outputs.insert(out.get());
  std::unordered_set<const Node*> call_args;
  for (const auto& n : order) {
    if (n->kind() == NodeKind::kCall) {
      for (const auto& in : n->inputs()) call_args.insert(in.get());
    }
  }

  std::unordered_set<const Node*> flagged;
  std::unordered_map<const Node*, std::set<const Node*>> nearest;
  for (const auto& n : order) {
    if (n->is_leaf() || n->kind() == NodeKind::kSend || n->kind() == NodeKind::kSendWrapper) continue;
    std::set<const Node*> anc;
    for (const auto& in : n->inputs()) {
      if (in->kind() == NodeKind::kData && in->rank() == 0) continue;  // inlined literal
      if (in->is_leaf() || flagged.count(in.get())) {
        anc.insert(in.get());
      } else if (auto it = nearest.find(in.get()); it != nearest.end()) {
        anc.insert(it->second.begin(), it->second.end());
      }
    }
    bool flag = n->materialized() || outputs.count(n.get()) || call_args.count(n.get()) ||
                forced_materialization(*n);
    if (!flag) {
      flag = override_rule ? override_rule(*n)
                           : anc.size() > 1 && counts.successors_of(*n) > 1;
    }
    if (flag) flagged.insert(n.get());
    else nearest.emplace(n.get(), std::move(anc));
  }

  BodyMapper bodies([&](const Graph& g) { return materialize_impl(g, override_rule); });
  return rewrite_graph(graph, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
    NodeRef n = orig->kind() == NodeKind::kCall ? bodies.call(orig, std::move(inputs))
                                                : keep_or_rebuild(orig, std::move(inputs));
    if (flagged.count(orig.get()) && !n->materialized()) return n->with_materialized(true);
    return n;
  });
}

std::string count_line(const char* pass, std::size_t before, std::size_t after) {
  return std::string(pass) + ": " + std::to_string(before) + " -> " + std::to_string(after) +
         " nodes";
}

}  // namespace

bool forced_materialization(const Node& node) {
  switch (node.kind()) {
    case NodeKind::kEinsum:
      return !parse_einsum(node.as<EinsumPayload>().spec, node.inputs().size()).reduced().empty();
    case NodeKind::kCall:
    case NodeKind::kCallResult:
      return true;
    default:
      return false;
  }
}

Graph dedup(const Graph& graph, PassLog* log) {
  Graph out = dedup_impl(graph);
  if (log) log->add(count_line("dedup", node_count(graph), node_count(out)));
  return out;
}

Graph constant_fold(const Graph& graph, PassLog* log) {
  int folded = 0;
  Graph out = fold_impl(graph, &folded);
  if (log) {
    log->add(count_line("constant_fold", node_count(graph), node_count(out)) + ", " +
             std::to_string(folded) + " subgraphs folded");
  }
  return out;
}

Graph materialize(const Graph& graph, PassLog* log, const MaterializePredicate& override_rule) {
  Graph out = materialize_impl(graph, override_rule);
  if (log) {
    const auto report = cost_report(out);
    log->add("materialize: " + std::to_string(report.materialized) + " of " +
             std::to_string(report.ideal_computes) + " compute nodes materialized" +
             (override_rule ? " (override)" : ""));
  }
  return out;
}

Graph run_graph_passes(const Graph& graph, const PassConfig& config, PassLog* log) {
  Graph g = graph;
  if (config.dedup) g = dedup(g, log);
  if (config.constant_fold) g = constant_fold(g, log);
  if (config.propagate_tags) g = propagate_tags(g, log);
  if (config.concatenate_calls) {
    g = concatenate_calls(g, config.concatenation_eligible, log);
    if (config.dedup) g = dedup(g, nullptr);
  }
  if (config.materialize) g = materialize(g, log, config.materialization_override);
  return g;
}

std::string CostReport::summary() const {
  return "R:" + std::to_string(reads) + " W:" + std::to_string(writes) +
         " C:" + std::to_string(computes);
}

CostReport cost_report(const Graph& graph) {
  const auto order = topo_order(graph);
  std::unordered_set<const Node*> outputs;
  for (const auto& [name, out] : graph.outputs) outputs.insert(out.get());
  std::unordered_map<const Node*, std::vector<const Node*>> consumers;
  for (const auto& n : order) {
    std::unordered_set<const Node*> seen;
    for (const auto& in : n->inputs()) {
      if (seen.insert(in.get()).second) consumers[in.get()].push_back(n.get());
    }
  }
  auto stored = [&](const Node& n) {
    return n.is_leaf() || n.materialized() || outputs.count(&n) > 0;
  };
  std::unordered_map<const Node*, std::int64_t> evals;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* n = it->get();
    std::int64_t e = 0;
    if (stored(*n)) {
      e = 1;
    } else {
      for (const Node* c : consumers[n]) e += evals[c];
    }
    evals[n] = e;
  }
  CostReport r;
  for (const auto& n : order) {
    // Scalar constants become literals in generated code and cost no reads.
    const bool literal = n->kind() == NodeKind::kData && n->rank() == 0;
    if (stored(*n) && !literal) {
      for (const Node* c : consumers[n.get()]) r.reads += evals[c];
    }
    if (n->is_leaf()) continue;
    r.ideal_computes++;
    r.computes += evals[n.get()];
    if (stored(*n)) {
      r.writes++;
      r.materialized++;
    }
  }
  if (r.ideal_computes > 0) {
    r.recomputation_rate = static_cast<double>(r.computes - r.ideal_computes) /
                           static_cast<double>(r.ideal_computes);
    r.materialization_rate =
        static_cast<double>(r.materialized) / static_cast<double>(r.ideal_computes);
  }
  return r;
}

}  // namespace arrayflow
