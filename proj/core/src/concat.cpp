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

#include <map>
#include <unordered_map>
#include <unordered_set>

#include "arrayflow/passes.hpp"
#include "internal/rewrite.hpp"

namespace arrayflow {
namespace {

/// Per-node concatenation axis inside a function body.
struct AxisPlan {
  std::unordered_map<const Node*, int> axis;
  std::vector<int> param_axes;
  std::vector<int> result_axes;
  std::int64_t extent = 0;
};

class Classes {
 public:
  int id(const Node* n, int a) {
    auto [it, inserted] = ids_.try_emplace({n, a}, static_cast<int>(parent_.size()));
    if (inserted) parent_.push_back(it->second);
    return it->second;
  }
  int find(int x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::map<std::pair<const Node*, int>, int> ids_;
  std::vector<int> parent_;
};

std::optional<AxisPlan> match_axes(const Node& def) {
  const auto& fn = def.as<FunctionPayload>();
  std::vector<NodeRef> roots;
  for (const auto& [name, r] : fn.results) roots.push_back(r);
  const auto body = topo_order(roots);
  Classes uf;
  std::vector<std::pair<const Node*, AxisConnections>> conns;
  for (const auto& n : body) {
    for (int a = 0; a < n->rank(); ++a) uf.id(n.get(), a);
  }
  auto endpoint = [](const Node& n, const AxisRef& r) {
    return r.operand < 0 ? &n : n.inputs()[r.operand].get();
  };
  for (const auto& n : body) {
    auto c = axis_connections(*n);
    for (const auto& [x, y] : c.links) {
      uf.unite(uf.id(endpoint(*n, x), x.axis), uf.id(endpoint(*n, y), y.axis));
    }
    conns.emplace_back(n.get(), std::move(c));
  }
  std::unordered_set<const Node*> in_body;
  for (const auto& n : body) in_body.insert(n.get());
  if (fn.params.empty()) return std::nullopt;
  const Node* p0 = fn.params[0].second.get();
  if (!in_body.count(p0)) return std::nullopt;

  for (int a0 = 0; a0 < p0->rank(); ++a0) {
    const int cls = uf.find(uf.id(p0, a0));
    AxisPlan plan;
    bool ok = true;
    for (const auto& n : body) {
      int count = 0;
      for (int a = 0; a < n->rank(); ++a) {
        if (uf.find(uf.id(n.get(), a)) == cls) {
          plan.axis[n.get()] = a;
          ++count;
        }
      }
      if (count > 1 || (count == 1 && n->kind() == NodeKind::kData)) ok = false;
    }
    for (const auto& [n, c] : conns) {
      for (const auto& r : c.position_sensitive) {
        const Node* e = endpoint(*n, r);
        if (uf.find(uf.id(e, r.axis)) == cls) ok = false;
      }
    }
    for (const auto& [name, p] : fn.params) {
      auto it = plan.axis.find(p.get());
      if (it == plan.axis.end()) ok = false;
      else plan.param_axes.push_back(it->second);
    }
    for (const auto& [name, r] : fn.results) {
      auto it = plan.axis.find(r.get());
      if (it == plan.axis.end()) ok = false;
      else plan.result_axes.push_back(it->second);
    }
    if (!ok) continue;
    plan.extent = p0->shape()[a0];
    return plan;
  }
  return std::nullopt;
}

NodeRef scaled_definition(const Node& def, const AxisPlan& plan, std::int64_t factor) {
  const auto& fn = def.as<FunctionPayload>();
  Graph body = function_body(def);
  Graph scaled = rewrite_graph(body, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
    auto it = plan.axis.find(orig.get());
    if (it == plan.axis.end()) return keep_or_rebuild(orig, std::move(inputs));
    const int a = it->second;
    Shape shape = orig->shape();
    shape[a] *= factor;
    Payload payload = orig->payload();
    switch (orig->kind()) {
      case NodeKind::kPlaceholder:
        std::get<PlaceholderPayload>(payload).shape = shape;
        break;
      case NodeKind::kIndexLambda:
        std::get<IndexLambdaPayload>(payload).shape = shape;
        break;
      case NodeKind::kReshape:
        std::get<ReshapePayload>(payload).shape = shape;
        break;
      case NodeKind::kIndexing: {
        auto& sels = std::get<IndexingPayload>(payload).selectors;
        auto in_axis = plan.axis.find(orig->inputs()[0].get());
        if (in_axis != plan.axis.end()) {
          if (auto* sl = std::get_if<Slice>(&sels[in_axis->second])) {
            sl->stop = inputs[0]->shape()[in_axis->second];
          }
        }
        break;
      }
      default:
        break;
    }
    return Node::create(orig->kind(), std::move(inputs), std::move(payload), orig->axis_tags(),
                        orig->materialized());
  });
  std::vector<std::pair<std::string, NodeRef>> results;
  for (const auto& [name, r] : fn.results) results.emplace_back(name, scaled.outputs.at(name));
  return rebuild_function(def, std::move(results));
}

bool is_ancestor(const Node* maybe_ancestor, const NodeRef& of) {
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack;
  for (const auto& in : of->inputs()) stack.push_back(in.get());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (n == maybe_ancestor) return true;
    if (!seen.insert(n).second) continue;
    for (const auto& in : n->inputs()) stack.push_back(in.get());
  }
  return false;
}

std::string axes_string(const std::vector<int>& axes) {
  std::string s = "[";
  for (std::size_t i = 0; i < axes.size(); ++i) s += (i ? ", " : "") + std::to_string(axes[i]);
  return s + "]";
}

}  // namespace

Graph concatenate_calls(const Graph& graph, const std::optional<std::set<std::string>>& eligible,
                        PassLog* log) {
  Graph g = graph;
  std::unordered_set<std::uint64_t> reported;
  while (true) {
    const auto order = topo_order(g);
    // Groups keyed by function identity, in first-call order.
    std::vector<std::vector<NodeRef>> groups;
    std::vector<NodeRef> group_fn;
    std::unordered_map<const Node*, std::vector<NodeRef>> call_results;
    for (const auto& n : order) {
      if (n->kind() == NodeKind::kCallResult) call_results[n->inputs()[0].get()].push_back(n);
      if (n->kind() != NodeKind::kCall) continue;
      const auto& def = n->as<CallPayload>().function;
      if (eligible && !eligible->count(def->as<FunctionPayload>().name)) continue;
      std::size_t k = 0;
      while (k < group_fn.size() && !structurally_equal(group_fn[k], def)) ++k;
      if (k == group_fn.size()) {
        group_fn.push_back(def);
        groups.emplace_back();
      }
      groups[k].push_back(n);
    }

    bool fired = false;
    for (std::size_t gi = 0; gi < groups.size() && !fired; ++gi) {
      if (groups[gi].size() < 2) continue;
      // Split into pairwise-independent sets, first fit in topological order.
      std::vector<std::vector<NodeRef>> sets;
      for (const auto& c : groups[gi]) {
        bool placed = false;
        for (auto& s : sets) {
          bool independent = true;
          for (const auto& m : s) independent = independent && !is_ancestor(m.get(), c);
          if (independent) {
            s.push_back(c);
            placed = true;
            break;
          }
        }
        if (!placed) sets.push_back({c});
      }
      const auto& def = *group_fn[gi];
      const auto& name = def.as<FunctionPayload>().name;
      const auto plan = match_axes(def);
      if (!plan) {
        if (log && reported.insert(def.hash()).second) {
          log->add("concatenate_calls: no-op for '" + name + "': no consistent concatenation axis");
        }
        continue;
      }
      for (const auto& s : sets) {
        if (s.size() < 2) continue;
        const auto m = static_cast<std::int64_t>(s.size());
        NodeRef scaled = scaled_definition(def, *plan, m);
        std::vector<NodeRef> args;
        for (std::size_t p = 0; p < plan->param_axes.size(); ++p) {
          std::vector<NodeRef> parts;
          for (const auto& c : s) parts.push_back(c->inputs()[p]);
          args.push_back(adfg::concatenate(std::move(parts), plan->param_axes[p]));
        }
        NodeRef merged = adfg::call(scaled, std::move(args));
        const auto& results = def.as<FunctionPayload>().results;
        std::map<std::string, NodeRef> merged_results;
        for (std::size_t r = 0; r < results.size(); ++r) {
          merged_results[results[r].first] = adfg::call_result(merged, results[r].first);
        }
        std::unordered_map<const Node*, NodeRef> subst;
        for (std::int64_t i = 0; i < m; ++i) {
          for (const auto& cr : call_results[s[i].get()]) {
            const auto& rname = cr->as<CallResultPayload>().name;
            std::size_t r = 0;
            while (results[r].first != rname) ++r;
            const int axis = plan->result_axes[r];
            const NodeRef& whole = merged_results.at(rname);
            std::vector<Selector> sels;
            for (int j = 0; j < whole->rank(); ++j) {
              if (j == axis) sels.emplace_back(Slice{i * plan->extent, (i + 1) * plan->extent, 1});
              else sels.emplace_back(Slice{0, whole->shape()[j], 1});
            }
            NodeRef piece = adfg::indexing(whole, std::move(sels));
            if (!cr->axis_tags().empty()) piece = piece->with_tags(cr->axis_tags());
            subst.emplace(cr.get(), std::move(piece));
          }
        }
        g = rewrite_graph(g, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
          if (auto it = subst.find(orig.get()); it != subst.end()) return it->second;
          return keep_or_rebuild(orig, std::move(inputs));
        });
        if (log) {
          log->add("concatenate_calls: merged " + std::to_string(m) + " calls to '" + name +
                   "' along parameter axes " + axes_string(plan->param_axes));
        }
        fired = true;
        break;
      }
    }
    if (!fired) break;
  }
  return g;
}

}  // namespace arrayflow
