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
#include <numeric>
#include <unordered_map>

#include "arrayflow/errors.hpp"
#include "arrayflow/passes.hpp"
#include "internal/rewrite.hpp"

namespace arrayflow {
namespace {

void collect_lambda(const ScalarExpr& e, const Node& node, AxisConnections& out) {
  switch (e.kind) {
    case ScalarExpr::Kind::kConst:
      return;
    case ScalarExpr::Kind::kIndex:
      out.position_sensitive.push_back({-1, e.index});
      return;
    case ScalarExpr::Kind::kInput: {
      const auto& in = *node.inputs()[e.index];
      for (int j = 0; j < static_cast<int>(e.access.size()); ++j) {
        const auto& a = e.access[j];
        int linked = -1;
        for (int o = 0; o < node.rank(); ++o) {
          if (a.is_identity_of(o) && in.shape()[j] == node.shape()[o]) linked = o;
        }
        if (linked >= 0) {
          out.links.push_back({{-1, linked}, {e.index, j}});
          continue;
        }
        out.position_sensitive.push_back({e.index, j});
        for (int o = 0; o < node.rank(); ++o) {
          if (a.uses(o)) out.position_sensitive.push_back({-1, o});
        }
      }
      return;
    }
    case ScalarExpr::Kind::kApply:
      for (const auto& a : e.args) collect_lambda(*a, node, out);
      return;
  }
}

void collect_reshape(const Node& node, AxisConnections& out) {
  const Shape& in = node.inputs()[0]->shape();
  const Shape& os = node.shape();
  auto all_sensitive = [&] {
    for (int j = 0; j < static_cast<int>(in.size()); ++j) out.position_sensitive.push_back({0, j});
    for (int o = 0; o < static_cast<int>(os.size()); ++o) out.position_sensitive.push_back({-1, o});
  };
  if (element_count(in) == 0) {
    all_sensitive();
    return;
  }
  // Walk both shapes, closing a group whenever the running products agree.
  std::size_t i = 0;
  std::size_t o = 0;
  while (i < in.size() || o < os.size()) {
    const std::size_t i0 = i;
    const std::size_t o0 = o;
    std::int64_t pi = 1;
    std::int64_t po = 1;
    if (i < in.size()) pi *= in[i++];
    if (o < os.size()) po *= os[o++];
    while (pi != po) {
      if (pi < po && i < in.size()) pi *= in[i++];
      else if (po < pi && o < os.size()) po *= os[o++];
      else break;
    }
    const bool one_to_one = i - i0 == 1 && o - o0 == 1 && in[i0] == os[o0];
    if (one_to_one) {
      out.links.push_back({{-1, static_cast<int>(o0)}, {0, static_cast<int>(i0)}});
      continue;
    }
    for (std::size_t k = i0; k < i; ++k) out.position_sensitive.push_back({0, static_cast<int>(k)});
    for (std::size_t k = o0; k < o; ++k) out.position_sensitive.push_back({-1, static_cast<int>(k)});
  }
}

}  // namespace

AxisConnections axis_connections(const Node& node) {
  AxisConnections out;
  switch (node.kind()) {
    case NodeKind::kData:
      for (int o = 0; o < node.rank(); ++o) out.position_sensitive.push_back({-1, o});
      break;
    case NodeKind::kPlaceholder:
    case NodeKind::kReceive:
    case NodeKind::kFunctionDefinition:
      break;
    case NodeKind::kIndexLambda:
      collect_lambda(*node.as<IndexLambdaPayload>().expr, node, out);
      break;
    case NodeKind::kReshape:
      collect_reshape(node, out);
      break;
    case NodeKind::kIndexing: {
      const auto& sels = node.as<IndexingPayload>().selectors;
      const Shape& in = node.inputs()[0]->shape();
      int k = 0;
      for (int j = 0; j < static_cast<int>(sels.size()); ++j) {
        const auto& s = sels[j];
        if (std::holds_alternative<std::int64_t>(s)) {
          out.position_sensitive.push_back({0, j});
        } else if (const auto* sl = std::get_if<Slice>(&s)) {
          if (sl->start == 0 && sl->step == 1 && sl->stop == in[j]) {
            out.links.push_back({{-1, k}, {0, j}});
          } else {
            out.position_sensitive.push_back({0, j});
            out.position_sensitive.push_back({-1, k});
          }
          ++k;
        } else {
          const int src = std::get<ArraySelector>(s).input;
          out.position_sensitive.push_back({0, j});
          for (int t = 0; t < node.inputs()[src]->rank(); ++t) {
            out.links.push_back({{-1, k + t}, {src, t}});
          }
          k += node.inputs()[src]->rank();
        }
      }
      break;
    }
    case NodeKind::kEinsum: {
      const auto spec = parse_einsum(node.as<EinsumPayload>().spec, node.inputs().size());
      std::map<char, std::vector<AxisRef>> by_letter;
      for (int k = 0; k < static_cast<int>(spec.inputs.size()); ++k) {
        for (int j = 0; j < static_cast<int>(spec.inputs[k].size()); ++j) {
          by_letter[spec.inputs[k][j]].push_back({k, j});
        }
      }
      for (int o = 0; o < static_cast<int>(spec.output.size()); ++o) {
        by_letter[spec.output[o]].push_back({-1, o});
      }
      for (const auto& [letter, refs] : by_letter) {
        for (std::size_t t = 1; t < refs.size(); ++t) out.links.push_back({refs[0], refs[t]});
        if (spec.output.find(letter) == std::string::npos) {
          out.position_sensitive.insert(out.position_sensitive.end(), refs.begin(), refs.end());
        }
      }
      break;
    }
    case NodeKind::kConcatenate: {
      const int axis = node.as<AxisPayload>().axis;
      out.position_sensitive.push_back({-1, axis});
      for (int k = 0; k < static_cast<int>(node.inputs().size()); ++k) {
        out.position_sensitive.push_back({k, axis});
        for (int j = 0; j < node.rank(); ++j) {
          if (j != axis) out.links.push_back({{-1, j}, {k, j}});
        }
      }
      break;
    }
    case NodeKind::kStack: {
      const int axis = node.as<AxisPayload>().axis;
      out.position_sensitive.push_back({-1, axis});
      for (int k = 0; k < static_cast<int>(node.inputs().size()); ++k) {
        for (int j = 0; j < node.inputs()[k]->rank(); ++j) {
          out.links.push_back({{-1, j < axis ? j : j + 1}, {k, j}});
        }
      }
      break;
    }
    case NodeKind::kCall:
      for (int k = 0; k < static_cast<int>(node.inputs().size()); ++k) {
        for (int j = 0; j < node.inputs()[k]->rank(); ++j) out.position_sensitive.push_back({k, j});
      }
      break;
    case NodeKind::kCallResult:
      for (int o = 0; o < node.rank(); ++o) out.position_sensitive.push_back({-1, o});
      break;
    case NodeKind::kSend:
    case NodeKind::kSendWrapper:
      for (int o = 0; o < node.rank(); ++o) out.links.push_back({{-1, o}, {0, o}});
      break;
  }
  return out;
}

namespace {

struct TagSource {
  std::string value;
  const Node* node;
  int axis;
};

class AxisUnion {
 public:
  int id(const Node* n, int axis) {
    auto [it, inserted] = ids_.try_emplace({n, axis}, static_cast<int>(parent_.size()));
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

const Node* endpoint(const Node& n, const AxisRef& r) {
  return r.operand < 0 ? &n : n.inputs()[r.operand].get();
}

Graph tags_impl(const Graph& graph, int* changed) {
  const auto order = topo_order(graph);
  AxisUnion uf;
  for (const auto& n : order) {
    for (int a = 0; a < n->rank(); ++a) uf.id(n.get(), a);
  }
  for (const auto& n : order) {
    for (const auto& [x, y] : axis_connections(*n).links) {
      uf.unite(uf.id(endpoint(*n, x), x.axis), uf.id(endpoint(*n, y), y.axis));
    }
  }
  std::map<int, std::map<std::string, TagSource>> class_tags;
  for (const auto& n : order) {
    for (int a = 0; a < n->rank(); ++a) {
      auto& tags = class_tags[uf.find(uf.id(n.get(), a))];
      for (const auto& t : n->tags_on(a)) {
        const std::string v = t.value.value_or("");
        auto [it, inserted] = tags.try_emplace(t.key, TagSource{v, n.get(), a});
        if (!inserted && it->second.value != v) {
          throw TagConflict("tag '" + t.key + "' has value '" + it->second.value + "' from " +
                            describe(*it->second.node) + " axis " +
                            std::to_string(it->second.axis) + " but '" + v + "' from " +
                            describe(*n) + " axis " + std::to_string(a));
        }
      }
    }
  }
  std::unordered_map<const Node*, AxisTagList> wanted;
  for (const auto& n : order) {
    AxisTagList list(static_cast<std::size_t>(n->rank()));
    bool any = false;
    for (int a = 0; a < n->rank(); ++a) {
      const auto& src = class_tags[uf.find(uf.id(n.get(), a))];
      for (const auto& [key, s] : src) {
        for (const auto& t : s.node->tags_on(s.axis)) {
          if (t.key == key) list[a].push_back(t);
        }
      }
      std::sort(list[a].begin(), list[a].end());
      any = any || !list[a].empty();
    }
    if (!any) list.clear();
    wanted.emplace(n.get(), std::move(list));
  }
  std::unordered_map<const Node*, NodeRef> bodies;
  return rewrite_graph(graph, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
    NodeRef n;
    if (orig->kind() == NodeKind::kCall) {
      const auto& def = orig->as<CallPayload>().function;
      auto it = bodies.find(def.get());
      if (it == bodies.end()) {
        Graph body = tags_impl(function_body(*def), changed);
        std::vector<std::pair<std::string, NodeRef>> results;
        for (const auto& [name, r] : def->as<FunctionPayload>().results) {
          results.emplace_back(name, body.outputs.at(name));
        }
        NodeRef rebuilt = rebuild_function(*def, std::move(results));
        it = bodies.emplace(def.get(), structurally_equal(rebuilt, def) ? def : rebuilt).first;
      }
      n = rebuild_call(orig, it->second, std::move(inputs));
    } else {
      n = keep_or_rebuild(orig, std::move(inputs));
    }
    const auto& tags = wanted.at(orig.get());
    if (tags != n->axis_tags()) {
      if (changed) ++*changed;
      return n->with_tags(tags);
    }
    return n;
  });
}

}  // namespace

Graph propagate_tags(const Graph& graph, PassLog* log) {
  int changed = 0;
  Graph out = tags_impl(graph, &changed);
  if (log) log->add("propagate_tags: " + std::to_string(changed) + " nodes gained tags");
  return out;
}

}  // namespace arrayflow
