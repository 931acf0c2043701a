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

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"
#include "arrayflow/errors.hpp"
#include "arrayflow/passes.hpp"
#include "oracles.hpp"
#include "property_support.hpp"
#include "random_graph.hpp"

namespace arrayflow {
namespace {

using testing::brute_equal;
using testing::graphs_equal;
using testing::is_topological;
using testing::values_close;

testing::RandomGraphOptions small_graphs() {
  testing::RandomGraphOptions opt;
  opt.max_nodes = 30;
  return opt;
}

/// Copy of `g` with exactly one node altered in a way that changes identity.
Graph mutate_one(const Graph& g, std::uint64_t pick) {
  const auto order = topo_order(g);
  const Node* target = order[pick % order.size()].get();
  const int variant = static_cast<int>((pick / order.size()) % 3);
  return rewrite_graph(g, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
    NodeRef n = orig->with_inputs(std::move(inputs));
    if (orig.get() != target) return n;
    if (orig->kind() == NodeKind::kData && variant == 0 && !orig->as<DataPayload>().values->empty()) {
      DataPayload p = orig->as<DataPayload>();
      auto vals = std::make_shared<std::vector<double>>(*p.values);
      (*vals)[0] += 1.0;
      p.values = std::move(vals);
      return Node::create(NodeKind::kData, {}, std::move(p), orig->axis_tags(), orig->materialized());
    }
    if (orig->kind() == NodeKind::kPlaceholder && variant == 0) {
      PlaceholderPayload p = orig->as<PlaceholderPayload>();
      p.name += "_renamed";
      return Node::create(NodeKind::kPlaceholder, {}, std::move(p), orig->axis_tags(), orig->materialized());
    }
    if (variant == 1 && n->rank() > 0) return adfg::tagged(n, 0, AxisTag{"mutated", std::nullopt});
    return n->with_materialized(!n->materialized());
  });
}

TEST(AdfgProperties, HashEqualityMatchesDeepEquality) {
  int equal_pairs = 0;
  int unequal_pairs = 0;
  int node_pairs = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto a = testing::random_graph(i, small_graphs());
    Graph b;
    switch (i % 4) {
      case 0: b = testing::random_graph(i, small_graphs()).graph; break;
      case 1: b = testing::random_graph(i + 100003, small_graphs()).graph; break;
      default: b = mutate_one(a.graph, i * 2654435761u); break;
    }
    // Roots of both graphs plus every cross pair of their nodes.
    const auto na = topo_order(a.graph);
    const auto nb = topo_order(b);
    for (std::size_t x = 0; x < na.size(); x += 3) {
      for (std::size_t y = 0; y < nb.size(); y += 3) {
        const bool deep = brute_equal(na[x], nb[y]);
        ASSERT_EQ(na[x]->hash() == nb[y]->hash(), deep) << "seed " << i;
        ASSERT_EQ(structurally_equal(na[x], nb[y]), deep) << "seed " << i;
        ++node_pairs;
      }
    }
    for (const auto& [name, root] : a.graph.outputs) {
      auto it = b.outputs.find(name);
      if (it == b.outputs.end()) continue;
      const bool deep = brute_equal(root, it->second);
      ASSERT_EQ(root->hash() == it->second->hash(), deep) << "seed " << i << " output " << name;
      ASSERT_EQ(structurally_equal(root, it->second), deep) << "seed " << i;
      ++(deep ? equal_pairs : unequal_pairs);
      if (i % 4 >= 2) EXPECT_FALSE(deep && graphs_equal(a.graph, b)) << "mutation not observed, seed " << i;
    }
  }
  EXPECT_GT(equal_pairs, 200);
  EXPECT_GT(unequal_pairs, 200);
  EXPECT_GT(node_pairs, 10000);
}

TEST(AdfgProperties, ShapeInferenceIsTotalAndMatchesEvaluation) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto p = testing::random_graph(seed);
    EagerEvaluator ev(p.bindings);
    for (const auto& n : topo_order(p.graph)) {
      ASSERT_EQ(static_cast<int>(n->shape().size()), n->rank());
      for (auto e : n->shape()) ASSERT_GE(e, 0) << describe(*n);
      if (n->kind() != NodeKind::kFunctionDefinition && n->kind() != NodeKind::kCallResult) {
        std::vector<Shape> in_shapes;
        for (const auto& in : n->inputs()) in_shapes.push_back(in->shape());
        EXPECT_EQ(infer_shape(n->kind(), n->payload(), in_shapes), n->shape()) << describe(*n);
      }
      if (n->kind() == NodeKind::kFunctionDefinition) continue;
      const NdArray& v = ev.evaluate(n);
      EXPECT_EQ(v.shape, n->shape()) << "seed " << seed << " " << describe(*n);
      EXPECT_EQ(v.dtype, n->dtype()) << "seed " << seed << " " << describe(*n);
    }
  }
}

struct NamedPass {
  const char* name;
  Graph (*run)(const Graph&);
};

const NamedPass kPasses[] = {
    {"dedup", [](const Graph& g) { return dedup(g); }},
    {"constant_fold", [](const Graph& g) { return constant_fold(g); }},
    {"propagate_tags", [](const Graph& g) { return propagate_tags(g); }},
    {"concatenate_calls", [](const Graph& g) { return concatenate_calls(g); }},
    {"materialize", [](const Graph& g) { return materialize(g); }},
};

TEST(GraphPassProperties, EveryPassPreservesValuesAndAcyclicity) {
  for (const auto& pass : kPasses) {
    for (std::uint64_t seed = 1000; seed < 1500; ++seed) {
      const auto p = testing::random_graph(seed);
      const Graph out = pass.run(p.graph);
      ASSERT_TRUE(is_topological(out)) << pass.name << " seed " << seed;
      ASSERT_TRUE(values_close(eager_eval(p.graph, p.bindings), eager_eval(out, p.bindings), 1e-12))
          << pass.name << " seed " << seed;
    }
  }
}

TEST(GraphPassProperties, FullChainPreservesValuesAndAcyclicity) {
  for (std::uint64_t seed = 1500; seed < 2000; ++seed) {
    const auto p = testing::random_graph(seed);
    Graph g = p.graph;
    for (const auto& pass : kPasses) {
      g = pass.run(g);
      ASSERT_TRUE(is_topological(g)) << pass.name << " seed " << seed;
    }
    ASSERT_TRUE(values_close(eager_eval(p.graph, p.bindings), eager_eval(g, p.bindings), 1e-12)) << seed;
  }
}

TEST(GraphPassProperties, MaterializeIsIdempotentAndMonotone) {
  for (std::uint64_t seed = 2000; seed < 2500; ++seed) {
    const auto p = testing::random_graph(seed);
    const Graph d = dedup(p.graph);
    const Graph m = materialize(d);
    EXPECT_TRUE(graphs_equal(materialize(m), m)) << seed;
    // Flags are only ever added: walk both graphs in lockstep.
    std::map<const Node*, const Node*> mirror;
    std::vector<std::pair<NodeRef, NodeRef>> stack;
    for (const auto& [name, out] : d.outputs) stack.emplace_back(out, m.outputs.at(name));
    while (!stack.empty()) {
      auto [x, y] = stack.back();
      stack.pop_back();
      if (!mirror.emplace(x.get(), y.get()).second) continue;
      ASSERT_EQ(x->kind(), y->kind()) << seed;
      ASSERT_EQ(x->inputs().size(), y->inputs().size()) << seed;
      if (x->materialized()) EXPECT_TRUE(y->materialized()) << seed << " " << describe(*x);
      for (std::size_t k = 0; k < x->inputs().size(); ++k) stack.emplace_back(x->inputs()[k], y->inputs()[k]);
    }
  }
}

TEST(GraphPassProperties, ConstantFoldReachesFixedPointInOneStep) {
  for (std::uint64_t seed = 2500; seed < 3000; ++seed) {
    const auto p = testing::random_graph(seed);
    const Graph once = constant_fold(p.graph);
    EXPECT_TRUE(graphs_equal(constant_fold(once), once)) << seed;
  }
}

TEST(GraphPassProperties, FullyMaterializedGraphsHaveNoRecomputation) {
  for (std::uint64_t seed = 3000; seed < 3500; ++seed) {
    const auto p = testing::random_graph(seed);
    const Graph all = rewrite_graph(p.graph, [](const NodeRef& orig, std::vector<NodeRef> inputs) {
      NodeRef n = orig->with_inputs(std::move(inputs));
      return n->is_leaf() ? n : n->with_materialized(true);
    });
    const auto r = cost_report(all);
    std::int64_t non_leaf = 0;
    for (const auto& n : topo_order(all)) non_leaf += !n->is_leaf();
    EXPECT_EQ(r.computes, non_leaf) << seed;
    EXPECT_EQ(r.recomputation_rate, 0.0) << seed;
  }
}

int call_count(const Graph& g) {
  int c = 0;
  for (const auto& n : topo_order(g)) c += n->kind() == NodeKind::kCall;
  return c;
}

TEST(GraphPassProperties, ConcatenationReducesCallsExactlyWhenItFires) {
  int fired = 0;
  for (std::uint64_t seed = 3500; seed < 4000; ++seed) {
    const auto p = testing::random_graph(seed);
    const Graph d = dedup(p.graph);
    PassLog log;
    const Graph c = concatenate_calls(d, std::nullopt, &log);
    const bool merged = log.text().find("merged") != std::string::npos;
    if (merged) {
      ++fired;
      EXPECT_LT(call_count(c), call_count(d)) << seed;
    } else {
      EXPECT_EQ(call_count(c), call_count(d)) << seed;
    }
  }
  EXPECT_GT(fired, 0);
}

}  // namespace
}  // namespace arrayflow
