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

#include <cmath>
#include <functional>
#include <map>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"
#include "arrayflow/errors.hpp"
#include "arrayflow/frontend.hpp"
#include "arrayflow/passes.hpp"
#include "worked_examples.hpp"
#include "random_graph.hpp"

namespace arrayflow {
namespace {

using adfg::elementwise;

int count_kind(const Graph& g, NodeKind kind) {
  int c = 0;
  for (const auto& n : topo_order(g)) c += n->kind() == kind;
  return c;
}

std::size_t size(const Graph& g) { return topo_order(g).size(); }

Graph without_flags(const Graph& g) {
  return rewrite_graph(g, [](const NodeRef& orig, std::vector<NodeRef> inputs) {
    return Node::create(orig->kind(), std::move(inputs), orig->payload(), orig->axis_tags(), false);
  });
}

void expect_same_values(const Graph& a, const Graph& b, const Bindings& bind) {
  const auto va = eager_eval(a, bind);
  const auto vb = eager_eval(b, bind);
  ASSERT_EQ(va.size(), vb.size());
  for (const auto& [name, arr] : va) {
    EXPECT_TRUE(allclose(arr, vb.at(name), 1e-12)) << name;
  }
}

TEST(Dedup, MergesIdenticalSubexpressions) {
  auto a = adfg::placeholder("a", {4});
  auto b = adfg::placeholder("b", {4});
  auto s1 = elementwise(OpCode::kAdd, {a, b});
  auto s2 = elementwise(OpCode::kAdd, {adfg::placeholder("a", {4}), adfg::placeholder("b", {4})});
  Graph g;
  g.outputs["r"] = elementwise(OpCode::kMul, {s1, elementwise(OpCode::kNeg, {s2})});
  PassLog log;
  Graph d = dedup(g, &log);
  EXPECT_EQ(count_kind(d, NodeKind::kIndexLambda), 3);
  std::vector<NodeRef> adds;
  for (const auto& n : topo_order(d)) {
    if (n->kind() == NodeKind::kPlaceholder) continue;
    if (n->inputs().size() == 2 && n->inputs()[0]->kind() == NodeKind::kPlaceholder) adds.push_back(n);
  }
  ASSERT_EQ(adds.size(), 1u);
  EXPECT_EQ(count_successors(d).successors_of(*adds[0]), 2);
  EXPECT_EQ(count_kind(d, NodeKind::kPlaceholder), 2);
  expect_same_values(g, d, {{"a", NdArray::linspace(0, 1, 4)}, {"b", NdArray::linspace(2, 3, 4)}});
  ASSERT_EQ(log.lines().size(), 1u);
  EXPECT_EQ(log.lines()[0].rfind("dedup: ", 0), 0u);
}

TEST(Dedup, CommutedOperandsStayDistinct) {
  auto a = adfg::placeholder("a", {4});
  auto b = adfg::placeholder("b", {4});
  Graph g;
  g.outputs["r"] = elementwise(OpCode::kSub, {elementwise(OpCode::kAdd, {a, b}), elementwise(OpCode::kAdd, {b, a})});
  EXPECT_EQ(size(dedup(g)), size(g));
}

TEST(Dedup, RandomGraphsKeepValues) {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    auto p = testing::random_graph(seed);
    Graph d = dedup(p.graph);
    EXPECT_LE(size(d), size(p.graph));
    expect_same_values(p.graph, d, p.bindings);
  }
}

TEST(ConstantFold, FluxCoefficientBecomesOneDataNode) {
  auto e = testing::constant_fold_flux();
  ASSERT_EQ(size(e.graph), 9u);
  PassLog log;
  Graph f = constant_fold(e.graph, &log);
  EXPECT_EQ(size(f), 5u);
  EXPECT_EQ(log.lines().at(0), "constant_fold: 9 -> 5 nodes, 1 subgraphs folded");
  int data = 0;
  for (const auto& n : topo_order(f)) {
    if (n->kind() != NodeKind::kData) continue;
    ++data;
    EXPECT_EQ(*n->as<DataPayload>().values, std::vector<double>{1.0});
  }
  EXPECT_EQ(data, 1);
  EXPECT_EQ(count_kind(f, NodeKind::kPlaceholder), 2);
  expect_same_values(e.graph, f, e.bindings);
  EXPECT_EQ(eager_eval(f, e.bindings).at("flux").data, std::vector<double>{4.0});
}

TEST(ConstantFold, SecondApplicationIsIdentity) {
  auto e = testing::constant_fold_flux();
  Graph once = constant_fold(e.graph);
  Graph twice = constant_fold(once);
  EXPECT_TRUE(structurally_equal(once.outputs.at("flux"), twice.outputs.at("flux")));
}

TEST(ConstantFold, NoDataLeavesMeansNoChange) {
  auto e = testing::axpy_max0();
  Graph g;
  auto x = adfg::placeholder("x", {3});
  g.outputs["r"] = elementwise(OpCode::kExp, {elementwise(OpCode::kNeg, {x})});
  EXPECT_EQ(constant_fold(g).outputs.at("r"), g.outputs.at("r"));
}

TEST(ConstantFold, IeeeResultsAreFolded) {
  Graph g;
  auto zero = adfg::data(NdArray({2}, DType::kF64, {0, 1}));
  g.outputs["r"] = elementwise(OpCode::kAdd,
                               {elementwise(OpCode::kDiv, {adfg::data(NdArray({2}, DType::kF64, {1, 0})), zero}),
                                adfg::placeholder("p", {2})});
  Graph f = constant_fold(g);
  EXPECT_EQ(size(f), 3u);
  const auto r = eager_eval(f, {{"p", NdArray({2}, DType::kF64, {0, 0})}}).at("r");
  EXPECT_TRUE(std::isinf(r.data[0]));
  EXPECT_EQ(r.data[1], 0.0);
}

TEST(ConstantFold, RandomGraphsKeepValuesAndReachFixedPoint) {
  for (std::uint64_t seed = 100; seed < 160; ++seed) {
    auto p = testing::random_graph(seed);
    Graph f = constant_fold(p.graph);
    expect_same_values(p.graph, f, p.bindings);
    Graph f2 = constant_fold(f);
    for (const auto& [name, out] : f.outputs) EXPECT_TRUE(structurally_equal(out, f2.outputs.at(name)));
  }
}

const AxisTag kVol{"element", "vol"};

TEST(PropagateTags, SingleHopThroughElementwise) {
  auto u = adfg::tagged(adfg::placeholder("u", {5, 3}), 0, kVol);
  auto v = adfg::placeholder("v", {5, 3});
  Graph g;
  g.outputs["s"] = elementwise(OpCode::kAdd, {u, v});
  PassLog log;
  Graph t = propagate_tags(g, &log);
  const auto& s = t.outputs.at("s");
  EXPECT_EQ(s->tags_on(0), AxisTags{kVol});
  EXPECT_TRUE(s->tags_on(1).empty());
  EXPECT_EQ(s->inputs()[1]->tags_on(0), AxisTags{kVol});
  EXPECT_EQ(log.lines().at(0), "propagate_tags: 2 nodes gained tags");
}

TEST(PropagateTags, EinsumFollowsSubscripts) {
  const AxisTag dof{"dof", std::nullopt};
  auto a = adfg::tagged(adfg::tagged(adfg::placeholder("a", {2, 3}), 0, kVol), 1, dof);
  auto b = adfg::placeholder("b", {3, 4});
  Graph g;
  g.outputs["c"] = adfg::einsum("ij,jk->ik", {a, b});
  Graph t = propagate_tags(g);
  const auto& c = t.outputs.at("c");
  EXPECT_EQ(c->tags_on(0), AxisTags{kVol});
  EXPECT_TRUE(c->tags_on(1).empty());
  EXPECT_EQ(c->inputs()[1]->tags_on(0), AxisTags{dof});
}

TEST(PropagateTags, ReshapeBlocksRegroupedAxes) {
  auto u = adfg::tagged(adfg::placeholder("u", {6}), 0, kVol);
  Graph g;
  g.outputs["r"] = adfg::reshape(elementwise(OpCode::kNeg, {u}), {3, 2});
  Graph t = propagate_tags(g);
  EXPECT_TRUE(t.outputs.at("r")->axis_tags().empty());
  EXPECT_EQ(t.outputs.at("r")->inputs()[0]->tags_on(0), AxisTags{kVol});
}

TEST(PropagateTags, ReshapeKeepsOneToOneAxes) {
  auto u = adfg::tagged(adfg::placeholder("u", {4, 6}), 0, kVol);
  Graph g;
  g.outputs["r"] = adfg::reshape(u, {4, 3, 2});
  Graph t = propagate_tags(g);
  EXPECT_EQ(t.outputs.at("r")->tags_on(0), AxisTags{kVol});
  EXPECT_TRUE(t.outputs.at("r")->tags_on(1).empty());
}

TEST(PropagateTags, ConflictNamesBothSources) {
  auto u = adfg::tagged(adfg::placeholder("u", {4}), 0, kVol);
  auto v = adfg::tagged(adfg::placeholder("v", {4}), 0, {"element", "face"});
  Graph g;
  g.outputs["s"] = elementwise(OpCode::kAdd, {u, v});
  try {
    propagate_tags(g);
    FAIL() << "expected TagConflict";
  } catch (const TagConflict& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'u'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'v'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("axis 0"), std::string::npos) << msg;
  }
}

/// Closure oracle: copies tags across every connected axis pair until nothing
/// changes, over a structural mirror of the graph.
void walk_pair(const NodeRef& a, const NodeRef& b, std::map<const Node*, const Node*>& mirror) {
  if (mirror.count(a.get())) return;
  mirror[a.get()] = b.get();
  ASSERT_EQ(a->inputs().size(), b->inputs().size());
  for (std::size_t k = 0; k < a->inputs().size(); ++k) walk_pair(a->inputs()[k], b->inputs()[k], mirror);
}

std::map<std::pair<const Node*, int>, std::set<AxisTag>> tag_closure(const Graph& g) {
  std::map<std::pair<const Node*, int>, std::set<AxisTag>> tags;
  const auto order = topo_order(g);
  for (const auto& n : order) {
    for (int a = 0; a < n->rank(); ++a) {
      const auto& t = n->tags_on(a);
      tags[{n.get(), a}].insert(t.begin(), t.end());
    }
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& n : order) {
      for (const auto& [x, y] : axis_connections(*n).links) {
        const Node* nx = x.operand < 0 ? n.get() : n->inputs()[x.operand].get();
        const Node* ny = y.operand < 0 ? n.get() : n->inputs()[y.operand].get();
        auto& tx = tags[{nx, x.axis}];
        auto& ty = tags[{ny, y.axis}];
        for (const auto& t : std::set<AxisTag>(tx)) changed |= ty.insert(t).second;
        for (const auto& t : std::set<AxisTag>(ty)) changed |= tx.insert(t).second;
      }
    }
  }
  return tags;
}

TEST(PropagateTags, MatchesClosureOracleOnRandomGraphs) {
  const std::vector<AxisTag> pool{{"element", "vol"}, {"dof", std::nullopt}, {"face", "left"}};
  int compared = 0;
  for (std::uint64_t seed = 200; seed < 260; ++seed) {
    auto p = testing::random_graph(seed);
    std::mt19937_64 rng(seed);
    Graph seeded = rewrite_graph(p.graph, [&](const NodeRef& orig, std::vector<NodeRef> inputs) {
      NodeRef n = orig->with_inputs(std::move(inputs));
      if (n->kind() == NodeKind::kPlaceholder && n->rank() > 0 && rng() % 3 == 0) {
        n = adfg::tagged(n, static_cast<int>(rng() % n->rank()), pool[rng() % pool.size()]);
      }
      return n;
    });
    const auto oracle = tag_closure(seeded);
    bool conflict = false;
    for (const auto& [slot, ts] : oracle) {
      std::map<std::string, std::optional<std::string>> by_key;
      for (const auto& t : ts) {
        auto [it, inserted] = by_key.emplace(t.key, t.value);
        conflict |= !inserted && it->second != t.value;
      }
    }
    if (conflict) {
      EXPECT_THROW(propagate_tags(seeded), TagConflict) << seed;
      continue;
    }
    Graph t = propagate_tags(seeded);
    std::map<const Node*, const Node*> mirror;
    for (const auto& [name, out] : seeded.outputs) walk_pair(out, t.outputs.at(name), mirror);
    for (const auto& [orig, prop] : mirror) {
      for (int a = 0; a < orig->rank(); ++a) {
        const auto& got = prop->tags_on(a);
        const auto& want = oracle.at({orig, a});
        EXPECT_EQ(std::set<AxisTag>(got.begin(), got.end()), want) << seed << " " << describe(*orig);
      }
    }
    ++compared;
    expect_same_values(seeded, t, p.bindings);
  }
  EXPECT_GT(compared, 40);
}

TEST(Materialize, SuccessfulChoiceOfAxpy) {
  auto e = testing::materialization_success();
  Graph plain = without_flags(e.graph);
  EXPECT_EQ(cost_report(plain).summary(), "R:6 W:2 C:6");
  Graph m = materialize(plain);
  const auto& axpy = m.outputs.at("out1")->inputs()[1];
  EXPECT_TRUE(axpy->materialized());
  EXPECT_FALSE(axpy->inputs()[0]->materialized());
  EXPECT_EQ(cost_report(m).summary(), "R:5 W:3 C:4");
  expect_same_values(e.graph, m, e.bindings);
}

TEST(Materialize, LessSuccessfulChoice) {
  auto e = testing::materialization_fail();
  Graph plain = without_flags(e.graph);
  EXPECT_EQ(cost_report(plain).summary(), "R:4 W:2 C:6");
  Graph m = materialize(plain);
  EXPECT_TRUE(m.outputs.at("out1")->inputs()[1]->materialized());
  EXPECT_EQ(cost_report(m).summary(), "R:4 W:3 C:4");
}

TEST(Materialize, ChainMaterializesOnlyOutput) {
  auto a = adfg::placeholder("a", {8});
  Graph g;
  g.outputs["out"] = elementwise(OpCode::kExp, {elementwise(OpCode::kAbs, {elementwise(OpCode::kNeg, {a})})});
  Graph m = materialize(g);
  int flagged = 0;
  for (const auto& n : topo_order(m)) flagged += n->materialized();
  EXPECT_EQ(flagged, 1);
  EXPECT_TRUE(m.outputs.at("out")->materialized());
}

TEST(Materialize, ReductionsAreForced) {
  auto a = adfg::placeholder("a", {3, 4});
  Graph g;
  auto reduced = adfg::einsum("ij->i", {a});
  auto transposed = adfg::einsum("ij->ji", {a});
  g.outputs["r"] = elementwise(OpCode::kAdd, {reduced, adfg::einsum("ji->i", {transposed})});
  Graph m = materialize(g);
  for (const auto& n : topo_order(m)) {
    if (n->kind() != NodeKind::kEinsum) continue;
    const bool reduces = n->as<EinsumPayload>().spec != "ij->ji";
    EXPECT_EQ(n->materialized(), reduces) << n->as<EinsumPayload>().spec;
  }
}

TEST(Materialize, IdempotentAndMonotone) {
  for (std::uint64_t seed = 300; seed < 360; ++seed) {
    auto p = testing::random_graph(seed);
    Graph m = materialize(dedup(p.graph));
    Graph m2 = materialize(m);
    for (const auto& [name, out] : m.outputs) EXPECT_TRUE(structurally_equal(out, m2.outputs.at(name))) << seed;
    std::map<const Node*, const Node*> mirror;
    Graph d = dedup(p.graph);
    for (const auto& [name, out] : d.outputs) walk_pair(out, m.outputs.at(name), mirror);
    for (const auto& [before, after] : mirror) {
      if (before->materialized()) EXPECT_TRUE(after->materialized()) << seed;
    }
  }
}

TEST(CostReport, FullyMaterializedHasNoRecomputation) {
  for (std::uint64_t seed = 400; seed < 430; ++seed) {
    auto p = testing::random_graph(seed);
    Graph all = rewrite_graph(p.graph, [](const NodeRef& orig, std::vector<NodeRef> inputs) {
      NodeRef n = orig->with_inputs(std::move(inputs));
      return n->is_leaf() ? n : n->with_materialized(true);
    });
    const auto r = cost_report(all);
    EXPECT_EQ(r.computes, r.ideal_computes);
    EXPECT_EQ(r.materialized, r.ideal_computes);
    EXPECT_EQ(r.recomputation_rate, 0.0);
    EXPECT_EQ(r.materialization_rate, 1.0);
  }
}

TEST(CostReport, RatesFollowDefinitions) {
  auto e = testing::materialization_success();
  const auto r = cost_report(without_flags(e.graph));
  EXPECT_EQ(r.ideal_computes, 4);
  EXPECT_DOUBLE_EQ(r.recomputation_rate, 0.5);
  EXPECT_DOUBLE_EQ(r.materialization_rate, 0.5);
}

TEST(Concatenate, TwoIndependentCallsMerge) {
  const std::int64_t n = 4;
  auto e = testing::two_calls(n);
  ASSERT_EQ(count_kind(e.graph, NodeKind::kCall), 2);
  PassLog log;
  Graph c = concatenate_calls(e.graph, std::nullopt, &log);
  EXPECT_EQ(count_kind(c, NodeKind::kCall), 1);
  EXPECT_EQ(log.lines().at(0), "concatenate_calls: merged 2 calls to 'f' along parameter axes [0, 0]");
  int concats = 0;
  for (const auto& node : topo_order(c)) {
    if (node->kind() == NodeKind::kConcatenate) {
      ++concats;
      EXPECT_EQ(node->shape(), (Shape{2 * n}));
    }
    if (node->kind() == NodeKind::kIndexing) {
      const auto& sel = std::get<Slice>(node->as<IndexingPayload>().selectors.at(0));
      EXPECT_EQ(sel.stop - sel.start, n);
      EXPECT_TRUE(sel.start == 0 || sel.start == n);
    }
  }
  EXPECT_EQ(concats, 2);
  expect_same_values(e.graph, c, e.bindings);
}

ArrayMap squares(ArrayContext&, const std::vector<Array>& args) {
  return {{"res0", args[0] * args[0] + args[1] * args[1]}};
}

TEST(Concatenate, DependentCallsStaySeparate) {
  ArrayContext ctx;
  auto f = ctx.outline(squares, "f");
  auto a = ctx.placeholder("a", {3});
  auto b = ctx.placeholder("b", {3});
  auto d = ctx.placeholder("d", {3});
  auto inner = f({a, b}).at("res0");
  Graph g;
  g.outputs["r"] = f({inner, d}).at("res0").node();
  PassLog log;
  Graph c = concatenate_calls(g, std::nullopt, &log);
  EXPECT_EQ(count_kind(c, NodeKind::kCall), 2);
  EXPECT_EQ(c.outputs.at("r"), g.outputs.at("r"));
}

TEST(Concatenate, ThreeCallsBecomeOne) {
  ArrayContext ctx;
  auto f = ctx.outline(squares, "f");
  std::vector<Array> in;
  Bindings bind;
  for (int k = 0; k < 6; ++k) {
    const std::string name = "p" + std::to_string(k);
    in.push_back(ctx.placeholder(name, {5}));
    bind[name] = NdArray::linspace(k, k + 1, 5);
  }
  Graph g;
  g.outputs["r"] = (f({in[0], in[1]}).at("res0") + f({in[2], in[3]}).at("res0") * f({in[4], in[5]}).at("res0")).node();
  Graph c = concatenate_calls(g);
  EXPECT_EQ(count_kind(c, NodeKind::kCall), 1);
  int slices = 0;
  for (const auto& node : topo_order(c)) {
    if (node->kind() == NodeKind::kConcatenate) EXPECT_EQ(node->shape(), (Shape{15}));
    slices += node->kind() == NodeKind::kIndexing;
  }
  EXPECT_EQ(slices, 3);
  expect_same_values(g, c, bind);
}

TEST(Concatenate, IneligibleNamesAreLeftAlone) {
  auto e = testing::two_calls(4);
  Graph c = concatenate_calls(e.graph, std::set<std::string>{"g"});
  EXPECT_EQ(count_kind(c, NodeKind::kCall), 2);
}

TEST(Concatenate, ScalarParametersHaveNoAxis) {
  ArrayContext ctx;
  auto f = ctx.outline(squares, "f");
  Graph g;
  g.outputs["r"] = (f({ctx.placeholder("a", {}), ctx.placeholder("b", {})}).at("res0") +
                    f({ctx.placeholder("c", {}), ctx.placeholder("d", {})}).at("res0"))
                       .node();
  PassLog log;
  Graph c = concatenate_calls(g, std::nullopt, &log);
  EXPECT_EQ(count_kind(c, NodeKind::kCall), 2);
  ASSERT_FALSE(log.lines().empty());
  EXPECT_NE(log.lines()[0].find("no-op"), std::string::npos);
}

TEST(Concatenate, CallCountNeverGrows) {
  for (std::uint64_t seed = 500; seed < 560; ++seed) {
    auto p = testing::random_graph(seed);
    Graph c = concatenate_calls(p.graph);
    EXPECT_LE(count_kind(c, NodeKind::kCall), count_kind(p.graph, NodeKind::kCall));
    expect_same_values(p.graph, c, p.bindings);
  }
}

TEST(Pipeline, LogHasOneLinePerPass) {
  auto e = testing::two_calls(4);
  PassLog log;
  run_graph_passes(e.graph, PassConfig{}, &log);
  ASSERT_EQ(log.lines().size(), 5u);
  EXPECT_EQ(log.lines()[0].rfind("dedup:", 0), 0u);
  EXPECT_EQ(log.lines()[1].rfind("constant_fold:", 0), 0u);
  EXPECT_EQ(log.lines()[2].rfind("propagate_tags:", 0), 0u);
  EXPECT_EQ(log.lines()[3].rfind("concatenate_calls:", 0), 0u);
  EXPECT_EQ(log.lines()[4].rfind("materialize:", 0), 0u);
}

}  // namespace
}  // namespace arrayflow
