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
#include <random>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"
#include "arrayflow/errors.hpp"
#include "worked_examples.hpp"
#include "oracles.hpp"
#include "random_graph.hpp"

namespace arrayflow {
namespace {

using adfg::elementwise;

NodeRef vec(const std::string& name, std::int64_t n) { return adfg::placeholder(name, {n}); }

std::size_t index_in(const std::vector<NodeRef>& order, const NodeRef& n) {
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), n) - order.begin());
}

TEST(NodeShape, EinsumMatmul) {
  auto a = adfg::placeholder("a", {2, 3});
  auto b = adfg::placeholder("b", {3, 4});
  EXPECT_EQ(adfg::einsum("ij,jk->ik", {a, b})->shape(), (Shape{2, 4}));
}

TEST(NodeShape, ConcatenateAlongAxis0) {
  EXPECT_EQ(adfg::concatenate({vec("a", 5), vec("b", 5)}, 0)->shape(), (Shape{10}));
}

TEST(NodeShape, ReshapeSixToThreeByTwo) {
  EXPECT_EQ(adfg::reshape(vec("a", 6), {3, 2})->shape(), (Shape{3, 2}));
}

TEST(NodeShape, BroadcastingElementwise) {
  auto a = adfg::placeholder("a", {3, 1});
  auto b = adfg::placeholder("b", {4});
  EXPECT_EQ(elementwise(OpCode::kAdd, {a, b})->shape(), (Shape{3, 4}));
}

TEST(NodeShape, StackAddsAxis) {
  EXPECT_EQ(adfg::stack({vec("a", 5), vec("b", 5)}, 1)->shape(), (Shape{5, 2}));
}

TEST(NodeShape, IndexingSelectors) {
  auto a = adfg::placeholder("a", {6, 4});
  auto idx = adfg::data(NdArray({3}, DType::kI64, {2, 0, 1}));
  auto n = adfg::indexing(a, {Slice{1, 6, 2}, ArraySelector{1}}, {idx});
  EXPECT_EQ(n->shape(), (Shape{3, 3}));
  EXPECT_EQ(adfg::indexing(a, {std::int64_t{2}})->shape(), (Shape{4}));
}

TEST(NodeErrors, IncompatibleExtents) {
  EXPECT_THROW(elementwise(OpCode::kAdd, {vec("a", 3), vec("b", 4)}), ShapeMismatch);
  EXPECT_THROW(adfg::reshape(vec("a", 6), {4, 2}), ShapeMismatch);
  EXPECT_THROW(adfg::concatenate({adfg::placeholder("a", {2, 3}), adfg::placeholder("b", {3, 3})}, 1),
               ShapeMismatch);
  EXPECT_THROW(adfg::einsum("ij,jk->ik", {adfg::placeholder("a", {2, 3}), adfg::placeholder("b", {4, 4})}),
               ShapeMismatch);
}

TEST(NodeErrors, MalformedEinsum) {
  auto a = adfg::placeholder("a", {2, 3});
  EXPECT_THROW(adfg::einsum("ij", {a}), BadSubscript);
  EXPECT_THROW(adfg::einsum("ij->ii", {a}), BadSubscript);
  EXPECT_THROW(adfg::einsum("ij->iz", {a}), BadSubscript);
  EXPECT_THROW(adfg::einsum("ijk->i", {a}), BadSubscript);
}

TEST(NodeErrors, DTypeAndStructure) {
  auto f = vec("f", 3);
  auto i = adfg::placeholder("i", {3}, DType::kI64);
  EXPECT_THROW(adfg::concatenate({f, i}, 0), DTypeMismatch);
  EXPECT_THROW(adfg::indexing(f, {ArraySelector{1}}, {f}), DTypeMismatch);
  EXPECT_THROW(adfg::placeholder("", {1}), InvalidNode);
  EXPECT_THROW(adfg::tagged(adfg::tagged(f, 0, {"k", "a"}), 0, {"k", "b"}), InvalidNode);
}

TEST(NodeErrors, CallArgumentsChecked) {
  auto x = adfg::placeholder("x", {3});
  auto f = adfg::function_definition("f", {{"x", x}}, {{"r", elementwise(OpCode::kNeg, {x})}});
  EXPECT_THROW(adfg::call(f, {vec("a", 4)}), ShapeMismatch);
  EXPECT_THROW(adfg::call(f, {vec("a", 3), vec("b", 3)}), InvalidNode);
  EXPECT_THROW(adfg::call_result(adfg::call(f, {vec("a", 3)}), "missing"), InvalidNode);
}

TEST(StructuralHash, IndependentlyBuiltNodesMatch) {
  auto a = adfg::data("a", NdArray::linspace(0, 1, 4));
  auto b = adfg::data("b", NdArray::linspace(1, 2, 4));
  auto s1 = elementwise(OpCode::kAdd, {a, b});
  auto s2 = elementwise(OpCode::kAdd, {adfg::data("a", NdArray::linspace(0, 1, 4)),
                                       adfg::data("b", NdArray::linspace(1, 2, 4))});
  EXPECT_EQ(structural_hash(*s1), structural_hash(*s2));
  EXPECT_TRUE(structurally_equal(s1, s2));
}

TEST(StructuralHash, OperandOrderMatters) {
  auto a = vec("a", 4);
  auto b = vec("b", 4);
  EXPECT_FALSE(structurally_equal(elementwise(OpCode::kAdd, {a, b}), elementwise(OpCode::kAdd, {b, a})));
}

TEST(StructuralHash, TagsParticipateInIdentity) {
  auto sum = elementwise(OpCode::kAdd, {vec("a", 4), vec("b", 4)});
  auto tagged = adfg::tagged(sum, 0, {"element", "vol"});
  EXPECT_NE(structural_hash(*sum), structural_hash(*tagged));
  EXPECT_FALSE(structurally_equal(sum, tagged));
}

TEST(StructuralHash, MaterializeFlagParticipatesInIdentity) {
  auto sum = elementwise(OpCode::kAdd, {vec("a", 4), vec("b", 4)});
  EXPECT_FALSE(structurally_equal(sum, sum->with_materialized(true)));
  EXPECT_TRUE(structurally_equal(sum->with_materialized(true), sum->with_materialized(true)));
}

TEST(StructuralHash, AgreesWithBruteForceOracle) {
  testing::RandomGraphOptions opt;
  opt.max_nodes = 30;
  opt.materialize_probability = 0;
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto p = testing::random_graph(seed, opt);
    auto nodes = topo_order(p.graph);
    // Independent rebuild produces fresh but structurally identical nodes.
    auto copy = rewrite_graph(p.graph, [](const NodeRef& n, std::vector<NodeRef> in) {
      return Node::create(n->kind(), std::move(in), n->payload(), n->axis_tags(), n->materialized());
    });
    auto copies = topo_order(copy);
    ASSERT_EQ(nodes.size(), copies.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      ASSERT_TRUE(testing::brute_equal(nodes[k], copies[k]));
      EXPECT_TRUE(structurally_equal(nodes[k], copies[k]));
      if (nodes[k]->rank() > 0) {
        auto tagged = adfg::tagged(copies[k], 0, {"probe", std::nullopt});
        EXPECT_FALSE(structurally_equal(nodes[k], tagged));
      }
    }
    std::mt19937_64 rng(seed);
    for (int t = 0; t < 60; ++t) {
      const auto& a = nodes[rng() % nodes.size()];
      const auto& b = copies[rng() % copies.size()];
      const bool expected = testing::brute_equal(a, b);
      EXPECT_EQ(structurally_equal(a, b), expected) << describe(*a) << " vs " << describe(*b);
      if (expected) EXPECT_EQ(a->hash(), b->hash());
      ++compared;
    }
  }
  EXPECT_GT(compared, 0);
}

TEST(TopoOrder, AxpyGraphRespectsDependencies) {
  auto e = testing::axpy_max0();
  auto order = topo_order(e.graph);
  EXPECT_EQ(order.size(), 7u);
  for (const auto& n : order) {
    for (const auto& in : n->inputs()) EXPECT_LT(index_in(order, in), index_in(order, n));
  }
  EXPECT_EQ(order.back(), e.graph.outputs.at("w"));
}

TEST(TopoOrder, SingleNode) {
  auto d = adfg::data(NdArray::linspace(0, 1, 3));
  Graph g;
  g.outputs["d"] = d;
  auto order = topo_order(g);
  ASSERT_EQ(order.size(), 1u);
  EXPECT_EQ(order[0], d);
}

TEST(TopoOrder, Diamond) {
  auto a = vec("a", 2);
  auto b = elementwise(OpCode::kNeg, {a});
  auto c = elementwise(OpCode::kAbs, {a});
  auto d = elementwise(OpCode::kAdd, {b, c});
  Graph g;
  g.outputs["d"] = d;
  auto order = topo_order(g);
  EXPECT_EQ(order.front(), a);
  EXPECT_EQ(order.back(), d);
}

TEST(TopoOrder, DeterministicAcrossRebuilds) {
  auto p1 = testing::random_graph(5);
  auto p2 = testing::random_graph(5);
  auto o1 = topo_order(p1.graph);
  auto o2 = topo_order(p2.graph);
  ASSERT_EQ(o1.size(), o2.size());
  for (std::size_t k = 0; k < o1.size(); ++k) EXPECT_EQ(o1[k]->hash(), o2[k]->hash());
}

TEST(Successors, SharedAxpyHasTwoConsumers) {
  auto e = testing::materialization_success();
  auto counts = count_successors(e.graph);
  const auto& out1 = e.graph.outputs.at("out1");
  const auto& axpy = out1->inputs()[1];
  EXPECT_EQ(counts.successors_of(*axpy), 2);
  EXPECT_EQ(counts.successors_of(*out1), 0);
}

TEST(Successors, DoubleEdgeCountsOnceAsSuccessor) {
  auto a = vec("a", 3);
  Graph g;
  g.outputs["sq"] = elementwise(OpCode::kMul, {a, a});
  auto counts = count_successors(g);
  EXPECT_EQ(counts.successors_of(*a), 1);
  EXPECT_EQ(counts.uses_of(*a), 2);
}

TEST(FunctionBody, ExposesNamedResults) {
  auto e = testing::two_calls();
  const auto& call = e.graph.outputs.at("total")->inputs()[0]->inputs()[0];
  ASSERT_EQ(call->kind(), NodeKind::kCall);
  auto body = function_body(*call->as<CallPayload>().function);
  ASSERT_EQ(body.outputs.count("res0"), 1u);
  EXPECT_EQ(topo_order(body).size(), 5u);
}

TEST(Kinds, NamesRoundTrip) {
  for (int k = 0; k <= static_cast<int>(NodeKind::kSendWrapper); ++k) {
    const auto kind = static_cast<NodeKind>(k);
    EXPECT_EQ(parse_kind(kind_name(kind)), kind);
  }
  EXPECT_THROW(parse_kind("Bogus"), InvalidNode);
}

}  // namespace
}  // namespace arrayflow
