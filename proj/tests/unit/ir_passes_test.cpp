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

#include "arrayflow/adfg.hpp"
#include "arrayflow/backend.hpp"
#include "arrayflow/ir.hpp"
#include "arrayflow/ir_passes.hpp"
#include "arrayflow/passes.hpp"
#include "worked_examples.hpp"
#include "random_graph.hpp"

namespace arrayflow {
namespace {

using adfg::elementwise;

const LoopNest& nest_at(const IrProgram& p, std::size_t k) { return std::get<LoopNest>(p.steps.at(k)); }

IrRef at(const std::string& array, IrRef index) { return ir::access(array, {std::move(index)}, DType::kF64); }
IrRef i0() { return ir::var("i0"); }
IrRef shifted_back() {
  return ir::apply(OpCode::kMax, {ir::apply(OpCode::kSub, {i0(), ir::index_constant(1)}, DType::kI64),
                                  ir::index_constant(0)},
                   DType::kI64);
}

/// t[i0] = x[i0] in nest 0, out_r[i0] = <read of t> in nest 1.
IrProgram producer_consumer(IrRef consumer_index) {
  IrProgram p;
  p.arrays = {{"x", {6}, DType::kF64, Storage::kInput, nullptr},
              {"t", {6}, DType::kF64, Storage::kTemporary, nullptr},
              {"out_r", {6}, DType::kF64, Storage::kOutput, nullptr}};
  LoopNest a;
  a.id = 0;
  a.loops = {{"i0", 6, {}, false}};
  a.body = {{"t", false, {i0()}, ir::apply(OpCode::kMul, {at("x", i0()), ir::constant(3, DType::kF64)}, DType::kF64)}};
  LoopNest b;
  b.id = 1;
  b.loops = {{"i0", 6, {}, false}};
  b.body = {{"out_r", false, {i0()}, at("t", std::move(consumer_index))}};
  p.steps = {a, b};
  p.outputs["r"] = "out_r";
  return p;
}

const Bindings kX{{"x", NdArray::linspace(1, 6, 6)}};

TEST(Fusion, TemporaryAndConsumerFuse) {
  auto e = testing::fused_tmp();
  IrProgram p = lower(e.graph);
  PassLog log;
  IrProgram f = fuse_loops(p, &log);
  ASSERT_EQ(f.nest_count(), 1u);
  EXPECT_EQ(nest_at(f, 0).body.size(), 2u);
  EXPECT_EQ(nest_at(f, 0).body[0].target, "_mirge_t3");
  EXPECT_EQ(log.lines(), std::vector<std::string>{"fused nests [0, 1] -> nest 0"});
  EXPECT_TRUE(validate(f).empty());
  EXPECT_TRUE(bitwise_equal(run_ir(p, e.bindings).outputs.at("z"), run_ir(f, e.bindings).outputs.at("z")));
}

TEST(Fusion, DifferentExtentsDoNotFuse) {
  Graph g;
  g.outputs["a"] = elementwise(OpCode::kNeg, {adfg::placeholder("u", {10})});
  g.outputs["b"] = elementwise(OpCode::kNeg, {adfg::placeholder("v", {12})});
  IrProgram p = lower(materialize(g));
  PassLog log;
  EXPECT_EQ(fuse_loops(p, &log).nest_count(), 2u);
  EXPECT_TRUE(log.lines().empty());
}

TEST(Fusion, DifferentTagKeysDoNotFuse) {
  Graph g;
  auto u = adfg::tagged(adfg::placeholder("u", {4}), 0, {"element", "vol"});
  g.outputs["a"] = elementwise(OpCode::kNeg, {u});
  g.outputs["b"] = elementwise(OpCode::kNeg, {adfg::placeholder("v", {4})});
  IrProgram p = lower(run_graph_passes(g, PassConfig{}));
  EXPECT_EQ(fuse_loops(p).nest_count(), 2u);
}

TEST(Fusion, IndependentSameShapeNestsFuse) {
  Graph g;
  g.outputs["a"] = elementwise(OpCode::kNeg, {adfg::placeholder("u", {4})});
  g.outputs["b"] = elementwise(OpCode::kExp, {adfg::placeholder("v", {4})});
  EXPECT_EQ(fuse_loops(lower(materialize(g))).nest_count(), 1u);
}

TEST(Fusion, ShiftedReadBlocksFusion) {
  IrProgram p = producer_consumer(shifted_back());
  ASSERT_TRUE(validate(p).empty());
  EXPECT_EQ(fuse_loops(p).nest_count(), 2u);
}

TEST(Fusion, ReductionConsumerStaysSeparate) {
  auto x = adfg::placeholder("x", {5});
  auto sq = elementwise(OpCode::kMul, {x, x})->with_materialized(true);
  Graph g;
  g.outputs["s"] = elementwise(OpCode::kDiv, {sq, adfg::einsum("i->", {sq})});
  IrProgram p = lower(materialize(g));
  ASSERT_EQ(p.nest_count(), 3u);
  IrProgram f = fuse_loops(p);
  EXPECT_EQ(f.nest_count(), 3u);
  const Bindings b{{"x", NdArray::linspace(1, 2, 5)}};
  EXPECT_TRUE(bitwise_equal(run_ir(p, b).outputs.at("s"), run_ir(f, b).outputs.at("s")));
}

TEST(Contraction, FusedTemporaryBecomesScalar) {
  auto e = testing::fused_tmp();
  IrProgram f = fuse_loops(lower(e.graph));
  PassLog log;
  IrProgram c = contract_arrays(f, &log);
  EXPECT_EQ(c.arrays.size() + 1, f.arrays.size());
  EXPECT_EQ(c.find_array("_mirge_t3"), nullptr);
  EXPECT_EQ(log.lines(), std::vector<std::string>{"contracted _mirge_t3"});
  const auto& nest = nest_at(c, 0);
  ASSERT_EQ(nest.scalars.size(), 1u);
  EXPECT_EQ(nest.scalars[0].first, "_mirge_t3");
  EXPECT_TRUE(nest.body[0].scalar_target);
  EXPECT_TRUE(validate(c).empty());
  EXPECT_TRUE(bitwise_equal(run_ir(f, e.bindings).outputs.at("z"), run_ir(c, e.bindings).outputs.at("z")));
}

TEST(Contraction, UnfusedTemporaryIsKept) {
  auto e = testing::fused_tmp();
  IrProgram p = lower(e.graph);
  EXPECT_EQ(contract_arrays(p).temporary_count(), 1u);
}

TEST(Contraction, TemporaryReadBySecondNestIsKept) {
  auto x = adfg::placeholder("x", {5});
  auto tmp = elementwise(OpCode::kAdd, {x, x})->with_materialized(true);
  Graph g;
  g.outputs["z"] = elementwise(OpCode::kMul, {adfg::scalar(2.0), tmp});
  g.outputs["s"] = adfg::einsum("i->", {tmp});
  IrProgram f = fuse_loops(lower(materialize(g)));
  IrProgram c = contract_arrays(f);
  EXPECT_EQ(c.temporary_count(), f.temporary_count());
  EXPECT_GE(c.temporary_count(), 1u);
}

TEST(Contraction, ShiftedReadInSameNestIsKept) {
  IrProgram p = producer_consumer(shifted_back());
  auto& first = std::get<LoopNest>(p.steps[0]);
  first.body.push_back(std::get<LoopNest>(p.steps[1]).body[0]);
  p.steps.pop_back();
  ASSERT_TRUE(validate(p).empty());
  EXPECT_EQ(contract_arrays(p).temporary_count(), 1u);
}

TEST(Contraction, ReadBeforeWriteInNestIsKept) {
  IrProgram p = producer_consumer(i0());
  auto& first = std::get<LoopNest>(p.steps[0]);
  first.body.insert(first.body.begin(), std::get<LoopNest>(p.steps[1]).body[0]);
  p.steps.pop_back();
  EXPECT_EQ(contract_arrays(p).temporary_count(), 1u);
}

TEST(Contraction, OutputsAreNeverContracted) {
  auto e = testing::materialization_success();
  IrProgram p = fuse_loops(lower(materialize(e.graph)));
  IrProgram c = contract_arrays(p);
  EXPECT_NE(c.find_array("out_out1"), nullptr);
  EXPECT_NE(c.find_array("out_out2"), nullptr);
}

std::vector<bool> parallel_flags(const LoopNest& n) {
  std::vector<bool> f;
  for (const auto& l : n.loops) f.push_back(l.parallel);
  return f;
}

TEST(Parallel, AxpyLoopIsParallel) {
  auto e = testing::axpy_max0();
  PassLog log;
  IrProgram p = tag_parallel(lower(materialize(e.graph)), &log);
  EXPECT_EQ(parallel_flags(nest_at(p, 0)), std::vector<bool>{true});
  EXPECT_EQ(log.lines(), std::vector<std::string>{"parallel i0@nest 0"});
}

TEST(Parallel, EinsumOuterLoopsParallel) {
  Graph g;
  g.outputs["c"] = adfg::einsum("ij,jk->ik", {adfg::placeholder("a", {2, 3}), adfg::placeholder("b", {3, 4})});
  IrProgram p = tag_parallel(lower(materialize(g)));
  EXPECT_EQ(parallel_flags(nest_at(p, 0)), (std::vector<bool>{true, true}));
  EXPECT_EQ(nest_at(p, 0).body[0].value->kind, IrExpr::Kind::kReduce);
}

TEST(Parallel, RecurrenceIsSequential) {
  IrProgram p;
  p.arrays = {{"x", {6}, DType::kF64, Storage::kInput, nullptr},
              {"out_t", {6}, DType::kF64, Storage::kOutput, nullptr}};
  LoopNest n;
  n.id = 0;
  n.loops = {{"i0", 6, {}, false}};
  n.body = {{"out_t", false, {i0()},
             ir::apply(OpCode::kAdd, {at("out_t", shifted_back()), at("x", i0())}, DType::kF64)}};
  p.steps = {n};
  p.outputs["t"] = "out_t";
  PassLog log;
  EXPECT_EQ(parallel_flags(nest_at(tag_parallel(p, &log), 0)), std::vector<bool>{false});
  EXPECT_TRUE(log.lines().empty());
}

TEST(Parallel, ScalarNestHasNoLoops) {
  Graph g;
  g.outputs["s"] = adfg::einsum("i->", {adfg::placeholder("a", {7})});
  IrProgram p = tag_parallel(lower(materialize(g)));
  EXPECT_TRUE(nest_at(p, 0).loops.empty());
}

TEST(IrPasses, PreserveResultsBitwiseAndAreIdempotent) {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    auto rp = testing::random_graph(seed);
    const IrProgram p = lower(run_graph_passes(rp.graph, PassConfig{}));
    const IrProgram f = fuse_loops(p);
    const IrProgram c = contract_arrays(f);
    const IrProgram t = tag_parallel(c);
    EXPECT_LE(f.nest_count(), p.nest_count());
    EXPECT_LE(c.arrays.size(), f.arrays.size());
    EXPECT_EQ(dump(fuse_loops(f)), dump(f)) << seed;
    EXPECT_EQ(dump(contract_arrays(c)), dump(c)) << seed;
    EXPECT_TRUE(validate(t).empty()) << seed;
    const auto before = run_ir(p, rp.bindings).outputs;
    const auto after = run_ir(t, rp.bindings).outputs;
    for (const auto& [name, arr] : before) EXPECT_TRUE(bitwise_equal(arr, after.at(name))) << seed << " " << name;
  }
}

TEST(IrPasses, ConfigDisablesPasses) {
  auto e = testing::fused_tmp();
  const IrProgram p = lower(e.graph);
  IrPassConfig none{false, false, false};
  EXPECT_EQ(dump(run_ir_passes(p, none)), dump(p));
  IrPassConfig fuse_only{true, false, false};
  const IrProgram f = run_ir_passes(p, fuse_only);
  EXPECT_EQ(f.nest_count(), 1u);
  EXPECT_EQ(f.temporary_count(), 1u);
}

}  // namespace
}  // namespace arrayflow
