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

// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/dist.hpp"
#include "arrayflow/errors.hpp"
#include "arrayflow/frontend.hpp"
#include "arrayflow/pipeline.hpp"
#include "cli/cli.hpp"
#include "worked_examples.hpp"
#include "random_graph.hpp"

namespace arrayflow {
namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  /// Records a failed expectation; the first failure becomes the detail.
  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string graph_path(const std::string& name) { return std::string(ARRAYFLOW_GRAPHS_DIR) + "/" + name; }

int count_kind(const Graph& g, NodeKind kind) {
  int c = 0;
  for (const auto& n : topo_order(g)) c += n->kind() == kind;
  return c;
}

bool all_bitwise(const std::map<std::string, NdArray>& a, const std::map<std::string, NdArray>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, arr] : a) {
    auto it = b.find(name);
    if (it == b.end() || !bitwise_equal(arr, it->second)) return false;
  }
  return true;
}

bool all_close(const std::map<std::string, NdArray>& a, const std::map<std::string, NdArray>& b, double tol) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, arr] : a) {
    auto it = b.find(name);
    if (it == b.end() || !allclose(arr, it->second, tol)) return false;
  }
  return true;
}

bool graphs_equal(const Graph& a, const Graph& b) {
  if (a.outputs.size() != b.outputs.size()) return false;
  for (const auto& [name, node] : a.outputs) {
    auto it = b.outputs.find(name);
    if (it == b.outputs.end() || !structurally_equal(node, it->second)) return false;
  }
  return true;
}

Outcome cost_accounting() {
  Outcome o;
  struct Case {
    const char* file;
    const char* before;
    const char* after;
  };
  for (const Case& c : {Case{"materialization_success.json", "R:6 W:2 C:6", "R:5 W:3 C:4"},
                        Case{"materialization_fail.json", "R:4 W:2 C:6", "R:4 W:3 C:4"}}) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::cli_run({"stats", graph_path(c.file)}, out, err);
    o.require(code == 0, std::string(c.file) + ": stats exited " + std::to_string(code) + " " + err.str());
    const std::string text = out.str();
    o.require(text.find(std::string("unmaterialized: ") + c.before + "\n") != std::string::npos,
              std::string(c.file) + ": expected unmaterialized " + c.before);
    o.require(text.find(std::string("heuristic: ") + c.after + "\n") != std::string::npos,
              std::string(c.file) + ": expected heuristic " + c.after);
  }
  // The same accounting through the library on the builder graphs.
  const Graph a = testing::materialization_success().graph;
  const Graph b = testing::materialization_fail().graph;
  o.require(cost_report(a).summary() == "R:6 W:2 C:6", "library success graph unmaterialized " + cost_report(a).summary());
  o.require(cost_report(materialize(a)).summary() == "R:5 W:3 C:4", "library success graph heuristic");
  o.require(cost_report(b).summary() == "R:4 W:2 C:6", "library fail graph unmaterialized " + cost_report(b).summary());
  o.require(cost_report(materialize(b)).summary() == "R:4 W:3 C:4", "library fail graph heuristic");
  if (o.pass) o.detail = "success graph R:6 W:2 C:6 -> R:5 W:3 C:4; fail graph R:4 W:2 C:6 -> R:4 W:3 C:4";
  return o;
}

Outcome partitioning() {
  Outcome o;
  const auto e = testing::exchange_sum(1, 2, 3);
  std::vector<CommBatch> batches;
  const auto plans = partition(e.ranks, &batches);
  o.require(batches.size() == 2, "batches " + std::to_string(batches.size()));
  o.require(plans.size() == 2 && plans[0].parts.size() == 3 && plans[1].parts.size() == 3, "three parts per rank");
  if (!o.pass) return o;
  const auto& r0 = plans[0].parts;
  const auto& r1 = plans[1].parts;
  // Rank 0: {a} then nothing then {a+b+c}; rank 1: nothing, {a+b}, nothing.
  o.require(!r0[0].empty() && r0[0].sends.size() == 1 && r0[0].compute_nodes == 0 &&
                r0[0].local_inputs == std::vector<std::string>{"a"},
            "rank 0 part 0 should send a");
  o.require(r0[1].empty(), "rank 0 part 1 should be empty");
  o.require(r0[2].compute_nodes == 1 && r0[2].rank_outputs == std::vector<std::string>{"result"},
            "rank 0 part 2 should compute a+b+c");
  o.require(r1[0].empty(), "rank 1 part 0 should be empty");
  o.require(r1[1].compute_nodes == 1 && r1[1].sends.size() == 1, "rank 1 part 1 should compute a+b");
  o.require(r1[2].empty(), "rank 1 part 2 should be empty");
  InProcessTransport transport;
  const auto result = execute_distributed(plans, transport, e.bindings);
  const auto& out = result.outputs[0].at("result");
  o.require(out.data == std::vector<double>{6.0}, "rank 0 result is not 6");
  o.require(result.trace.size() == 2, "trace has " + std::to_string(result.trace.size()) + " messages");
  if (result.trace.size() == 2) {
    o.require(result.trace[0].key == (CommKey{0, 1, result.trace[0].key.tag}) &&
                  result.trace[0].payload.data == std::vector<double>{1.0},
              "first message should carry a=1 from rank 0 to rank 1");
    o.require(result.trace[1].key.source == 1 && result.trace[1].key.dest == 0 &&
                  result.trace[1].payload.data == std::vector<double>{3.0},
              "second message should carry a+b=3 from rank 1 to rank 0");
  }
  if (o.pass) o.detail = "2 batches, parts [{a}, {}, {a+b+c}] / [{}, {a+b}, {}], result 6, 2 messages";
  return o;
}

Outcome axpy_end_to_end() {
  Outcome o;
  const auto e = testing::axpy_max0();
  const auto prog = build_program(e.graph);
  o.require(prog.kernels.kernels.size() == 1, "kernel count " + std::to_string(prog.kernels.kernels.size()));
  if (!o.pass) return o;
  const std::string& text = prog.kernels.kernels[0].text;
  o.require(text.find("get_global_id(0)") != std::string::npos, "no global id");
  o.require(text.find("if (i0 < 10)") != std::string::npos, "no bound guard");
  o.require(text.find(" ? ") != std::string::npos && text.find(" : ") != std::string::npos, "no ternary max");
  for (const auto& [name, v] : e.bindings) o.require(v.dtype == DType::kF64, "binding " + name + " is not f64");
  o.require(all_bitwise(eager_eval(e.graph, e.bindings), execute(prog, e.bindings).outputs),
            "executed output differs from eager oracle");
  if (o.pass) o.detail = "1 kernel with bound guard and ternary max, bitwise equal to oracle";
  return o;
}

Outcome fusion_contraction() {
  Outcome o;
  const auto e = testing::fused_tmp();
  const IrProgram before = lower(run_graph_passes(e.graph, PassConfig{}));
  const IrProgram fused = fuse_loops(before);
  const IrProgram after = contract_arrays(fused);
  o.require(before.nest_count() == 2, "lowered nests " + std::to_string(before.nest_count()));
  o.require(fused.nest_count() == 1, "fused nests " + std::to_string(fused.nest_count()));
  o.require(after.temporary_count() + 1 == before.temporary_count(), "temporary count did not drop by 1");
  if (o.pass) {
    const auto& nest = std::get<LoopNest>(after.steps.at(0));
    o.require(nest.scalars.size() == 1, "tmp is not a nest-local scalar");
  }
  o.require(all_bitwise(run_ir(before, e.bindings).outputs, run_ir(after, e.bindings).outputs),
            "results changed");
  if (o.pass) o.detail = "2 -> 1 nests, temporaries 1 -> 0, bitwise unchanged";
  return o;
}

ArrayMap squares(ArrayContext&, const std::vector<Array>& args) {
  return {{"res0", args[0] * args[0] + args[1] * args[1]}};
}

Outcome outline_concatenate() {
  Outcome o;
  constexpr std::int64_t n = 8;
  ArrayContext ctx;
  auto f = ctx.outline(squares, "f");
  Array a = ctx.placeholder("a", {n});
  Array b = ctx.placeholder("b", {n});
  Array c = ctx.placeholder("c", {n});
  Array d = ctx.placeholder("d", {n});
  Array total = f({a, b}).at("res0") + f({c, d}).at("res0");
  Graph g;
  g.outputs["total"] = total.node();
  o.require(f.definition_count() == 1, "definitions " + std::to_string(f.definition_count()));
  o.require(count_kind(g, NodeKind::kCall) == 2, "calls before " + std::to_string(count_kind(g, NodeKind::kCall)));

  const Graph merged = concatenate_calls(g);
  o.require(count_kind(merged, NodeKind::kCall) == 1, "calls after " + std::to_string(count_kind(merged, NodeKind::kCall)));
  int slices = 0;
  for (const auto& node : topo_order(merged)) {
    if (node->kind() == NodeKind::kCall) {
      int concats = 0;
      for (const auto& in : node->inputs()) concats += in->kind() == NodeKind::kConcatenate && in->shape() == Shape{2 * n};
      o.require(concats == 2, "call inputs are not two concatenations");
    }
    if (node->kind() == NodeKind::kIndexing && node->inputs()[0]->kind() == NodeKind::kCallResult) {
      const auto& sel = node->as<IndexingPayload>().selectors;
      if (sel.size() == 1 && std::holds_alternative<Slice>(sel[0])) ++slices;
    }
  }
  o.require(slices == 2, "slice results " + std::to_string(slices));

  std::mt19937_64 rng(20260314);
  std::uniform_real_distribution<double> uniform(-2.0, 2.0);
  for (int trial = 0; trial < 20 && o.pass; ++trial) {
    Bindings bind;
    for (const char* name : {"a", "b", "c", "d"}) {
      std::vector<double> v(n);
      for (auto& x : v) x = uniform(rng);
      bind[name] = NdArray({n}, DType::kF64, v);
    }
    NdArray expected({n}, DType::kF64, std::vector<double>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      double s = 0;
      for (const char* name : {"a", "b", "c", "d"}) s += bind[name].data[i] * bind[name].data[i];
      expected.data[i] = s;
    }
    const std::map<std::string, NdArray> want{{"total", expected}};
    o.require(all_close(want, eager_eval(g, bind), 1e-12), "oracle disagrees with a^2+b^2+c^2+d^2");
    o.require(all_close(want, execute(build_program(g), bind).outputs, 1e-12), "pipeline disagrees");
    o.require(all_close(want, eager_eval(merged, bind), 1e-12), "concatenated graph disagrees");
  }
  if (o.pass) o.detail = "calls 2 -> 1 with 2 concatenated inputs and 2 slices, 20 random inputs within 1e-12";
  return o;
}

Outcome constant_folding() {
  Outcome o;
  const auto e = testing::constant_fold_flux();
  const std::size_t before = topo_order(e.graph).size();
  const Graph folded = constant_fold(e.graph);
  const std::size_t after = topo_order(folded).size();
  // Leaves alpha, kappa, h, u-, u+ and operations div, mul, add, mul.
  o.require(before == 9, "initial graph has " + std::to_string(before) + " nodes");
  o.require(after == 5, "folded graph has " + std::to_string(after) + " nodes");
  int data = 0;
  for (const auto& n : topo_order(folded)) {
    if (n->kind() != NodeKind::kData) continue;
    ++data;
    o.require(*n->as<DataPayload>().values == std::vector<double>{1.0}, "folded constant is not exactly 1.0");
  }
  o.require(data == 1, "folded graph has " + std::to_string(data) + " Data nodes");
  o.require(eager_eval(folded, e.bindings).at("flux").data == std::vector<double>{4.0}, "flux is not 4");
  if (o.pass) o.detail = "9 -> 5 nodes, one Data node equal to 1.0";
  return o;
}

Outcome oracle_fuzz() {
  Outcome o;
  int graphs = 0;
  std::set<NodeKind> kinds;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto p = testing::random_graph(seed);
    kinds.insert(p.kinds.begin(), p.kinds.end());
    const auto oracle = eager_eval(p.graph, p.bindings);
    o.require(all_close(oracle, execute(build_program(p.graph), p.bindings).outputs, 1e-12),
              "random graph " + std::to_string(seed) + " differs from oracle");
    graphs += o.pass;
  }
  for (NodeKind k : {NodeKind::kData, NodeKind::kPlaceholder, NodeKind::kIndexLambda, NodeKind::kReshape,
                     NodeKind::kIndexing, NodeKind::kEinsum, NodeKind::kConcatenate, NodeKind::kStack,
                     NodeKind::kFunctionDefinition, NodeKind::kCall, NodeKind::kCallResult}) {
    o.require(kinds.count(k) > 0, "no random graph contains " + std::string(kind_name(k)));
  }
  int programs = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = testing::random_dist_program(seed);
    try {
      InProcessTransport transport;
      const auto result = execute_distributed(partition(p.ranks), transport, p.bindings);
      const auto oracle = global_eager_eval(p.ranks, p.bindings);
      bool same = oracle.size() == result.outputs.size();
      for (std::size_t r = 0; same && r < oracle.size(); ++r) same = all_bitwise(oracle[r], result.outputs[r]);
      o.require(same, "distributed program " + std::to_string(seed) + " differs from oracle");
      programs += same;
    } catch (const DeadlockDetected& err) {
      o.require(false, "distributed program " + std::to_string(seed) + " deadlocked: " + err.what());
    }
  }
  if (o.pass) {
    o.detail = std::to_string(graphs) + " graphs within 1e-12, " + std::to_string(programs) +
               " distributed programs, 0 deadlocks";
  }
  return o;
}

Outcome pass_safety() {
  Outcome o;
  for (std::uint64_t seed = 1000; seed < 1500 && o.pass; ++seed) {
    const auto p = testing::random_graph(seed);
    const std::string at = " (graph " + std::to_string(seed) + ")";
    const Graph m = materialize(dedup(p.graph));
    o.require(graphs_equal(materialize(m), m), "materialize not idempotent" + at);
    const Graph folded = constant_fold(p.graph);
    o.require(graphs_equal(constant_fold(folded), folded), "constant_fold not at fixed point" + at);

    const IrProgram ir = lower(run_graph_passes(p.graph, PassConfig{}));
    const IrProgram fused = fuse_loops(ir);
    const IrProgram contracted = contract_arrays(fused);
    o.require(fused.nest_count() <= ir.nest_count(), "fusion increased nest count" + at);
    o.require(fused.arrays.size() <= ir.arrays.size(), "fusion increased array count" + at);
    o.require(contracted.nest_count() <= fused.nest_count(), "contraction increased nest count" + at);
    o.require(contracted.arrays.size() <= fused.arrays.size(), "contraction increased array count" + at);
    o.require(dump(fuse_loops(fused)) == dump(fused), "fusion not idempotent" + at);
    o.require(dump(contract_arrays(contracted)) == dump(contracted), "contraction not idempotent" + at);
  }
  for (std::uint64_t seed = 0; seed < 10 && o.pass; ++seed) {
    const auto p = testing::random_dist_program(seed);
    const auto plans = partition(p.ranks);
    InProcessTransport base_transport;
    const auto base = execute_distributed(plans, base_transport, p.bindings);
    for (std::uint64_t s = 0; s < 100; ++s) {
      DistributedOptions options;
      options.scheduler_seed = s;
      InProcessTransport transport;
      const auto run = execute_distributed(plans, transport, p.bindings, options);
      bool same = true;
      for (std::size_t r = 0; r < base.outputs.size(); ++r) same = same && all_bitwise(base.outputs[r], run.outputs[r]);
      o.require(same, "program " + std::to_string(seed) + " depends on scheduler seed " + std::to_string(s));
    }
  }
  if (o.pass) {
    o.detail = "500 graphs: idempotent materialize, folded fixed point, fuse/contract idempotent and "
               "non-increasing; 10 programs x 100 scheduler seeds bitwise";
  }
  return o;
}

Outcome mismatch_detection() {
  Outcome o;
  const CommKey unpaired{0, 1, 7};
  Graph r0;
  r0.outputs["s"] = adfg::send(adfg::placeholder("a", {2}), 1, 7);
  Graph r1;
  r1.outputs["o"] = adfg::elementwise(OpCode::kNeg, {adfg::placeholder("b", {2})});
  try {
    extract_comm_graph({r0, r1});
    o.require(false, "unpaired send was accepted");
  } catch (const MismatchedCommunication& e) {
    o.require(e.offenders() == std::vector<CommKey>{unpaired}, "offender list does not name (0, 1, 7)");
    o.require(std::string(e.what()).find(unpaired.to_string()) != std::string::npos,
              std::string("message does not name the key: ") + e.what());
  }

  const auto e = testing::exchange_sum();
  const auto plans = partition(e.ranks);
  CommKey first{};
  {
    InProcessTransport probe;
    first = execute_distributed(plans, probe, e.bindings).trace.at(0).key;
  }
  DroppingTransport dropping({first});
  try {
    execute_distributed(plans, dropping, e.bindings);
    o.require(false, "dropped message did not deadlock");
  } catch (const DeadlockDetected& err) {
    const auto& missing = err.missing();
    o.require(std::find(missing.begin(), missing.end(), first) != missing.end(), "missing list lacks dropped key");
    o.require(std::string(err.what()).find(first.to_string()) != std::string::npos,
              std::string("message does not name the key: ") + err.what());
  }
  if (o.pass) o.detail = "MismatchedCommunication names " + unpaired.to_string() + ", DeadlockDetected names " +
                         first.to_string();
  return o;
}

struct Criterion {
  int id;
  const char* title;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace arrayflow

int main() {
  using arrayflow::Criterion;
  using arrayflow::Outcome;
  const std::vector<Criterion> criteria = {
      {1, "cost accounting", 1.0, arrayflow::cost_accounting},
      {2, "distributed partitioning", 1.0, arrayflow::partitioning},
      {3, "axpy end to end", 1.0, arrayflow::axpy_end_to_end},
      {4, "fusion and contraction", 1.0, arrayflow::fusion_contraction},
      {5, "outlining and call concatenation", 1.0, arrayflow::outline_concatenate},
      {6, "constant folding", 1.0, arrayflow::constant_folding},
      {7, "oracle equivalence fuzz", 60.0, arrayflow::oracle_fuzz},
      {8, "pass safety", 60.0, arrayflow::pass_safety},
      {9, "mismatch detection", 1.0, arrayflow::mismatch_detection},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && seconds >= c.limit_seconds) {
      o.pass = false;
      o.detail = "took longer than " + std::to_string(c.limit_seconds) + " s";
    }
    failures += !o.pass;
    std::printf("criterion %d %s (%.3f s, limit %.0f s) %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", seconds,
                c.limit_seconds, c.title, o.detail.c_str());
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
