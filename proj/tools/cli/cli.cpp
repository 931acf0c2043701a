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

#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "arrayflow/dist.hpp"
#include "arrayflow/eager.hpp"
#include "arrayflow/errors.hpp"
#include "arrayflow/pipeline.hpp"
#include "graph_io.hpp"

namespace arrayflow::cli {
namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string dtype;
  bool explain = false;
  bool no_fusion = false;
  bool no_contraction = false;
  bool no_concat = false;
  std::string slot_assignment = "latest";
};

struct CommandOptions {
  std::string input;
  std::string output;
  std::string dot_output;
  std::string out_dir = ".";
  std::string profile;
  int ranks = 0;
  std::optional<std::uint64_t> scheduler_seed;
};

class Driver {
 public:
  Driver(const GlobalOptions& g, const CommandOptions& c, std::ostream& out)
      : global_(g), cmd_(c), out_(out) {}

  void load() {
    file_ = load_graph_file(cmd_.input);
    if (!global_.dtype.empty()) {
      const DType d = parse_dtype(global_.dtype);
      if (file_.distributed()) {
        for (auto& g : file_.ranks) g = retype(g, d);
      } else {
        file_.graph = retype(file_.graph, d);
      }
    }
    if (file_.distributed()) {
      file_.rank_bindings.resize(file_.ranks.size());
      for (std::size_t r = 0; r < file_.ranks.size(); ++r) fill_bindings(file_.ranks[r], file_.rank_bindings[r]);
    } else {
      fill_bindings(file_.graph, file_.bindings);
    }
  }

  void require_single() const {
    if (file_.distributed()) throw FormatError("'" + cmd_.input + "' is a multi-rank program; use run-distributed");
  }

  PipelineOptions pipeline_options() const {
    PipelineOptions o;
    o.graph.concatenate_calls = !global_.no_concat;
    o.ir.fuse = !global_.no_fusion;
    o.ir.contract = !global_.no_contraction;
    return o;
  }

  template <class F>
  auto stage(const std::string& name, F&& f) {
    stage_ = name;
    return f();
  }

  void explain() {
    if (global_.explain && !log_.lines().empty()) out_ << "# pass log\n" << log_.text();
  }

  int dump_adfg() {
    auto summarize = [&](const Graph& g, const std::string& label) {
      const auto order = topo_order(g);
      std::map<std::string, int> kinds;
      for (const auto& n : order) ++kinds[std::string(kind_name(n->kind()))];
      out_ << label << "nodes: " << order.size() << "\n";
      for (const auto& [k, c] : kinds) out_ << "  " << k << ": " << c << "\n";
      out_ << "outputs:\n";
      for (const auto& [name, n] : g.outputs) {
        out_ << "  " << name << ": " << kind_name(n->kind()) << " " << shape_string(n->shape()) << " "
             << dtype_name(n->dtype()) << "\n";
      }
    };
    std::string dot;
    if (file_.distributed()) {
      for (std::size_t r = 0; r < file_.ranks.size(); ++r) {
        summarize(file_.ranks[r], "rank " + std::to_string(r) + " ");
        dot += to_dot(file_.ranks[r], "rank" + std::to_string(r));
      }
    } else {
      summarize(file_.graph, "");
      dot = to_dot(file_.graph);
    }
    if (cmd_.dot_output.empty()) {
      out_ << dot;
    } else {
      std::ofstream f(cmd_.dot_output);
      if (!f) throw FormatError("cannot write '" + cmd_.dot_output + "'");
      f << dot;
      out_ << "wrote " << cmd_.dot_output << "\n";
    }
    return kExitOk;
  }

  int transform() {
    const auto options = pipeline_options();
    GraphFile result = file_;
    stage("transform", [&] {
      if (result.distributed()) {
        for (auto& g : result.ranks) g = run_graph_passes(g, distributed_graph_config(options.graph), &log_);
      } else {
        result.graph = run_graph_passes(result.graph, options.graph, &log_);
      }
    });
    const std::string path = cmd_.output.empty()
                                 ? std::filesystem::path(cmd_.input).stem().string() + ".transformed.json"
                                 : cmd_.output;
    save_graph_file(result, path);
    out_ << log_.text();
    out_ << "wrote " << path << "\n";
    return kExitOk;
  }

  IrProgram lowered(bool optimize) {
    require_single();
    const auto options = pipeline_options();
    Graph g = stage("transform", [&] { return run_graph_passes(file_.graph, options.graph, &log_); });
    IrProgram ir = stage("lower", [&] { return lower(g, options.lower, &log_); });
    if (optimize) ir = stage("optimize", [&] { return run_ir_passes(ir, options.ir, &log_); });
    stage("validate", [&] {
      const auto problems = validate(ir);
      if (!problems.empty()) throw InvalidProgram("lowered program is malformed: " + problems.front());
    });
    return ir;
  }

  int lower_cmd(bool optimize) {
    const IrProgram ir = lowered(optimize);
    explain();
    out_ << dump(ir);
    return kExitOk;
  }

  int codegen() {
    const IrProgram ir = lowered(true);
    const KernelBundle bundle = stage("codegen", [&] { return emit_kernels(ir, &log_); });
    explain();
    std::filesystem::create_directories(cmd_.out_dir);
    for (const auto& p : write_kernel_files(bundle, cmd_.out_dir)) out_ << "wrote " << p.string() << "\n";
    out_ << "schedule:";
    for (const auto& l : bundle.schedule) out_ << " " << l.kernel;
    out_ << "\n";
    return kExitOk;
  }

  CompiledProgram compile(StageTimings* timings) {
    return stage("compile", [&] { return build_program(file_.graph, pipeline_options(), timings); });
  }

  int run() {
    require_single();
    StageTimings timings;
    const CompiledProgram program = compile(&timings);
    log_ = program.log;
    const RunResult result = stage("execute", [&] { return execute(program, file_.bindings, &timings); });
    explain();
    print_outputs(result.outputs, "");
    if (!cmd_.profile.empty()) {
      const std::string csv = profile_csv(result.profile);
      if (cmd_.profile == "-") {
        out_ << csv;
      } else {
        std::ofstream f(cmd_.profile);
        if (!f) throw FormatError("cannot write '" + cmd_.profile + "'");
        f << csv;
      }
    }
    return kExitOk;
  }

  int run_distributed() {
    if (!file_.distributed()) throw FormatError("'" + cmd_.input + "' has no 'ranks' section");
    if (cmd_.ranks != static_cast<int>(file_.ranks.size())) {
      throw FormatError("--ranks " + std::to_string(cmd_.ranks) + " does not match the " +
                        std::to_string(file_.ranks.size()) + " ranks in '" + cmd_.input + "'");
    }
    const auto assignment = global_.slot_assignment == "earliest" ? SlotAssignment::kEarliest : SlotAssignment::kLatest;
    std::vector<CommBatch> batches;
    const auto plans = stage("partition", [&] { return partition(file_.ranks, &batches, assignment); });
    DistributedOptions options;
    options.pipeline = pipeline_options();
    options.pipeline.emit = false;
    options.scheduler_seed = cmd_.scheduler_seed;
    InProcessTransport transport;
    const auto result = stage("execute", [&] {
      return execute_distributed(plans, transport, file_.rank_bindings, options);
    });
    out_ << "batches: " << batches.size() << "\n";
    for (const auto& plan : plans) {
      out_ << "rank " << plan.rank << " parts:";
      for (const auto& part : plan.parts) out_ << " " << part.compute_nodes;
      out_ << "\n";
    }
    for (std::size_t r = 0; r < result.outputs.size(); ++r) {
      print_outputs(result.outputs[r], "rank " + std::to_string(r) + " ");
    }
    out_ << "messages: " << result.trace.size() << "\n" << trace_string(result.trace);
    out_ << "memory: allocated=" << result.memory.allocated << " freed=" << result.memory.freed
         << " peak_live=" << result.memory.peak_live << "\n";
    return kExitOk;
  }

  int stats() {
    auto report = [&](const Graph& g, const std::string& prefix, const PassConfig& config) {
      const CostReport before = cost_report(unmaterialized(g));
      const Graph after_graph = stage("transform", [&] { return run_graph_passes(g, config, &log_); });
      const CostReport after = cost_report(after_graph);
      out_ << prefix << "unmaterialized: " << before.summary() << "\n";
      out_ << prefix << "heuristic: " << after.summary() << "\n";
      out_ << prefix << std::fixed << std::setprecision(2)
           << "materialization rate: " << after.materialization_rate * 100.0 << "%\n"
           << prefix << "recomputation rate: " << before.recomputation_rate * 100.0 << "% -> "
           << after.recomputation_rate * 100.0 << "%\n";
      out_.unsetf(std::ios::floatfield);
    };
    const auto options = pipeline_options();
    if (file_.distributed()) {
      for (std::size_t r = 0; r < file_.ranks.size(); ++r) {
        report(file_.ranks[r], "rank " + std::to_string(r) + " ", distributed_graph_config(options.graph));
      }
      explain();
      return kExitOk;
    }
    report(file_.graph, "", options.graph);
    StageTimings timings;
    {
      StageTimer t(&timings, Stage::kAssemble);
      load();
    }
    const CompiledProgram program = compile(&timings);
    stage("execute", [&] { return execute(program, file_.bindings, &timings); });
    explain();
    out_ << "nests: " << program.ir.nest_count() << " temporaries: " << program.ir.temporary_count()
         << " kernels: " << program.kernels.kernels.size() << "\n";
    out_ << "stage timings:\n" << timings.report();
    return kExitOk;
  }

  int oracle() {
    if (file_.distributed()) {
      const auto outputs = stage("oracle", [&] { return global_eager_eval(file_.ranks, file_.rank_bindings); });
      for (std::size_t r = 0; r < outputs.size(); ++r) print_outputs(outputs[r], "rank " + std::to_string(r) + " ");
      return kExitOk;
    }
    const auto outputs = stage("oracle", [&] { return eager_eval(file_.graph, file_.bindings); });
    print_outputs(outputs, "");
    return kExitOk;
  }

  const std::string& current_stage() const { return stage_; }

 private:
  static PassConfig distributed_graph_config(PassConfig config) {
    // Call concatenation would merge calls across communication boundaries.
    config.concatenate_calls = false;
    return config;
  }

  static Graph unmaterialized(const Graph& g) {
    return rewrite_graph(g, [](const NodeRef& n, std::vector<NodeRef> inputs) {
      return n->with_inputs(std::move(inputs))->with_materialized(false);
    });
  }

  /// Placeholders and receives take dtype `d`; floating constants follow when `d` is
  /// floating so that arithmetic stays in the requested precision.
  static ExprRef retype_expr(const ExprRef& e, const std::vector<NodeRef>& inputs, DType d) {
    switch (e->kind) {
      case ScalarExpr::Kind::kConst:
        return is_floating(d) && is_floating(e->dtype) ? sx::constant(e->value, d) : e;
      case ScalarExpr::Kind::kIndex:
        return e;
      case ScalarExpr::Kind::kInput:
        return sx::input(e->index, e->access, inputs[e->index]->dtype());
      case ScalarExpr::Kind::kApply: {
        std::vector<ExprRef> args;
        for (const auto& a : e->args) args.push_back(retype_expr(a, inputs, d));
        return sx::apply(e->op, std::move(args));
      }
    }
    return e;
  }

  static Graph retype(const Graph& g, DType d) {
    std::map<const Node*, NodeRef> functions;
    return rewrite_graph(g, [d, &functions](const NodeRef& n, std::vector<NodeRef> inputs) -> NodeRef {
      if (n->kind() == NodeKind::kCall) {
        const NodeRef& def = n->as<CallPayload>().function;
        auto it = functions.find(def.get());
        if (it == functions.end()) {
          const Graph body = retype(function_body(*def), d);
          std::vector<std::pair<std::string, NodeRef>> results;
          for (const auto& [name, r] : def->as<FunctionPayload>().results) {
            results.emplace_back(name, body.outputs.at(name));
          }
          it = functions.emplace(def.get(), rebuild_function(*def, std::move(results))).first;
        }
        return adfg::call(it->second, std::move(inputs));
      }
      if (n->kind() == NodeKind::kPlaceholder) {
        const auto& p = n->as<PlaceholderPayload>();
        return Node::create(NodeKind::kPlaceholder, {}, PlaceholderPayload{p.name, p.shape, d}, n->axis_tags(),
                            n->materialized());
      }
      if (n->kind() == NodeKind::kReceive) {
        const auto& p = n->as<ReceivePayload>();
        return Node::create(NodeKind::kReceive, {}, ReceivePayload{p.source, p.tag, p.shape, d}, n->axis_tags(),
                            n->materialized());
      }
      if (n->kind() == NodeKind::kData && is_floating(d) && is_floating(n->dtype())) {
        const auto& p = n->as<DataPayload>();
        auto values = std::make_shared<std::vector<double>>(*p.values);
        for (auto& v : *values) v = cast_value(d, v);
        return Node::create(NodeKind::kData, {}, DataPayload{p.name, p.shape, d, std::move(values)}, n->axis_tags(),
                            n->materialized());
      }
      if (n->kind() == NodeKind::kIndexLambda) {
        const auto& p = n->as<IndexLambdaPayload>();
        auto expr = retype_expr(p.expr, inputs, d);
        return Node::create(NodeKind::kIndexLambda, std::move(inputs), IndexLambdaPayload{p.shape, std::move(expr)},
                            n->axis_tags(), n->materialized());
      }
      return n->with_inputs(std::move(inputs));
    });
  }

  /// Missing placeholders get seeded uniform values; the stream depends on
  /// the seed and the placeholder name only.
  void fill_bindings(const Graph& g, Bindings& b) const {
    for (const auto& n : topo_order(g)) {
      if (n->kind() != NodeKind::kPlaceholder) continue;
      const auto& p = n->as<PlaceholderPayload>();
      if (auto it = b.find(p.name); it != b.end()) {
        // File bindings follow a --dtype override.
        if (!global_.dtype.empty() && it->second.dtype != p.dtype) {
          for (auto& v : it->second.data) v = cast_value(p.dtype, v);
          it->second.dtype = p.dtype;
        }
        continue;
      }
      std::uint64_t h = 1469598103934665603ULL;
      for (unsigned char c : p.name) h = (h ^ c) * 1099511628211ULL;
      b[p.name] = seeded_random(global_.seed ^ h, p.shape, p.dtype);
    }
  }

  void print_outputs(const std::map<std::string, NdArray>& outputs, const std::string& prefix) {
    for (const auto& [name, a] : outputs) {
      out_ << prefix << name << " " << shape_string(a.shape) << " " << dtype_name(a.dtype) << " = "
           << array_string(a) << "\n";
    }
  }

  GlobalOptions global_;
  CommandOptions cmd_;
  std::ostream& out_;
  GraphFile file_;
  PassLog log_;
  std::string stage_ = "load";
};

}  // namespace

int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  GlobalOptions global;
  CommandOptions cmd;
  CLI::App app{"arrayflow: array dataflow graph compiler driver", "arrayflow"};
  app.require_subcommand(1);
  app.add_option("--seed", global.seed, "Seed for generated placeholder bindings");
  app.add_option("--dtype", global.dtype, "Override every placeholder dtype")
      ->check(CLI::IsMember({"bool", "i64", "f32", "f64"}));
  app.add_flag("--explain", global.explain, "Print the pass log");
  app.add_flag("--no-fusion", global.no_fusion, "Disable loop fusion");
  app.add_flag("--no-contraction", global.no_contraction, "Disable array contraction");
  app.add_flag("--no-concat", global.no_concat, "Disable call concatenation");
  app.add_option("--slot-assignment", global.slot_assignment, "Part slot for rank-local nodes")
      ->check(CLI::IsMember({"latest", "earliest"}));

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->add_option("file", cmd.input, "Graph program file")->required();
    return sub;
  };
  CLI::App* dump_adfg = add("dump-adfg", "Print a graph summary and DOT export");
  dump_adfg->add_option("--dot", cmd.dot_output, "Write the DOT graph to this file");
  CLI::App* transform = add("transform", "Run graph passes and write the transformed file");
  transform->add_option("-o,--output", cmd.output, "Transformed file path");
  CLI::App* lower_cmd = add("lower", "Print the scalar IR");
  CLI::App* optimize = add("optimize", "Print the scalar IR after loop passes");
  CLI::App* codegen = add("codegen", "Write kernel source files");
  codegen->add_option("--out-dir", cmd.out_dir, "Directory for .cl files");
  CLI::App* run = add("run", "Compile, execute and print outputs");
  run->add_option("--profile", cmd.profile, "Write the kernel profile CSV ('-' for stdout)");
  CLI::App* run_dist = add("run-distributed", "Partition, simulate ranks and print the message trace");
  run_dist->add_option("--ranks", cmd.ranks, "Number of ranks")->required();
  run_dist->add_option("--scheduler-seed", cmd.scheduler_seed, "Randomize the rank schedule");
  CLI::App* stats = add("stats", "Cost accounting, rates and stage timings");
  CLI::App* oracle = add("oracle", "Evaluate with the reference interpreter only");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Driver driver(global, cmd, out);
  try {
    driver.load();
    if (dump_adfg->parsed()) return driver.dump_adfg();
    if (transform->parsed()) return driver.transform();
    if (lower_cmd->parsed()) return driver.lower_cmd(false);
    if (optimize->parsed()) return driver.lower_cmd(true);
    if (codegen->parsed()) return driver.codegen();
    if (run->parsed()) return driver.run();
    if (run_dist->parsed()) return driver.run_distributed();
    if (stats->parsed()) return driver.stats();
    if (oracle->parsed()) return driver.oracle();
  } catch (const FormatError& e) {
    err << "error: malformed input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    if (driver.current_stage() == "load") {
      err << "error: malformed input: " << e.kind() << ": " << e.what() << "\n";
      return kExitUsage;
    }
    err << "error: " << e.kind() << " in " << driver.current_stage() << ": " << e.what() << "\n";
    return kExitPipeline;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: internal in " << driver.current_stage() << ": " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitUsage;
}

}  // namespace arrayflow::cli
