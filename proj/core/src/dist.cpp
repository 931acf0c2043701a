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

#include "arrayflow/dist.hpp"

#include "internal/rewrite.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace arrayflow {
namespace {

std::string keys_string(const std::vector<CommKey>& keys) {
  std::string s;
  for (std::size_t i = 0; i < keys.size(); ++i) s += (i ? ", " : "") + keys[i].to_string();
  return s;
}

std::vector<NodeRef> roots_of(const RankProgram& p) {
  std::vector<NodeRef> roots;
  for (const auto& [name, node] : p.values.outputs) roots.push_back(node);
  roots.insert(roots.end(), p.sends.begin(), p.sends.end());
  return roots;
}

CommKey send_key(int rank, const Node& send) {
  const auto& s = send.as<SendPayload>();
  return {rank, s.dest, s.tag};
}

CommKey receive_key(int rank, const Node& recv) {
  const auto& r = recv.as<ReceivePayload>();
  return {r.source, rank, r.tag};
}

}  // namespace

int CommGraph::index_of(const CommKey& key) const {
  auto it = std::lower_bound(ops.begin(), ops.end(), key,
                             [](const CommOp& op, const CommKey& k) { return op.key < k; });
  return it != ops.end() && it->key == key ? static_cast<int>(it - ops.begin()) : -1;
}

RankProgram split_sends(const Graph& rank_graph) {
  RankProgram out;
  std::vector<NodeRef> wrapped;
  Graph rewritten = rewrite_graph(rank_graph, [&](const NodeRef& orig, std::vector<NodeRef> inputs) -> NodeRef {
    if (orig->kind() == NodeKind::kSendWrapper) {
      wrapped.push_back(inputs[1]);
      return inputs[0];
    }
    bool same = true;
    for (std::size_t i = 0; i < inputs.size(); ++i) same &= inputs[i] == orig->inputs()[i];
    return same ? orig : orig->with_inputs(std::move(inputs));
  });
  std::unordered_set<const Node*> seen;
  auto add_send = [&](const NodeRef& s) {
    if (seen.insert(s.get()).second) out.sends.push_back(s);
  };
  for (const auto& [name, node] : rewritten.outputs) {
    if (node->kind() == NodeKind::kSend) add_send(node);
    else out.values.outputs[name] = node;
  }
  for (const auto& s : wrapped) add_send(s);
  return out;
}

CommGraph extract_comm_graph(const std::vector<Graph>& ranks) {
  std::map<CommKey, NodeRef> sends;
  std::map<CommKey, NodeRef> receives;
  std::set<CommKey> offenders;
  std::vector<RankProgram> programs;
  for (int r = 0; r < static_cast<int>(ranks.size()); ++r) {
    programs.push_back(split_sends(ranks[r]));
    for (const auto& s : programs.back().sends) {
      if (!sends.emplace(send_key(r, *s), s).second) offenders.insert(send_key(r, *s));
    }
    for (const auto& n : topo_order(roots_of(programs.back()))) {
      if (n->kind() != NodeKind::kReceive) continue;
      if (!receives.emplace(receive_key(r, *n), n).second) offenders.insert(receive_key(r, *n));
    }
  }
  CommGraph g;
  for (const auto& [key, s] : sends) {
    auto it = receives.find(key);
    if (key.dest < 0 || key.dest >= static_cast<int>(ranks.size()) || it == receives.end()) {
      offenders.insert(key);
      continue;
    }
    const auto& rp = it->second->as<ReceivePayload>();
    const NodeRef& data = s->inputs()[0];
    if (rp.shape != data->shape() || rp.dtype != data->dtype()) offenders.insert(key);
    g.ops.push_back({key, data->shape(), data->dtype()});
  }
  for (const auto& [key, r] : receives) {
    if (!sends.count(key)) offenders.insert(key);
  }
  if (!offenders.empty()) {
    std::vector<CommKey> list(offenders.begin(), offenders.end());
    throw MismatchedCommunication("unmatched or inconsistent communication: " + keys_string(list), list);
  }
  std::set<std::pair<int, int>> edges;
  for (int r = 0; r < static_cast<int>(programs.size()); ++r) {
    for (const auto& s : programs[r].sends) {
      const int to = g.index_of(send_key(r, *s));
      for (const auto& n : topo_order(std::span<const NodeRef>(&s, 1))) {
        if (n->kind() == NodeKind::kReceive) edges.emplace(g.index_of(receive_key(r, *n)), to);
      }
    }
  }
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

std::vector<CommBatch> batch_comms(const CommGraph& graph) {
  const int n = static_cast<int>(graph.ops.size());
  std::vector<std::vector<int>> succ(n);
  std::vector<int> indegree(n, 0);
  for (const auto& [a, b] : graph.edges) {
    succ[a].push_back(b);
    ++indegree[b];
  }
  std::vector<int> level(n, 0);
  std::vector<int> ready;
  for (int i = 0; i < n; ++i) {
    if (!indegree[i]) ready.push_back(i);
  }
  int visited = 0;
  while (!ready.empty()) {
    const int i = ready.back();
    ready.pop_back();
    ++visited;
    for (int j : succ[i]) {
      level[j] = std::max(level[j], level[i] + 1);
      if (--indegree[j] == 0) ready.push_back(j);
    }
  }
  if (visited != n) {
    std::vector<CommKey> cyc;
    for (int i = 0; i < n; ++i) {
      if (indegree[i]) cyc.push_back(graph.ops[i].key);
    }
    throw CircularCommunication("communication graph has a cycle through " + keys_string(cyc));
  }
  std::vector<CommBatch> batches;
  for (int i = 0; i < n; ++i) {
    if (level[i] >= static_cast<int>(batches.size())) batches.resize(level[i] + 1);
    batches[level[i]].ops.push_back(graph.ops[i].key);
  }
  for (int b = 0; b < static_cast<int>(batches.size()); ++b) batches[b].index = b;
  return batches;
}

RankPlan partition_rank(const Graph& rank_graph, const std::vector<CommBatch>& batches, int rank,
                        SlotAssignment assignment) {
  const RankProgram prog = split_sends(rank_graph);
  std::map<CommKey, int> batch_of;
  for (const auto& b : batches) {
    for (const auto& k : b.ops) batch_of[k] = b.index;
  }
  auto batch = [&](const CommKey& k) {
    auto it = batch_of.find(k);
    if (it == batch_of.end()) {
      throw MismatchedCommunication("rank " + std::to_string(rank) + " uses unbatched " + k.to_string(), {k});
    }
    return it->second;
  };
  const int B = static_cast<int>(batches.size());
  const auto order = topo_order(roots_of(prog));
  std::unordered_map<const Node*, int> position;
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i].get()] = static_cast<int>(i);
  auto is_compute = [](const Node& n) { return !n.is_leaf() && n.kind() != NodeKind::kSend; };

  std::unordered_map<const Node*, int> lo;
  for (const auto& n : order) {
    int v = 0;
    if (n->kind() == NodeKind::kReceive) v = batch(receive_key(rank, *n)) + 1;
    for (const auto& in : n->inputs()) v = std::max(v, lo[in.get()]);
    lo[n.get()] = v;
  }
  constexpr int kUnbounded = std::numeric_limits<int>::max();
  std::unordered_map<const Node*, int> hi;
  auto bound = [&](const Node* n, int v) {
    auto [it, inserted] = hi.emplace(n, v);
    if (!inserted) it->second = std::min(it->second, v);
  };
  for (const auto& [name, node] : prog.values.outputs) bound(node.get(), B);
  for (const auto& s : prog.sends) bound(s->inputs()[0].get(), batch(send_key(rank, *s)));
  std::unordered_map<const Node*, int> slot;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* n = it->get();
    if (!is_compute(*n)) continue;
    const int h = hi.count(n) ? hi[n] : kUnbounded;
    if (h == kUnbounded || lo[n] > h) {
      throw InfeasiblePlacement("rank " + std::to_string(rank) + ": " + describe(*n) + " needs slot >= " +
                                std::to_string(lo[n]) + " but feeds a send in batch " +
                                (h == kUnbounded ? std::string("?") : std::to_string(h)));
    }
    const int s = assignment == SlotAssignment::kLatest ? h : lo[n];
    slot[n] = s;
    for (const auto& in : n->inputs()) bound(in.get(), s);
  }

  RankPlan plan;
  plan.rank = rank;
  plan.parts.resize(static_cast<std::size_t>(B + 1));
  for (int q = 0; q <= B; ++q) plan.parts[q].slot = q;
  std::vector<std::map<const Node*, NodeRef>> memo(static_cast<std::size_t>(B + 1));
  std::vector<std::vector<const Node*>> exports(static_cast<std::size_t>(B + 1));
  std::vector<std::set<std::string>> seen_inputs(static_cast<std::size_t>(B + 1));
  auto value_name = [&](const Node* n) { return "_v" + std::to_string(position.at(n)); };

  std::function<NodeRef(const NodeRef&, int)> build = [&](const NodeRef& n, int q) -> NodeRef {
    auto found = memo[q].find(n.get());
    if (found != memo[q].end()) return found->second;
    Part& part = plan.parts[q];
    NodeRef out;
    if (n->kind() == NodeKind::kPlaceholder) {
      const auto& name = n->as<PlaceholderPayload>().name;
      if (seen_inputs[q].insert(name).second) part.local_inputs.push_back(name);
      out = n;
    } else if (n->kind() == NodeKind::kData) {
      out = n;
    } else if (n->kind() == NodeKind::kReceive) {
      const auto& r = n->as<ReceivePayload>();
      const std::string name = "_recv_s" + std::to_string(r.source) + "_t" + std::to_string(r.tag);
      out = adfg::placeholder(name, r.shape, r.dtype);
      if (seen_inputs[q].insert(name).second) part.receive_inputs.emplace_back(receive_key(rank, *n), name);
    } else if (slot.at(n.get()) < q) {
      const std::string name = value_name(n.get());
      out = adfg::placeholder(name, n->shape(), n->dtype());
      if (seen_inputs[q].insert(name).second) {
        part.value_inputs.emplace_back(name, slot.at(n.get()));
        exports[slot.at(n.get())].push_back(n.get());
      }
    } else {
      std::vector<NodeRef> inputs;
      for (const auto& in : n->inputs()) inputs.push_back(build(in, q));
      out = keep_or_rebuild(n, std::move(inputs));
      ++part.compute_nodes;
    }
    memo[q][n.get()] = out;
    return out;
  };

  // Roots per part, processed latest first so exports land in earlier parts.
  std::vector<std::vector<std::pair<std::string, NodeRef>>> roots(static_cast<std::size_t>(B + 1));
  for (const auto& [name, node] : prog.values.outputs) {
    const int q = is_compute(*node) ? slot.at(node.get()) : B;
    roots[q].emplace_back(name, node);
    plan.parts[q].rank_outputs.push_back(name);
  }
  for (const auto& s : prog.sends) {
    const CommKey key = send_key(rank, *s);
    const NodeRef& data = s->inputs()[0];
    const int q = is_compute(*data) ? slot.at(data.get()) : batch(key);
    const std::string name = "_send_d" + std::to_string(key.dest) + "_t" + std::to_string(key.tag);
    roots[q].emplace_back(name, data);
    plan.parts[q].sends.push_back({key, batch(key), name});
  }
  std::unordered_map<const Node*, NodeRef> by_ptr;
  for (const auto& n : order) by_ptr[n.get()] = n;
  for (int q = B; q >= 0; --q) {
    Part& part = plan.parts[q];
    for (const auto& [name, node] : roots[q]) part.graph.outputs[name] = build(node, q);
    for (const Node* n : exports[q]) part.graph.outputs[value_name(n)] = build(by_ptr.at(n), q);
  }
  return plan;
}

std::vector<RankPlan> partition(const std::vector<Graph>& ranks, std::vector<CommBatch>* batches_out,
                                SlotAssignment assignment) {
  const auto batches = batch_comms(extract_comm_graph(ranks));
  std::vector<RankPlan> plans;
  for (int r = 0; r < static_cast<int>(ranks.size()); ++r) {
    plans.push_back(partition_rank(ranks[r], batches, r, assignment));
  }
  if (batches_out) *batches_out = batches;
  return plans;
}

// ---------------------------------------------------------------------------

void InProcessTransport::post_receive(const CommKey& key) {
  std::lock_guard<std::mutex> lock(mu_);
  posted_.insert(key);
}

void InProcessTransport::post_send(const CommKey& key, NdArray payload) {
  std::lock_guard<std::mutex> lock(mu_);
  channels_[key].push_back(std::move(payload));
}

std::optional<NdArray> InProcessTransport::poll(const CommKey& key) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!posted_.count(key)) return std::nullopt;
  auto it = channels_.find(key);
  if (it == channels_.end() || it->second.empty()) return std::nullopt;
  NdArray out = std::move(it->second.front());
  it->second.pop_front();
  return out;
}

void DroppingTransport::post_send(const CommKey& key, NdArray payload) {
  if (dropped_.count(key)) return;
  InProcessTransport::post_send(key, std::move(payload));
}

namespace {

class RankRunner {
 public:
  RankRunner(const RankPlan& plan, Bindings bindings, const DistributedOptions& options, MemoryStats& memory,
             std::size_t& live)
      : plan_(plan), bindings_(std::move(bindings)), options_(options), memory_(memory), live_(live),
        done_(plan.parts.size(), false), compiled_(plan.parts.size()) {
    for (const auto& part : plan.parts) {
      for (const auto& [name, producer] : part.value_inputs) ++value_refs_[name];
      for (const auto& [key, name] : part.receive_inputs) {
        ++receive_refs_[key];
        outstanding_.insert(key);
      }
    }
  }

  void post_receives(Transport& t) {
    for (const auto& k : outstanding_) t.post_receive(k);
  }

  bool finished() const { return std::all_of(done_.begin(), done_.end(), [](bool d) { return d; }); }

  /// Polls pending receives; true when something arrived.
  bool poll(Transport& t) {
    bool any = false;
    for (auto it = outstanding_.begin(); it != outstanding_.end();) {
      if (auto msg = t.poll(*it)) {
        received_[*it] = std::move(*msg);
        allocate();
        any = true;
        it = outstanding_.erase(it);
      } else {
        ++it;
      }
    }
    return any;
  }

  /// Runs the first ready part; returns its slot or -1.
  int step(Transport& t, std::vector<MessageRecord>& trace) {
    for (std::size_t q = 0; q < plan_.parts.size(); ++q) {
      if (done_[q] || !ready(plan_.parts[q])) continue;
      run(q, t, trace);
      done_[q] = true;
      return static_cast<int>(q);
    }
    return -1;
  }

  std::string blocked_state() const {
    std::ostringstream os;
    os << "rank " << plan_.rank << ": ";
    for (std::size_t q = 0; q < plan_.parts.size(); ++q) {
      if (done_[q]) continue;
      os << "part " << q << " waiting";
      for (const auto& [key, name] : plan_.parts[q].receive_inputs) {
        if (!received_.count(key)) os << " " << key.to_string();
      }
      return os.str();
    }
    return os.str() + "done";
  }

  const std::set<CommKey>& outstanding() const { return outstanding_; }
  std::map<std::string, NdArray>& outputs() { return outputs_; }

  void release_all() {
    memory_.freed += values_.size() + received_.size();
    live_ -= values_.size() + received_.size();
    values_.clear();
    received_.clear();
  }

 private:
  bool ready(const Part& part) const {
    for (const auto& [name, producer] : part.value_inputs) {
      if (!values_.count(name)) return false;
    }
    for (const auto& [key, name] : part.receive_inputs) {
      if (!received_.count(key)) return false;
    }
    return true;
  }

  void allocate() {
    ++memory_.allocated;
    ++live_;
    memory_.peak_live = std::max(memory_.peak_live, live_);
  }

  void release() {
    --live_;
    ++memory_.freed;
  }

  void run(std::size_t q, Transport& t, std::vector<MessageRecord>& trace) {
    const Part& part = plan_.parts[q];
    if (part.empty()) return;
    Bindings b;
    for (const auto& name : part.local_inputs) {
      auto it = bindings_.find(name);
      if (it == bindings_.end()) {
        throw UnboundPlaceholder("rank " + std::to_string(plan_.rank) + ": no binding for '" + name + "'");
      }
      b[name] = it->second;
    }
    for (const auto& [key, name] : part.receive_inputs) b[name] = received_.at(key);
    for (const auto& [name, producer] : part.value_inputs) b[name] = values_.at(name);
    if (!compiled_[q]) compiled_[q] = std::make_shared<CompiledProgram>(build_program(part.graph, options_.pipeline));
    auto result = execute(*compiled_[q], b);

    for (const auto& [name, array] : result.outputs) {
      if (value_refs_.count(name)) {
        values_[name] = array;
        allocate();
      }
    }
    for (const auto& s : part.sends) {
      const NdArray& payload = result.outputs.at(s.output);
      trace.push_back({s.batch, s.key, payload.bytes(), payload});
      t.post_send(s.key, payload);
    }
    for (const auto& name : part.rank_outputs) outputs_[name] = result.outputs.at(name);

    if (!options_.reference_counting) return;
    for (const auto& [name, producer] : part.value_inputs) {
      if (--value_refs_[name] == 0) {
        values_.erase(name);
        release();
      }
    }
    for (const auto& [key, name] : part.receive_inputs) {
      if (--receive_refs_[key] == 0) {
        received_.erase(key);
        release();
      }
    }
  }

  const RankPlan& plan_;
  Bindings bindings_;
  const DistributedOptions& options_;
  MemoryStats& memory_;
  // Live arrays across all ranks, so the peak covers the whole simulation.
  std::size_t& live_;
  std::vector<bool> done_;
  std::vector<std::shared_ptr<CompiledProgram>> compiled_;
  std::map<std::string, int> value_refs_;
  std::map<CommKey, int> receive_refs_;
  std::set<CommKey> outstanding_;
  std::map<CommKey, NdArray> received_;
  std::map<std::string, NdArray> values_;
  std::map<std::string, NdArray> outputs_;
};

}  // namespace

DistributedResult execute_distributed(const std::vector<RankPlan>& plans, Transport& transport,
                                      const std::vector<Bindings>& bindings, const DistributedOptions& options) {
  DistributedResult result;
  std::size_t live = 0;
  std::vector<std::unique_ptr<RankRunner>> ranks;
  for (std::size_t r = 0; r < plans.size(); ++r) {
    ranks.push_back(std::make_unique<RankRunner>(plans[r], r < bindings.size() ? bindings[r] : Bindings{}, options,
                                                 result.memory, live));
  }
  for (auto& r : ranks) r->post_receives(transport);

  std::vector<std::size_t> order(ranks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::optional<std::mt19937_64> rng;
  if (options.scheduler_seed) rng.emplace(*options.scheduler_seed);

  while (true) {
    if (std::all_of(ranks.begin(), ranks.end(), [](const auto& r) { return r->finished(); })) break;
    if (rng) std::shuffle(order.begin(), order.end(), *rng);
    bool progressed = false;
    for (std::size_t i : order) {
      progressed |= ranks[i]->poll(transport);
      const int q = ranks[i]->step(transport, result.trace);
      if (q >= 0) {
        result.schedule.emplace_back(static_cast<int>(i), q);
        progressed = true;
      }
    }
    if (!progressed) {
      std::vector<CommKey> missing;
      std::string state;
      for (const auto& r : ranks) {
        missing.insert(missing.end(), r->outstanding().begin(), r->outstanding().end());
        state += (state.empty() ? "" : "; ") + r->blocked_state();
      }
      std::sort(missing.begin(), missing.end());
      throw DeadlockDetected("no rank can progress; missing " + keys_string(missing) + " [" + state + "]",
                             missing);
    }
  }
  for (auto& r : ranks) {
    result.outputs.push_back(std::move(r->outputs()));
    r->release_all();
  }
  return result;
}

std::string trace_string(const std::vector<MessageRecord>& trace) {
  std::ostringstream os;
  for (const auto& m : trace) {
    os << "batch=" << m.batch << " src=" << m.key.source << " dst=" << m.key.dest << " tag=" << m.key.tag
       << " bytes=" << m.bytes << "\n";
  }
  return os.str();
}

std::vector<std::map<std::string, NdArray>> global_eager_eval(const std::vector<Graph>& ranks,
                                                              const std::vector<Bindings>& bindings) {
  batch_comms(extract_comm_graph(ranks));  // rejects mismatched or cyclic programs
  std::vector<RankProgram> programs;
  std::map<CommKey, std::pair<int, NodeRef>> sends;
  for (int r = 0; r < static_cast<int>(ranks.size()); ++r) {
    programs.push_back(split_sends(ranks[r]));
    for (const auto& s : programs.back().sends) sends[send_key(r, *s)] = {r, s->inputs()[0]};
  }
  std::vector<std::unique_ptr<EagerEvaluator>> evaluators(ranks.size());
  for (int r = 0; r < static_cast<int>(ranks.size()); ++r) {
    evaluators[r] = std::make_unique<EagerEvaluator>(
        r < static_cast<int>(bindings.size()) ? bindings[r] : Bindings{}, [&, r](const Node& recv) {
          const auto& [src, data] = sends.at(receive_key(r, recv));
          return evaluators[src]->evaluate(data);
        });
  }
  std::vector<std::map<std::string, NdArray>> out(ranks.size());
  for (int r = 0; r < static_cast<int>(ranks.size()); ++r) {
    for (const auto& [name, node] : programs[r].values.outputs) out[r][name] = evaluators[r]->evaluate(node);
  }
  return out;
}

}  // namespace arrayflow
