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

// Multi-rank programs: communication graph extraction, batching, per-rank
// partitioning into parts between communication batches, and a simulated
// event-driven execution engine over an in-process transport.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"
#include "arrayflow/errors.hpp"
#include "arrayflow/pipeline.hpp"

namespace arrayflow {

/// One matched send/receive pair.
struct CommOp {
  CommKey key;
  Shape shape;
  DType dtype = DType::kF64;
};

struct CommGraph {
  /// Sorted by key.
  std::vector<CommOp> ops;
  /// A -> B when data received by A flows (rank-locally) into data sent by B.
  std::vector<std::pair<int, int>> edges;

  int index_of(const CommKey& key) const;
};

struct CommBatch {
  int index = 0;
  std::vector<CommKey> ops;
};

/// Value computed by one rank, with its outgoing sends separated out.
/// SendWrapper nodes are replaced by their pass-through input.
struct RankProgram {
  Graph values;
  std::vector<NodeRef> sends;
};

RankProgram split_sends(const Graph& rank_graph);

/// Throws MismatchedCommunication for unpaired, duplicated or
/// shape-inconsistent send/receive pairs.
CommGraph extract_comm_graph(const std::vector<Graph>& ranks);

/// Level batching: batch(op) = 1 + max batch of its predecessors.
/// Throws CircularCommunication.
std::vector<CommBatch> batch_comms(const CommGraph& graph);

enum class SlotAssignment { kLatest, kEarliest };

struct PartSend {
  CommKey key;
  int batch = 0;
  /// Part output holding the payload.
  std::string output;
};

/// Sub-graph executed between communication batches `slot - 1` and `slot`.
struct Part {
  int slot = 0;
  Graph graph;
  /// Rank-level placeholders read by the part.
  std::vector<std::string> local_inputs;
  /// Received arrays, bound to the named placeholder.
  std::vector<std::pair<CommKey, std::string>> receive_inputs;
  /// Values produced by earlier parts: (placeholder name, producing slot).
  std::vector<std::pair<std::string, int>> value_inputs;
  std::vector<PartSend> sends;
  /// Rank outputs produced here (names in `graph.outputs`).
  std::vector<std::string> rank_outputs;
  /// Compute nodes of the original rank graph placed in this part.
  std::size_t compute_nodes = 0;

  bool empty() const { return graph.outputs.empty(); }
};

struct RankPlan {
  int rank = 0;
  /// One per slot: batches + 1 entries.
  std::vector<Part> parts;
};

/// Slot of every rank-local compute node: latest (or earliest) slot after
/// all prerequisite receives and no later than any send that needs it.
/// Throws InfeasiblePlacement.
RankPlan partition_rank(const Graph& rank_graph, const std::vector<CommBatch>& batches, int rank,
                        SlotAssignment assignment = SlotAssignment::kLatest);

std::vector<RankPlan> partition(const std::vector<Graph>& ranks, std::vector<CommBatch>* batches_out = nullptr,
                                SlotAssignment assignment = SlotAssignment::kLatest);

/// Point-to-point message channels addressed by (source, dest, tag).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void post_receive(const CommKey& key) = 0;
  virtual void post_send(const CommKey& key, NdArray payload) = 0;
  /// Delivers a message for a posted receive once it has arrived.
  virtual std::optional<NdArray> poll(const CommKey& key) = 0;
};

/// Unbounded FIFO per key; safe for concurrent use.
class InProcessTransport : public Transport {
 public:
  void post_receive(const CommKey& key) override;
  void post_send(const CommKey& key, NdArray payload) override;
  std::optional<NdArray> poll(const CommKey& key) override;

 private:
  std::mutex mu_;
  std::set<CommKey> posted_;
  std::map<CommKey, std::deque<NdArray>> channels_;
};

/// Fault injection: silently loses every message sent on `dropped`.
class DroppingTransport : public InProcessTransport {
 public:
  explicit DroppingTransport(std::set<CommKey> dropped) : dropped_(std::move(dropped)) {}
  void post_send(const CommKey& key, NdArray payload) override;

 private:
  std::set<CommKey> dropped_;
};

struct MessageRecord {
  int batch = 0;
  CommKey key;
  std::size_t bytes = 0;
  /// Payload as sent (kept for trace inspection).
  NdArray payload;
};

struct DistributedOptions {
  PipelineOptions pipeline;
  /// Unset: deterministic round-robin. Set: random rank order per round.
  std::optional<std::uint64_t> scheduler_seed;
  /// Free arrays when their last consumer part has run.
  bool reference_counting = true;
};

struct MemoryStats {
  std::size_t allocated = 0;
  std::size_t freed = 0;
  std::size_t peak_live = 0;
};

struct DistributedResult {
  std::vector<std::map<std::string, NdArray>> outputs;
  std::vector<MessageRecord> trace;
  MemoryStats memory;
  /// (rank, slot) in execution order.
  std::vector<std::pair<int, int>> schedule;
};

/// Runs every rank's parts as their inputs become available. Throws
/// DeadlockDetected when no rank can progress.
DistributedResult execute_distributed(const std::vector<RankPlan>& plans, Transport& transport,
                                      const std::vector<Bindings>& bindings,
                                      const DistributedOptions& options = {});

/// `batch=<k> src=<r> dst=<r> tag=<t> bytes=<n>`, one line per message.
std::string trace_string(const std::vector<MessageRecord>& trace);

/// Oracle: eager evaluation of all ranks, resolving each Receive from the
/// matching Send on its source rank.
std::vector<std::map<std::string, NdArray>> global_eager_eval(const std::vector<Graph>& ranks,
                                                              const std::vector<Bindings>& bindings);

}  // namespace arrayflow
