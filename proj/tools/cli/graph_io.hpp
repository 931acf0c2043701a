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

// JSON graph program files and DOT export.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"
#include "json.hpp"

namespace arrayflow::cli {

using Json = nlohmann::ordered_json;

/// Raised for files that do not describe a valid graph program.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GraphFile {
  Graph graph;
  Bindings bindings;
  /// Non-empty for multi-rank programs.
  std::vector<Graph> ranks;
  std::vector<Bindings> rank_bindings;

  bool distributed() const { return !ranks.empty(); }
};

GraphFile parse_graph_file(const Json& doc);
GraphFile load_graph_file(const std::filesystem::path& path);

/// Nodes in dependency order. Function bodies precede their definition.
Json graph_to_json(const Graph& graph);
Json graph_file_to_json(const GraphFile& file);
void save_graph_file(const GraphFile& file, const std::filesystem::path& path);

/// Literal arrays, `{"linspace": [start, stop, n]}` or
/// `{"seeded_random": [seed, shape]}`; shape and dtype default to `like`.
NdArray parse_binding(const Json& spec, const Shape* shape, DType dtype);

/// Uniform values in [0, 1) from a splitmix64 stream; identical on every
/// platform for a given seed.
NdArray seeded_random(std::uint64_t seed, const Shape& shape, DType dtype);

std::string to_dot(const Graph& graph, const std::string& name = "adfg");

}  // namespace arrayflow::cli
