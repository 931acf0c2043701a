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

// OpenCL-C-shaped kernel emission and the IR interpreter that executes
// programs on the host.

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "arrayflow/eager.hpp"
#include "arrayflow/ir.hpp"
#include "arrayflow/passes.hpp"

namespace arrayflow {

struct KernelParam {
  std::string name;
  DType dtype = DType::kF64;
  /// False for rank-0 inputs passed by value.
  bool pointer = true;
  bool written = false;
};

struct KernelSource {
  std::string name;
  std::vector<KernelParam> params;
  /// Statements inside the kernel braces.
  std::string body;
  /// Full kernel text, deterministic for a given IR.
  std::string text;
  /// Extents of the loops mapped to get_global_id(0..2).
  std::vector<std::int64_t> global_size;
};

/// One kernel launch. `bindings` maps kernel parameters to arrays of the
/// top-level program; arrays private to a call are prefixed `<function>@<call>.`.
struct Launch {
  std::string kernel;
  std::vector<std::pair<std::string, std::string>> bindings;
  std::vector<std::int64_t> global_size;
};

struct KernelBundle {
  std::vector<KernelSource> kernels;
  /// Dependency-ordered launches.
  std::vector<Launch> schedule;
};

inline constexpr int kMaxGlobalDims = 3;

/// One kernel per loop nest of the program and of each called function.
/// Nests with more than three parallel loops log a TooManyParallelDims
/// warning and run the excess sequentially.
KernelBundle emit_kernels(const IrProgram& program, PassLog* log = nullptr);

/// Writes `<kernel>.cl` per kernel; returns the written paths.
std::vector<std::filesystem::path> write_kernel_files(const KernelBundle& bundle,
                                                      const std::filesystem::path& dir);

struct ProfileRecord {
  std::string kernel;
  std::int64_t count = 0;
  /// Loop iterations per invocation, summed.
  std::int64_t elements = 0;
  /// Start/stop pairs in nanoseconds since the run began.
  std::vector<std::pair<std::int64_t, std::int64_t>> intervals;

  std::int64_t total_ns() const;
};

struct RunResult {
  std::map<std::string, NdArray> outputs;
  /// One record per kernel, in first-launch order.
  std::vector<ProfileRecord> profile;

  std::int64_t launches() const;
};

/// Executes the program. Gathers are bounds checked (OutOfBoundsIndex);
/// missing inputs raise UnboundPlaceholder and wrong shapes BindingMismatch.
RunResult run_ir(const IrProgram& program, const Bindings& bindings);

/// `kernel,count,elements,total_ns` with a header row.
std::string profile_csv(const std::vector<ProfileRecord>& profile);

enum class Stage {
  kAssemble,
  kTransform,
  kGenerateIr,
  kFusion,
  kContraction,
  kOtherIr,
  kCodegen,
  kExecution,
};

inline constexpr std::size_t kStageCount = 8;

struct StageTimings {
  std::array<double, kStageCount> seconds{};

  static std::string_view name(Stage s);
  void add(Stage s, double secs) { seconds[static_cast<std::size_t>(s)] += secs; }
  double total() const;
  /// Shares of the total; evenly split when nothing was measured.
  std::array<double, kStageCount> percentages() const;
  std::string report() const;
};

/// Adds the lifetime of the scope to one stage (no-op with a null sink).
class StageTimer {
 public:
  StageTimer(StageTimings* sink, Stage stage)
      : sink_(sink), stage_(stage), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer();
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  StageTimings* sink_;
  Stage stage_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace arrayflow
