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

// Builders for the worked example graphs shared by unit, property and
// acceptance tests.

#pragma once

#include <vector>

#include "arrayflow/adfg.hpp"
#include "arrayflow/eager.hpp"

namespace arrayflow::testing {

struct Example {
  Graph graph;
  Bindings bindings;
};

/// max(0, y + a*x) with x = y = linspace(0, 1, 10), a = 0.5.
Example axpy_max0();

/// out1 = 2*(a*x + y), out2 = 3*(a*x + y) over vectors of length n.
Example materialization_success(std::int64_t n = 10);

/// out1 = 2*(2*x + y), out2 = 3*(2*x + y).
Example materialization_fail(std::int64_t n = 10);

/// alpha*(kappa/h)*(u_minus + u_plus), alpha = 2, kappa = 3, h = 6 as Data.
Example constant_fold_flux();

/// tmp = x + y (materialized), z = 2*tmp.
Example fused_tmp(std::int64_t n = 16);

/// f(x, y) = x*x + y*y outlined; total = f(a, b) + f(c, d).
Example two_calls(std::int64_t n = 4);

/// Rank 0 sends a to rank 1, rank 1 returns a + b, rank 0 outputs a + b + c.
struct DistExample {
  std::vector<Graph> ranks;
  std::vector<Bindings> bindings;
};
DistExample exchange_sum(double a = 1, double b = 2, double c = 3);

}  // namespace arrayflow::testing
