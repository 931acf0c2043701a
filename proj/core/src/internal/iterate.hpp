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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "arrayflow/types.hpp"

namespace arrayflow {

/// Calls fn(index) for every multi-index of `shape` in row-major order.
template <class Fn>
void for_each_index(std::span<const std::int64_t> shape, Fn&& fn) {
  if (element_count(shape) == 0) return;
  std::vector<std::int64_t> idx(shape.size(), 0);
  while (true) {
    fn(std::span<const std::int64_t>(idx));
    int k = static_cast<int>(shape.size()) - 1;
    while (k >= 0) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
      --k;
    }
    if (k < 0) return;
  }
}

inline std::int64_t linear_offset(std::span<const std::int64_t> shape,
                                  std::span<const std::int64_t> idx) {
  std::int64_t off = 0;
  for (std::size_t k = 0; k < shape.size(); ++k) off = off * shape[k] + idx[k];
  return off;
}

}  // namespace arrayflow
