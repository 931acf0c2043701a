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

#include "arrayflow/ir_passes.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>

namespace arrayflow {
namespace {

/// Index vectors of every access to `array` in `e`, nested ones included.
void accesses_of(const IrExpr& e, const std::string& array, std::vector<const IrExpr*>& out) {
  if (e.kind == IrExpr::Kind::kAccess && e.name == array) out.push_back(&e);
  for (const auto& a : e.args) accesses_of(*a, array, out);
}

std::vector<const IrExpr*> accesses_in(const Statement& st, const std::string& array) {
  std::vector<const IrExpr*> out;
  for (const auto& i : st.index) accesses_of(*i, array, out);
  accesses_of(*st.value, array, out);
  return out;
}

bool contains_reduce(const IrExpr& e) {
  if (e.kind == IrExpr::Kind::kReduce) return true;
  return std::any_of(e.args.begin(), e.args.end(), [](const IrRef& a) { return contains_reduce(*a); });
}

IrRef replace_access(const IrRef& e, const std::string& array, DType dtype) {
  if (e->kind == IrExpr::Kind::kAccess && e->name == array) return ir::scalar(array, dtype);
  bool changed = false;
  std::vector<IrRef> args;
  for (const auto& a : e->args) {
    args.push_back(replace_access(a, array, dtype));
    changed |= args.back() != a;
  }
  if (!changed) return e;
  auto copy = std::make_shared<IrExpr>(*e);
  copy->args = std::move(args);
  return copy;
}

std::string id_list(const std::vector<int>& ids) {
  std::string s = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ", " : "") + std::to_string(ids[i]);
  return s + "]";
}

using Signature = std::vector<std::pair<std::int64_t, std::vector<std::string>>>;

Signature signature(const LoopNest& n) {
  Signature s;
  for (const auto& l : n.loops) {
    std::vector<std::string> keys;
    for (const auto& t : l.tags) keys.push_back(t.key);
    std::sort(keys.begin(), keys.end());
    s.emplace_back(l.extent, std::move(keys));
  }
  return s;
}

IrProgram map_functions(IrProgram p, const std::function<IrProgram(const IrProgram&)>& fn) {
  for (auto& [name, f] : p.functions) f = std::make_shared<IrProgram>(fn(*f));
  return p;
}

void renumber(IrProgram& p) {
  for (std::size_t k = 0; k < p.steps.size(); ++k) {
    std::visit([&](auto& s) { s.id = static_cast<int>(k); }, p.steps[k]);
  }
}

IrProgram fuse_impl(const IrProgram& in, PassLog* log) {
  IrProgram out = map_functions(in, [&](const IrProgram& f) { return fuse_impl(f, log); });
  const auto& steps = in.steps;
  const int n = static_cast<int>(steps.size());

  std::map<std::string, int> writer;  // array -> step position
  for (int s = 0; s < n; ++s) {
    for (const auto& w : step_writes(steps[s])) writer[w] = s;
  }

  std::vector<int> group_of(n, -1);
  std::vector<std::vector<int>> groups;
  // Group-level producer sets, kept current as members join.
  std::vector<std::set<int>> producers;

  auto reachable = [&](int from, int to) {
    // Is `to` reachable from `from` along producer -> consumer edges?
    std::vector<int> stack{from};
    std::set<int> seen{from};
    while (!stack.empty()) {
      int g = stack.back();
      stack.pop_back();
      if (g == to) return true;
      for (int h = 0; h < static_cast<int>(groups.size()); ++h) {
        if (producers[h].count(g) && seen.insert(h).second) stack.push_back(h);
      }
    }
    return false;
  };

  for (int s = 0; s < n; ++s) {
    std::set<int> deps;
    for (const auto& r : step_reads(steps[s])) {
      auto it = writer.find(r);
      if (it != writer.end() && it->second < s) deps.insert(group_of[it->second]);
    }
    int chosen = -1;
    if (const auto* nest = std::get_if<LoopNest>(&steps[s])) {
      const Signature sig = signature(*nest);
      for (int g = 0; g < static_cast<int>(groups.size()) && chosen < 0; ++g) {
        const auto* head = std::get_if<LoopNest>(&steps[groups[g].front()]);
        if (!head || signature(*head) != sig) continue;
        bool legal = true;
        for (int m : groups[g]) {
          const auto& producer = std::get<LoopNest>(steps[m]);
          for (const auto& pst : producer.body) {
            if (pst.scalar_target) continue;
            for (const auto& st : nest->body) {
              for (const IrExpr* a : accesses_in(st, pst.target)) {
                if (!ir_equal(a->args, pst.index) || contains_reduce(*pst.value)) legal = false;
              }
            }
          }
        }
        for (int h : deps) {
          if (h != g && reachable(g, h)) legal = false;
        }
        if (legal) chosen = g;
      }
    }
    if (chosen < 0) {
      chosen = static_cast<int>(groups.size());
      groups.emplace_back();
      producers.emplace_back();
    }
    groups[chosen].push_back(s);
    group_of[s] = chosen;
    for (int h : deps) {
      if (h != chosen) producers[chosen].insert(h);
    }
  }

  // Topological order over groups, ties broken by first member.
  const int G = static_cast<int>(groups.size());
  std::vector<int> indegree(G, 0);
  for (int g = 0; g < G; ++g) indegree[g] = static_cast<int>(producers[g].size());
  std::set<std::pair<int, int>> ready;
  for (int g = 0; g < G; ++g) {
    if (!indegree[g]) ready.emplace(groups[g].front(), g);
  }
  out.steps.clear();
  while (!ready.empty()) {
    const int g = ready.begin()->second;
    ready.erase(ready.begin());
    if (groups[g].size() == 1) {
      out.steps.push_back(steps[groups[g].front()]);
    } else {
      LoopNest fused = std::get<LoopNest>(steps[groups[g].front()]);
      std::vector<int> ids{fused.id};
      for (std::size_t k = 1; k < groups[g].size(); ++k) {
        const auto& m = std::get<LoopNest>(steps[groups[g][k]]);
        ids.push_back(m.id);
        fused.body.insert(fused.body.end(), m.body.begin(), m.body.end());
        fused.scalars.insert(fused.scalars.end(), m.scalars.begin(), m.scalars.end());
      }
      if (log) {
        log->add("fused nests " + id_list(ids) + " -> nest " + std::to_string(out.steps.size()) +
                 (in.name == "main" ? "" : " in " + in.name));
      }
      out.steps.emplace_back(std::move(fused));
    }
    for (int h = 0; h < G; ++h) {
      if (producers[h].count(g) && --indegree[h] == 0) ready.emplace(groups[h].front(), h);
    }
  }
  renumber(out);
  return out;
}

IrProgram contract_impl(const IrProgram& in, PassLog* log) {
  IrProgram out = map_functions(in, [&](const IrProgram& f) { return contract_impl(f, log); });
  for (const auto& decl : in.arrays) {
    if (decl.storage != Storage::kTemporary) continue;
    int home = -1;
    int read_steps = 0;
    bool readable_elsewhere = false;
    for (int s = 0; s < static_cast<int>(out.steps.size()); ++s) {
      const auto reads = step_reads(out.steps[s]);
      const auto writes = step_writes(out.steps[s]);
      const bool w = std::count(writes.begin(), writes.end(), decl.name) > 0;
      const bool r = std::count(reads.begin(), reads.end(), decl.name) > 0;
      if (w) home = home < 0 ? s : -2;
      if (r) ++read_steps;
      if (r && !w) readable_elsewhere = true;
    }
    if (home < 0 || readable_elsewhere || read_steps == 0) continue;
    auto* nest = std::get_if<LoopNest>(&out.steps[home]);
    if (!nest) continue;
    int writer = -1;
    bool ok = true;
    for (int k = 0; k < static_cast<int>(nest->body.size()) && ok; ++k) {
      const auto& st = nest->body[k];
      const auto acc = accesses_in(st, decl.name);
      if (!st.scalar_target && st.target == decl.name) {
        if (writer >= 0 || !acc.empty()) ok = false;
        writer = k;
        continue;
      }
      if (!acc.empty() && writer < 0) ok = false;
      for (const IrExpr* a : acc) {
        if (writer < 0 || !ir_equal(a->args, nest->body[writer].index)) ok = false;
      }
    }
    if (!ok || writer < 0) continue;
    nest->body[writer].scalar_target = true;
    nest->body[writer].index.clear();
    for (int k = writer + 1; k < static_cast<int>(nest->body.size()); ++k) {
      nest->body[k].value = replace_access(nest->body[k].value, decl.name, decl.dtype);
      for (auto& i : nest->body[k].index) i = replace_access(i, decl.name, decl.dtype);
    }
    nest->scalars.emplace_back(decl.name, decl.dtype);
    out.arrays.erase(std::remove_if(out.arrays.begin(), out.arrays.end(),
                                    [&](const ArrayDecl& d) { return d.name == decl.name; }),
                     out.arrays.end());
    if (log) log->add("contracted " + decl.name + (in.name == "main" ? "" : " in " + in.name));
  }
  return out;
}

bool uses_var(const IrExpr& e, const std::string& v) {
  if (e.kind == IrExpr::Kind::kVar && e.name == v) return true;
  return std::any_of(e.args.begin(), e.args.end(), [&](const IrRef& a) { return uses_var(*a, v); });
}

IrProgram parallel_impl(const IrProgram& in, PassLog* log) {
  IrProgram out = map_functions(in, [&](const IrProgram& f) { return parallel_impl(f, log); });
  for (auto& step : out.steps) {
    auto* nest = std::get_if<LoopNest>(&step);
    if (!nest) continue;
    bool private_reads = true;
    for (const auto& w : nest->body) {
      if (w.scalar_target) continue;
      for (const auto& st : nest->body) {
        for (const IrExpr* a : accesses_in(st, w.target)) {
          if (!ir_equal(a->args, w.index)) private_reads = false;
        }
      }
    }
    if (!private_reads) continue;
    for (auto& loop : nest->loops) {
      bool all = true;
      bool any_write = false;
      for (const auto& w : nest->body) {
        if (w.scalar_target) continue;
        any_write = true;
        all &= std::any_of(w.index.begin(), w.index.end(),
                           [&](const IrRef& i) { return uses_var(*i, loop.var); });
      }
      if (!all || !any_write || loop.parallel) continue;
      loop.parallel = true;
      if (log) {
        log->add("parallel " + loop.var + "@nest " + std::to_string(nest->id) +
                 (in.name == "main" ? "" : " in " + in.name));
      }
    }
  }
  return out;
}

}  // namespace

IrProgram fuse_loops(const IrProgram& program, PassLog* log) { return fuse_impl(program, log); }

IrProgram contract_arrays(const IrProgram& program, PassLog* log) {
  return contract_impl(program, log);
}

IrProgram tag_parallel(const IrProgram& program, PassLog* log) { return parallel_impl(program, log); }

IrProgram run_ir_passes(const IrProgram& program, const IrPassConfig& config, PassLog* log) {
  IrProgram p = program;
  if (config.fuse) p = fuse_loops(p, log);
  if (config.contract) p = contract_arrays(p, log);
  if (config.parallel) p = tag_parallel(p, log);
  return p;
}

}  // namespace arrayflow
