/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "hybrid_attn/harness/sweep.h"

#include <algorithm>
#include <cmath>

#include "hybrid_attn/attn_core.h"
#include "hybrid_attn/harness/experiments.h"
#include "hybrid_attn/harness/workload_gen.h"
#include "hybrid_attn/parallel.h"
#include "hybrid_attn/rng.h"

namespace hybrid_attn::harness {

namespace {

constexpr std::size_t kHeads = 8, kKvHeads = 4, kHeadDim = 32;
constexpr std::size_t kPrefillTokens = 2048;

std::size_t as_count(SweepAxis axis, double value) {
  if (!(value >= 1.0) || value != std::floor(value) || value > 1e9) {
    throw ConfigError(to_string(axis) + " values must be positive integers, got " + format_number(value));
  }
  return static_cast<std::size_t>(value);
}

WorkloadSpec clustered_spec(const EngineConfig& base, const SweepOptions& options) {
  WorkloadSpec spec;
  spec.kind = WorkloadKind::clustered_needles;
  spec.history = options.history;
  spec.head_dim = 64;
  spec.heads = 1;
  spec.kv_heads = 1;
  spec.needle_count = std::min<std::size_t>(4, base.physical_page / base.logical_page);
  spec.cluster_span = 1;
  spec.needle_margin = 0.4;
  spec.haystack_scale = 0.1;
  spec.spike_rate = 0.05;
  spec.physical_page = base.physical_page;
  spec.logical_page = base.logical_page;
  spec.seed = derive_seed(base.seed, 101);
  return spec;
}

std::vector<double> sweep_gates(const EngineConfig& base) {
  Rng rng(derive_seed(base.seed, 102));
  std::vector<double> gates(kHeads);
  for (auto& g : gates) g = rng.uniform();
  return gates;
}

}  // namespace

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::page_size: return "page_size";
    case SweepAxis::budget: return "budget";
    case SweepAxis::reuse_interval: return "reuse_interval";
    case SweepAxis::sparsity: return "sparsity";
  }
  return "page_size";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (SweepAxis a : {SweepAxis::page_size, SweepAxis::budget, SweepAxis::reuse_interval, SweepAxis::sparsity}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis '" + name + "' (page_size, budget, reuse_interval, sparsity)");
}

EngineConfig apply_axis(const EngineConfig& base, SweepAxis axis, double value) {
  EngineConfig c = base;
  switch (axis) {
    case SweepAxis::page_size:
      c.physical_page = as_count(axis, value);
      c.logical_page = std::min(base.logical_page, c.physical_page);
      c.tile_q_prefill = std::min(base.tile_q_prefill, c.physical_page);
      break;
    case SweepAxis::budget: c.budget_tokens = as_count(axis, value); break;
    case SweepAxis::reuse_interval: c.reuse_interval = as_count(axis, value); break;
    case SweepAxis::sparsity: c.target_sparsity = value; break;
  }
  c.validate();
  return c;
}

std::vector<ResultRow> run_sweep(SweepAxis axis, std::span<const double> values,
                                 const EngineConfig& base, const SweepOptions& options) {
  base.validate();
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<EngineConfig> configs;
  for (double v : values) {
    EngineConfig c = apply_axis(base, axis, v);
    if (axis == SweepAxis::page_size &&
        (options.history % c.physical_page != 0 || options.history / c.physical_page < 5 ||
         c.physical_page % c.logical_page != 0)) {
      throw ConfigError("page_size " + format_number(v) + " does not tile the " +
                        std::to_string(options.history) + "-token sweep workload");
    }
    configs.push_back(c);
  }

  const std::string exp = "sweep_" + to_string(axis);
  const WorkloadSpec spec = clustered_spec(base, options);
  const std::vector<double> gates = sweep_gates(base);
  std::vector<std::vector<ResultRow>> blocks(values.size());

  // Recall does not depend on the reuse interval or on head sparsity; it is
  // measured once at the base config for those axes.
  RecallTable shared;
  const bool recall_per_value = axis == SweepAxis::page_size || axis == SweepAxis::budget;
  if (!recall_per_value) {
    const PageGeometry g{base.physical_page, base.logical_page};
    const std::size_t b = base.budget_tokens;
    shared = measure_recall(spec, options.recall_trials, std::span(&g, 1), std::span(&b, 1));
  }

  for (std::size_t i = 0; i < values.size(); ++i) {
    const EngineConfig& c = configs[i];
    const std::string cfg = config_echo(c) + ";" + to_string(axis) + "=" + format_number(values[i]);
    auto& rows = blocks[i];

    RecallTable recall = shared;
    if (recall_per_value) {
      const PageGeometry geometries[] = {{c.physical_page, c.logical_page}, {c.physical_page, c.physical_page}};
      const std::size_t b = c.budget_tokens;
      const std::size_t count = axis == SweepAxis::page_size ? 2 : 1;
      recall = measure_recall(spec, options.recall_trials, std::span(geometries, count), std::span(&b, 1));
    }
    rows.push_back({exp, cfg, "needle_recall", recall.recall[0][0], recall.oracle[0][0],
                    recall.recall[0][0] <= recall.oracle[0][0] + 1e-12});
    if (axis == SweepAxis::page_size) {
      rows.push_back({exp, cfg, "needle_recall_flat", recall.recall[1][0], recall.oracle[1][0],
                      recall.recall[1][0] <= recall.oracle[1][0] + 1e-12});
      rows.push_back({exp, cfg, "needle_recall_hier_minus_flat", recall.recall[0][0] - recall.recall[1][0], 0.0,
                      recall.recall[0][0] >= recall.recall[1][0]});
    }

    DecodeExperiment e;
    e.history = options.history;
    e.heads = kHeads;
    e.kv_heads = kKvHeads;
    e.head_dim = kHeadDim;
    e.steps = options.decode_steps;
    e.gates = gates;
    e.seed = derive_seed(base.seed, 103);
    const DecodeRun run = run_decode(c, e);
    std::uint64_t expected_visited = 0;
    for (std::size_t step = 0; step < run.pages.size(); ++step) {
      for (std::size_t h = 0; h < kHeads; ++h) {
        expected_visited += expected_decode_tiles(run.profiles[h], run.pages[step], c.budget_tokens, c.physical_page);
      }
    }
    const TileCount decode = run.decode.stage_total(Stage::decode);
    const double expected_speedup = static_cast<double>(decode.total) / static_cast<double>(expected_visited);
    rows.push_back(within(exp, cfg, "decode_speedup", decode.speedup(), expected_speedup,
                          1e-12 * expected_speedup));

    std::size_t dense_heads = 0;
    for (PoolKind p : run.pools) dense_heads += p == PoolKind::dense;
    const double per_head = dense_heads == 0 ? 0.0
                                             : static_cast<double>(run.decode.selector_invocations()) /
                                                   static_cast<double>(dense_heads);
    const double expected_invocations =
        dense_heads == 0 ? 0.0
                         : std::ceil(static_cast<double>(options.decode_steps) / static_cast<double>(c.reuse_interval));
    rows.push_back(within(exp, cfg, "selector_invocations", per_head, expected_invocations, 0));

    if (axis == SweepAxis::sparsity) {
      std::size_t retrieval = 0;
      for (const auto& p : run.profiles) retrieval += p.role == HeadRole::retrieval;
      const double expected_retrieval = std::ceil((1.0 - c.target_sparsity) * kHeads - 1e-9);
      rows.push_back(within(exp, cfg, "retrieval_heads", static_cast<double>(retrieval), expected_retrieval, 0));

      WorkloadSpec ps;
      ps.history = kPrefillTokens;
      ps.queries = kPrefillTokens;
      ps.heads = kHeads;
      ps.kv_heads = kKvHeads;
      ps.head_dim = kHeadDim;
      ps.haystack_scale = 1.0;
      ps.seed = derive_seed(base.seed, 104);
      Engine engine(c, kHeads, kKvHeads, kHeadDim, run.profiles);
      const PrefillOutput out = engine.prefill(gen_workload(ps).workload);
      const TileGrid grid(kPrefillTokens, kPrefillTokens, {c.tile_q_prefill, c.physical_page}, true);
      std::vector<std::int64_t> diagonals;
      for (std::int64_t qt = grid.first_query_tile(); qt <= grid.last_query_tile(); ++qt) {
        diagonals.push_back(grid.diagonal(qt));
      }
      std::uint64_t visited = 0, total = 0;
      const HeadProfile dense_profile{};
      for (const auto& p : run.profiles) {
        visited += expected_prefill_tiles(p, diagonals);
        total += expected_prefill_tiles(dense_profile, diagonals);
      }
      const double expected = static_cast<double>(total) / static_cast<double>(visited);
      const double got = out.ledger.stage_total(Stage::prefill).speedup();
      rows.push_back(within(exp, cfg, "prefill_speedup", got, expected, 1e-12 * expected));
    }
  }

  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<ResultRow> rows;
  for (std::size_t i : order) {
    std::stable_sort(blocks[i].begin(), blocks[i].end(),
                     [](const ResultRow& a, const ResultRow& b) { return a.metric < b.metric; });
    rows.insert(rows.end(), blocks[i].begin(), blocks[i].end());
  }
  return rows;
}

}  // namespace hybrid_attn::harness
