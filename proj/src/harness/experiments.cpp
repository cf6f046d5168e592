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

#include "hybrid_attn/harness/experiments.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "hybrid_attn/parallel.h"
#include "hybrid_attn/rng.h"

namespace hybrid_attn::harness {

TwoWayCache build_dense_cache(const Workload& w, std::size_t kv_head, PageGeometry geometry) {
  CacheConfig cc;
  cc.physical_page = geometry.physical_page;
  cc.logical_page = geometry.logical_page;
  cc.quant_bits = 0;  // statistics come from unquantized keys either way
  TwoWayCache cache(cc, w.head_dim(), {PoolKind::dense});
  cache.append_tokens(0, w.keys(kv_head), w.values(kv_head));
  return cache;
}

std::vector<double> exact_scores(std::span<const float> probe, const StridedRows& keys) {
  std::vector<double> out(keys.rows);
  for (std::size_t j = 0; j < keys.rows; ++j) {
    const auto k = keys.row(j);
    double s = 0.0;
    for (std::size_t c = 0; c < probe.size(); ++c) s += static_cast<double>(probe[c]) * k[c];
    out[j] = s;
  }
  return out;
}

std::vector<std::int64_t> oracle_top_pages(std::span<const double> scores, std::size_t page_size,
                                           std::size_t k) {
  const auto pages = static_cast<std::int64_t>((scores.size() + page_size - 1) / page_size);
  std::vector<std::int64_t> chosen;
  if (static_cast<std::int64_t>(k) >= pages) {
    chosen.resize(static_cast<std::size_t>(pages));
    std::iota(chosen.begin(), chosen.end(), 0);
    return chosen;
  }
  for (std::int64_t p : {pages - 1, std::int64_t{0}, pages - 2}) {
    if (chosen.size() < k && p >= 0 && std::find(chosen.begin(), chosen.end(), p) == chosen.end()) {
      chosen.push_back(p);
    }
  }
  std::vector<double> best(static_cast<std::size_t>(pages), -INFINITY);
  for (std::size_t j = 0; j < scores.size(); ++j) {
    best[j / page_size] = std::max(best[j / page_size], scores[j]);
  }
  std::vector<std::int64_t> order;
  for (std::int64_t p = 0; p < pages; ++p) {
    if (std::find(chosen.begin(), chosen.end(), p) == chosen.end()) order.push_back(p);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return best[static_cast<std::size_t>(a)] > best[static_cast<std::size_t>(b)];
  });
  for (std::size_t i = 0; chosen.size() < k; ++i) chosen.push_back(order[i]);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

double token_recall(std::span<const std::int64_t> positions, std::span<const std::int64_t> pages,
                    std::size_t page_size) {
  if (positions.empty()) return 1.0;
  std::size_t hit = 0;
  for (std::int64_t pos : positions) {
    const std::int64_t page = pos / static_cast<std::int64_t>(page_size);
    if (std::find(pages.begin(), pages.end(), page) != pages.end()) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(positions.size());
}

RecallTable measure_recall(const WorkloadSpec& base, std::size_t trials,
                           std::span<const PageGeometry> geometries,
                           std::span<const std::size_t> budgets) {
  if (base.kind == WorkloadKind::random) throw std::invalid_argument("measure_recall: needle workload required");
  const std::size_t ng = geometries.size(), nb = budgets.size();
  // Per-trial cells so the sums below run in a fixed order.
  std::vector<double> recall(trials * ng * nb), oracle(trials * ng * nb);
  parallel_for(trials, [&](std::size_t t) {
    WorkloadSpec spec = base;
    spec.seed = derive_seed(base.seed, t);
    const GeneratedWorkload g = gen_workload(spec);
    const NeedleTruth& truth = g.truth.front();
    const auto probe = g.workload.q.row(g.workload.queries() - 1, truth.probe_head);
    const auto scores = exact_scores(probe, g.workload.keys(truth.kv_head));
    const std::span<const float> queries[] = {probe};
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const TwoWayCache cache = build_dense_cache(g.workload, truth.kv_head, geometries[gi]);
      const std::size_t np = geometries[gi].physical_page;
      for (std::size_t bi = 0; bi < nb; ++bi) {
        const auto selected = select_pages(queries, cache.head(0), budgets[bi]);
        const auto top = oracle_top_pages(scores, np, (budgets[bi] + np - 1) / np);
        const std::size_t cell = (t * ng + gi) * nb + bi;
        recall[cell] = token_recall(truth.positions, selected, np);
        oracle[cell] = token_recall(truth.positions, top, np);
      }
    }
  });
  RecallTable table;
  table.trials = trials;
  table.recall.assign(ng, std::vector<double>(nb, 0.0));
  table.oracle.assign(ng, std::vector<double>(nb, 0.0));
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t gi = 0; gi < ng; ++gi) {
      for (std::size_t bi = 0; bi < nb; ++bi) {
        table.recall[gi][bi] += recall[(t * ng + gi) * nb + bi];
        table.oracle[gi][bi] += oracle[(t * ng + gi) * nb + bi];
      }
    }
  }
  for (std::size_t gi = 0; gi < ng; ++gi) {
    for (std::size_t bi = 0; bi < nb; ++bi) {
      table.recall[gi][bi] /= static_cast<double>(trials);
      table.oracle[gi][bi] /= static_cast<double>(trials);
    }
  }
  return table;
}

DecodeRun run_decode(const EngineConfig& config, const DecodeExperiment& e) {
  if (e.gates.size() != e.heads) throw std::invalid_argument("run_decode: one gate per head required");
  DecodeRun run;
  run.profiles = classify_heads(e.gates, config.target_sparsity, config.geometry()).profiles;
  run.pools = pool_assignment(run.profiles, e.kv_heads);

  WorkloadSpec spec;
  spec.history = e.history;
  spec.queries = 1;
  spec.heads = e.heads;
  spec.kv_heads = e.kv_heads;
  spec.head_dim = e.head_dim;
  spec.haystack_scale = 1.0;
  spec.seed = e.seed;
  const Workload w = gen_workload(spec).workload;

  Engine engine(config, e.heads, e.kv_heads, e.head_dim, run.profiles);
  run.prefill = engine.prefill(w).ledger;

  Rng rng(derive_seed(e.seed, 1));
  std::vector<float> q(e.heads * e.head_dim), k(e.kv_heads * e.head_dim), v(e.kv_heads * e.head_dim);
  for (std::size_t step = 0; step < e.steps; ++step) {
    for (auto* buf : {&q, &k, &v}) {
      for (auto& x : *buf) x = static_cast<float>(rng.normal());
    }
    run.pages.push_back(engine.cache().head(0).page_count());
    DecodeOutput out = engine.decode_step({q, k, v});
    std::vector<std::uint64_t> visited(e.heads, 0);
    for (const auto& table : out.tables) visited[table.head] = table.logical_pages.size();
    run.visited.push_back(std::move(visited));
    run.decode += out.ledger;
    run.last_output = std::move(out.output);
  }
  return run;
}

std::uint64_t expected_decode_tiles(const HeadProfile& profile, std::int64_t pages,
                                    std::size_t budget_tokens, std::size_t physical_page) {
  const auto p = static_cast<std::uint64_t>(pages);
  if (profile.role == HeadRole::retrieval) {
    return std::min<std::uint64_t>(p, (budget_tokens + physical_page - 1) / physical_page);
  }
  return std::min<std::uint64_t>(p, profile.sink_blocks + profile.local_blocks);
}

std::uint64_t expected_prefill_tiles(const HeadProfile& profile, std::span<const std::int64_t> diagonals) {
  std::uint64_t total = 0;
  for (std::int64_t t : diagonals) {
    const auto tiles = static_cast<std::uint64_t>(t + 1);
    if (profile.role == HeadRole::retrieval || tiles <= profile.sink_blocks + profile.local_blocks) {
      total += tiles;
    } else {
      total += profile.sink_blocks + profile.local_blocks;
    }
  }
  return total;
}

}  // namespace hybrid_attn::harness
