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

#include "hybrid_attn/harness/checks.h"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "hybrid_attn/attn_core.h"
#include "hybrid_attn/harness/experiments.h"
#include "hybrid_attn/harness/workload_gen.h"
#include "hybrid_attn/kv_store.h"
#include "hybrid_attn/page_selector.h"
#include "hybrid_attn/parallel.h"
#include "hybrid_attn/rng.h"
#include "hybrid_attn/static_sparsity.h"

namespace hybrid_attn::harness {

namespace {

std::string echo(const EngineConfig& c, const std::string& extra = {}) {
  return extra.empty() ? config_echo(c) : config_echo(c) + ";" + extra;
}

ResultRow at_least(std::string experiment, std::string config, std::string metric, double value,
                   double floor) {
  return {std::move(experiment), std::move(config), std::move(metric), value, floor, value >= floor};
}

ResultRow at_most(std::string experiment, std::string config, std::string metric, double value,
                  double ceiling) {
  return {std::move(experiment), std::move(config), std::move(metric), value, ceiling, value <= ceiling};
}

Workload random_tensors(std::size_t n, std::size_t s, std::size_t h, std::size_t hkv, std::size_t d,
                        std::uint64_t seed) {
  WorkloadSpec spec;
  spec.history = s;
  spec.queries = n;
  spec.heads = h;
  spec.kv_heads = hkv;
  spec.head_dim = d;
  spec.haystack_scale = 1.0;
  spec.seed = seed;
  return gen_workload(spec).workload;
}

std::uint64_t stream_seed(const EngineConfig& c, std::uint64_t check) {
  return derive_seed(c.seed, check);
}

}  // namespace

std::vector<ResultRow> check_worked_speedup(const EngineConfig& config) {
  const std::string exp = "c01_worked_speedup";
  // Six query tiles of four tokens; the schedule below is the block layout
  // of the worked example: 10 of the 21 causal tiles are visited.
  const std::map<std::int64_t, BlockSchedule> layout = {
      {0, {0}}, {1, {0, 1}}, {2, {0, 2}}, {3, {3}}, {4, {0, 4}}, {5, {0, 5}}};
  const Workload w = random_tensors(24, 24, 1, 1, 8, stream_seed(config, 1));
  const auto result = blockwise_attention<double>(
      w, [&](std::size_t, std::int64_t qt) { return layout.at(qt); }, {4, 4});
  const TileCount tiles = result.ledger.stage_total(Stage::prefill);
  const std::string cfg = "S=24;N=24;T_Q=4;T_K=4";
  return {within(exp, cfg, "visited_tiles", static_cast<double>(tiles.visited), 10, 0),
          within(exp, cfg, "total_tiles", static_cast<double>(tiles.total), 21, 0),
          within(exp, cfg, "speedup", tiles.speedup(), 2.1, 0)};
}

std::vector<ResultRow> check_speedup_law(const EngineConfig& config) {
  const std::string exp = "c02_speedup_law";
  struct Shape {
    std::size_t queries, history;
  };
  const Shape shapes[] = {{4096, 4096}, {1, 65536}};
  const double ratios[] = {0.25, 0.5, 0.75, 0.9};
  const std::size_t heads = 2, d = 16;
  const TileConfig tiles{64, 64};
  std::vector<ResultRow> rows;
  std::uint64_t case_index = 0;
  for (const Shape& shape : shapes) {
    const Workload w = random_tensors(shape.queries, shape.history, heads, 1, d,
                                      stream_seed(config, 2 + case_index));
    const TileGrid grid(shape.queries, shape.history, tiles, true);
    for (double r : ratios) {
      Rng rng(derive_seed(stream_seed(config, 2), case_index++));
      // Keep round((1 - r) * total) tiles per head: every diagonal tile plus
      // a uniformly random subset of the off-diagonal ones.
      std::vector<std::map<std::int64_t, BlockSchedule>> schedules(heads);
      std::vector<double> ideal(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<std::pair<std::int64_t, std::int64_t>> off;
        std::int64_t total = 0;
        for (std::int64_t qt = grid.first_query_tile(); qt <= grid.last_query_tile(); ++qt) {
          total += grid.total_tiles(qt);
          schedules[h][qt].push_back(grid.diagonal(qt));
          for (std::int64_t kt = 0; kt < grid.diagonal(qt); ++kt) off.emplace_back(qt, kt);
        }
        ideal[h] = (1.0 - r) * static_cast<double>(total);
        const auto keep_total = static_cast<std::int64_t>(std::llround(ideal[h]));
        const std::int64_t keep = std::max<std::int64_t>(0, keep_total - grid.query_tile_count());
        for (std::size_t i = 0; i < static_cast<std::size_t>(keep); ++i) {
          const std::size_t j = i + static_cast<std::size_t>(rng.below(off.size() - i));
          std::swap(off[i], off[j]);
          schedules[h][off[i].first].push_back(off[i].second);
        }
        for (auto& [qt, s] : schedules[h]) std::sort(s.begin(), s.end());
      }
      const auto result = blockwise_attention<float>(
          w, [&](std::size_t h, std::int64_t qt) { return schedules[h].at(qt); }, tiles);
      double worst = 0.0;
      for (std::size_t h = 0; h < heads; ++h) {
        const TileCount c = result.ledger.head(Stage::prefill, h);
        worst = std::max(worst, std::abs(static_cast<double>(c.visited) - ideal[h]));
      }
      const TileCount all = result.ledger.stage_total(Stage::prefill);
      const double exact = 1.0 / (1.0 - r);
      const double ideal_visited = (1.0 - r) * static_cast<double>(all.total);
      // One tile of rounding per head, expressed in speedup units.
      const double tol = static_cast<double>(all.total) / (ideal_visited - heads) -
                         static_cast<double>(all.total) / ideal_visited;
      std::ostringstream cfg;
      cfg << "N=" << shape.queries << ";S=" << shape.history << ";H=" << heads << ";r=" << format_number(r);
      rows.push_back(within(exp, cfg.str(), "speedup", all.speedup(), exact, tol));
      rows.push_back(at_most(exp, cfg.str(), "max_head_tile_rounding", worst, 1.0));
    }
  }
  return rows;
}

std::vector<ResultRow> check_dense_equivalence(const EngineConfig& config) {
  const std::string exp = "c03_dense_equivalence";
  const std::size_t workloads = 100;
  const std::size_t max_work = std::size_t{1} << 24;  // N * S * H * D per case
  const TileConfig tiles{config.tile_q_prefill, config.physical_page};
  Rng rng(stream_seed(config, 3));
  double err32 = 0.0, err64 = 0.0;
  for (std::size_t i = 0; i < workloads; ++i) {
    std::size_t n, s, h, hkv, d;
    if (i == 0) {
      n = 128, s = 8192, h = 1, hkv = 1, d = 16;
    } else if (i == 1) {
      n = 1, s = 1, h = 2, hkv = 1, d = 8;
    } else {
      do {
        n = 1 + rng.below(128);
        s = n + rng.below(8192 - n + 1);
        h = std::size_t{1} << rng.below(3);
        hkv = std::size_t{1} << rng.below(std::countr_zero(h) + 1);
        d = std::size_t{8} << rng.below(4);
      } while (n * s * h * d > max_work);
    }
    const Workload w = random_tensors(n, s, h, hkv, d, derive_seed(stream_seed(config, 3), i + 1));
    const Tensor3<double> ref = reference_attention(w);
    auto full = [&](const TileGrid& grid) {
      return [&grid](std::size_t, std::int64_t qt) { return full_schedule(grid, qt); };
    };
    const TileGrid grid(n, s, tiles, true);
    const auto out32 = blockwise_attention<float>(w, full(grid), tiles);
    const auto out64 = blockwise_attention<double>(w, full(grid), tiles);
    err32 = std::max(err32, relative_error(out32.output.data(), ref.data()));
    err64 = std::max(err64, relative_error(out64.output.data(), ref.data()));
  }
  const std::string cfg = echo(config, "N<=128;S<=8192");
  return {at_least(exp, cfg, "workloads", static_cast<double>(workloads), 100),
          at_most(exp, cfg, "max_rel_err_fp32", err32, 1e-5),
          at_most(exp, cfg, "max_rel_err_fp64", err64, 1e-10)};
}

std::vector<ResultRow> check_score_soundness(const EngineConfig& config) {
  const std::string exp = "c04_score_soundness";
  const std::size_t d = 32, target = 1'000'000;
  const std::size_t np = config.physical_page, nl = config.logical_page;
  Rng rng(stream_seed(config, 4));
  std::size_t triples = 0, violations = 0;
  double min_slack = INFINITY;
  for (std::uint64_t trial = 0; triples < target; ++trial) {
    const std::size_t s = 4096 + rng.below(nl);  // last logical page usually partial
    Workload w = random_tensors(1, s, 1, 1, d, derive_seed(stream_seed(config, 4), trial));
    // Per-channel offsets and scales, plus sparse outliers.
    std::vector<double> mu(d), sd(d);
    for (std::size_t c = 0; c < d; ++c) {
      mu[c] = rng.normal(0.0, 2.0);
      sd[c] = std::exp(rng.uniform(-4.0, 2.0));
    }
    for (std::size_t j = 0; j < s; ++j) {
      auto k = w.k.row(j, 0);
      for (std::size_t c = 0; c < d; ++c) {
        k[c] = rng.uniform() < 0.02 ? static_cast<float>(rng.uniform(-50.0, 50.0))
                                    : static_cast<float>(mu[c] + sd[c] * k[c]);
      }
    }
    const TwoWayCache cache = build_dense_cache(w, 0, {np, nl});
    std::vector<float> q(d);
    for (const PhysicalPage& page : cache.head(0).pages()) {
      for (std::size_t l = 0; l < page.stats.size(); ++l) {
        const double qscale = std::exp(rng.uniform(-3.0, 3.0));
        for (auto& x : q) x = rng.uniform() < 0.1 ? 0.0f : static_cast<float>(qscale * rng.normal());
        const double bound = logical_page_score(q, page.stats[l]);
        const auto first = static_cast<std::size_t>(page.first_position) + l * nl;
        for (std::size_t i = 0; i < page.stats[l].covered_tokens; ++i) {
          const auto k = w.k.row(first + i, 0);
          double exact = 0.0;
          for (std::size_t c = 0; c < d; ++c) exact += static_cast<double>(q[c]) * k[c];
          if (!(bound >= exact)) ++violations;
          min_slack = std::min(min_slack, bound - exact);
          ++triples;
        }
      }
    }
  }
  const std::string cfg = echo(config, "D=32");
  return {at_least(exp, cfg, "triples", static_cast<double>(triples), static_cast<double>(target)),
          within(exp, cfg, "violations", static_cast<double>(violations), 0, 0),
          at_least(exp, cfg, "min_bound_minus_exact", min_slack, 0.0)};
}

std::vector<ResultRow> check_constant_decode_cost(const EngineConfig& config) {
  const std::string exp = "c05_constant_decode_cost";
  const std::size_t lengths[] = {1, 100, 1000, 16384, 32768, 65536};
  std::vector<ResultRow> rows;
  for (std::size_t s : lengths) {
    DecodeExperiment e;
    e.history = s;
    e.heads = 4;
    e.kv_heads = 2;
    e.head_dim = 32;
    e.steps = 4;
    e.gates = {0.9, 0.8, 0.2, 0.1};
    e.seed = derive_seed(stream_seed(config, 5), s);
    const DecodeRun run = run_decode(config, e);
    std::uint64_t worst_dense_gap = 0, dense_max = 0, stream_max = 0, stream_expected = 0,
                  dense_expected = 0;
    bool have_dense = false, have_stream = false;
    for (std::size_t step = 0; step < run.visited.size(); ++step) {
      for (std::size_t h = 0; h < e.heads; ++h) {
        const std::uint64_t got = run.visited[step][h];
        const std::uint64_t want = expected_decode_tiles(run.profiles[h], run.pages[step],
                                                         config.budget_tokens, config.physical_page);
        if (run.profiles[h].role == HeadRole::retrieval) {
          have_dense = true;
          dense_max = std::max(dense_max, got);
          dense_expected = std::max(dense_expected, want);
          worst_dense_gap = std::max(worst_dense_gap, got > want ? got - want : want - got);
        } else {
          have_stream = true;
          stream_max = std::max(stream_max, got);
          stream_expected = std::max(stream_expected, want);
        }
      }
    }
    const std::string cfg = echo(config, "S=" + std::to_string(s) + ";steps=4");
    if (have_dense) {
      rows.push_back(within(exp, cfg, "dense_tiles_per_step", static_cast<double>(dense_max),
                            static_cast<double>(dense_expected), 0));
      rows.push_back(within(exp, cfg, "dense_tiles_step_spread", static_cast<double>(worst_dense_gap), 0, 0));
    }
    if (have_stream) {
      rows.push_back(within(exp, cfg, "streaming_tiles_per_step", static_cast<double>(stream_max),
                            static_cast<double>(stream_expected), 0));
      rows.push_back(at_most(exp, cfg, "streaming_tiles_bound", static_cast<double>(stream_max),
                             static_cast<double>(config.sink_blocks + config.local_blocks)));
    }
  }
  return rows;
}

std::vector<ResultRow> check_needle_recall(const EngineConfig& config) {
  const std::string exp = "c06_needle_recall";
  const std::size_t trials = 10'000;
  const std::size_t np = config.physical_page, nl = config.logical_page;
  WorkloadSpec base;
  base.kind = WorkloadKind::needle;
  base.history = 32 * np;
  base.heads = 1;
  base.kv_heads = 1;
  base.head_dim = 16;
  base.needle_margin = 0.5;
  base.haystack_scale = 0.25;
  base.physical_page = np;
  base.logical_page = nl;
  base.seed = stream_seed(config, 6);
  const std::size_t budget = 8 * np;  // a quarter of the sequence
  const std::size_t k = budget / np;

  std::vector<double> recall(trials), oracle(trials), excess(trials);
  std::vector<char> agree(trials);
  parallel_for(trials, [&](std::size_t t) {
    WorkloadSpec spec = base;
    spec.seed = derive_seed(base.seed, t);
    const GeneratedWorkload g = gen_workload(spec);
    const NeedleTruth& truth = g.truth.front();
    const auto probe = g.workload.q.row(0, truth.probe_head);
    const TwoWayCache cache = build_dense_cache(g.workload, 0, {np, nl});
    const std::span<const float> queries[] = {probe};
    const auto selected = select_pages(queries, cache.head(0), budget);
    const auto scores = exact_scores(probe, g.workload.keys(0));
    const auto top = oracle_top_pages(scores, np, k);
    recall[t] = token_recall(truth.positions, selected, np);
    oracle[t] = token_recall(truth.positions, top, np);
    agree[t] = recall[t] == oracle[t];
    // Slack of the channel boxes: how far the best haystack box bound sits
    // above the best haystack token, in units of ||q||_1.
    double best_bound = -INFINITY;
    for (const PhysicalPage& page : cache.head(0).pages()) {
      for (std::size_t l = 0; l < page.stats.size(); ++l) {
        const auto first = page.first_position + static_cast<std::int64_t>(l * nl);
        const auto last = first + static_cast<std::int64_t>(page.stats[l].covered_tokens);
        const bool holds_needle = std::any_of(truth.positions.begin(), truth.positions.end(),
                                              [&](std::int64_t p) { return p >= first && p < last; });
        if (!holds_needle) best_bound = std::max(best_bound, logical_page_score(probe, page.stats[l]));
      }
    }
    excess[t] = spec.needle_margin - (best_bound - truth.best_haystack_score) / truth.q_l1;
  });
  double mean_recall = 0.0, mean_oracle = 0.0, agreement = 0.0, min_excess = INFINITY;
  for (std::size_t t = 0; t < trials; ++t) {
    mean_recall += recall[t];
    mean_oracle += oracle[t];
    agreement += agree[t];
    min_excess = std::min(min_excess, excess[t]);
  }
  mean_recall /= trials;
  mean_oracle /= trials;
  agreement /= trials;
  const std::string cfg = echo(config, "S=" + std::to_string(base.history) + ";D=16;B=" +
                                           std::to_string(budget) + ";margin=0.5");
  ResultRow recall_row{exp, cfg, "selected_page_recall", mean_recall, mean_oracle,
                       mean_recall == 1.0 && mean_oracle == 1.0};
  return {at_least(exp, cfg, "trials", static_cast<double>(trials), 10'000),
          recall_row,
          within(exp, cfg, "oracle_agreement", agreement, 1.0, 0),
          ResultRow{exp, cfg, "min_margin_minus_box_slack", min_excess, 0.0, min_excess > 0.0}};
}

std::vector<ResultRow> check_hierarchical_paging(const EngineConfig& config) {
  const std::string exp = "c07_hierarchical_paging";
  const std::size_t np = config.physical_page, nl = config.logical_page;
  WorkloadSpec base;
  base.kind = WorkloadKind::clustered_needles;
  base.history = 16384;
  base.heads = 1;
  base.kv_heads = 1;
  base.head_dim = 64;
  base.needle_count = std::min<std::size_t>(4, np / nl);
  base.cluster_span = 1;
  base.needle_margin = 0.4;
  base.haystack_scale = 0.1;
  base.spike_rate = 0.05;
  base.spike_magnitude = 1.0;
  base.physical_page = np;
  base.logical_page = nl;
  base.seed = stream_seed(config, 7);
  const PageGeometry geometries[] = {{np, nl}, {np, np}, {nl, nl}};
  std::vector<std::size_t> budgets;
  for (std::size_t b : {512, 1024, 2048, 4096}) {
    if (b >= np) budgets.push_back(b);
  }
  const std::size_t trials = 200;
  const RecallTable table = measure_recall(base, trials, geometries, budgets);
  std::vector<ResultRow> rows;
  for (std::size_t bi = 0; bi < budgets.size(); ++bi) {
    const std::string cfg = echo(config, "S=16384;D=64;needles=" + std::to_string(base.needle_count) +
                                             ";trials=200;budget=" + std::to_string(budgets[bi]));
    const double hier = table.recall[0][bi], coarse = table.recall[1][bi], fine = table.recall[2][bi];
    const char* names[] = {"recall_hierarchical", "recall_flat_coarse", "recall_flat_fine"};
    for (std::size_t gi = 0; gi < 3; ++gi) {
      const double r = table.recall[gi][bi], o = table.oracle[gi][bi];
      rows.push_back({exp, cfg, names[gi], r, o, r <= o + 1e-12});
    }
    rows.push_back(at_least(exp, cfg, "hierarchical_minus_flat_coarse", hier - coarse, 0.0));
    rows.push_back(within(exp, cfg, "hierarchical_minus_flat_fine", hier - fine, 0.0, 0.02));
  }
  return rows;
}

std::vector<ResultRow> check_reuse_accounting(const EngineConfig& config) {
  const std::string exp = "c08_reuse_accounting";
  std::vector<ResultRow> rows;
  for (std::size_t steps : {64, 50}) {
    for (std::size_t interval : {1, 2, 4, 8, 16}) {
      EngineConfig c = config;
      c.reuse_interval = interval;
      DecodeExperiment e;
      e.history = 4096;
      e.heads = 2;
      e.kv_heads = 1;
      e.head_dim = 16;
      e.steps = steps;
      e.gates = {0.9, 0.1};
      e.seed = derive_seed(stream_seed(config, 8), steps * 100 + interval);
      const DecodeRun run = run_decode(c, e);
      const std::string cfg = echo(c, "T=" + std::to_string(steps));
      const double invoked = static_cast<double>(run.decode.selector_invocations());
      const double expected = std::ceil(static_cast<double>(steps) / static_cast<double>(interval));
      rows.push_back(within(exp, cfg, "selector_invocations", invoked, expected, 0));
      rows.push_back(within(exp, cfg, "selector_requests", static_cast<double>(run.decode.selector_requests()),
                            static_cast<double>(steps), 0));
      if (interval == 4 && steps % 4 == 0) {
        rows.push_back(within(exp, cfg, "overhead_reduction", static_cast<double>(steps) / invoked, 4.0, 0));
      }
    }
  }
  return rows;
}

std::vector<ResultRow> check_quantization_bound(const EngineConfig& config) {
  const std::string exp = "c09_quantization_bound";
  const std::size_t pages = 100'000;
  std::vector<ResultRow> rows;
  for (int bits : {4, 8}) {
    Rng rng(derive_seed(stream_seed(config, 9), static_cast<std::uint64_t>(bits)));
    double worst_ratio = 0.0;
    std::size_t constant_pages = 0, constant_mismatch = 0;
    std::vector<float> raw;
    for (std::size_t p = 0; p < pages; ++p) {
      const std::size_t rows_n = 1 + rng.below(64), cols = 1 + rng.below(16);
      raw.resize(rows_n * cols);
      const bool constant = rng.uniform() < 0.1;
      for (std::size_t c = 0; c < cols; ++c) {
        const double magnitude = std::exp(rng.uniform(-7.0, 7.0));
        const double offset = rng.normal(0.0, magnitude);
        const bool flat = constant || rng.uniform() < 0.1;
        for (std::size_t r = 0; r < rows_n; ++r) {
          raw[r * cols + c] = static_cast<float>(flat ? offset : offset + magnitude * rng.uniform(-1.0, 1.0));
        }
      }
      const QuantizedTensor q = quantize_page(raw, rows_n, cols, bits);
      const std::vector<float> back = dequantize(q);
      if (constant) {
        ++constant_pages;
        if (back != raw) ++constant_mismatch;
        continue;
      }
      for (std::size_t i = 0; i < raw.size(); ++i) {
        const float big = std::max(std::abs(raw[i]), std::abs(back[i]));
        const double ulp = static_cast<double>(std::nextafter(big, INFINITY)) - big;
        const double bound = static_cast<double>(q.scale[i % cols]) / 2.0 + ulp;
        const double err = std::abs(static_cast<double>(raw[i]) - back[i]);
        worst_ratio = std::max(worst_ratio, err / bound);
      }
    }
    const std::string cfg = "bits=" + std::to_string(bits) + ";rows<=64;cols<=16";
    rows.push_back(at_least(exp, cfg, "pages", static_cast<double>(pages), 100'000));
    rows.push_back(at_most(exp, cfg, "max_error_over_bound", worst_ratio, 1.0));
    rows.push_back(at_least(exp, cfg, "constant_pages", static_cast<double>(constant_pages), 1));
    rows.push_back(within(exp, cfg, "constant_page_mismatches", static_cast<double>(constant_mismatch), 0, 0));
  }
  return rows;
}

std::vector<ResultRow> check_head_classification(const EngineConfig& config) {
  const std::string exp = "c10_head_classification";
  const std::size_t trials = 2000;
  Rng rng(stream_seed(config, 10));
  std::size_t count_mismatch = 0, partition_mismatch = 0;
  double median_distance = 0.0;
  const std::function<double(double)> transforms[] = {
      [](double x) { return x * x; },
      [](double x) { return std::sqrt(x); },
      [](double x) { return std::expm1(x) / std::expm1(1.0); },
      [](double x) { return 0.25 + 0.5 * x; },
      [](double x) { return x * x * x; },
  };
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = 1 + rng.below(64);
    const bool ties = rng.uniform() < 0.3;
    std::vector<double> gates(h);
    for (auto& g : gates) g = ties ? static_cast<double>(rng.below(9)) / 8.0 : rng.uniform();
    const HeadClassification c = classify_heads(gates, 0.5, config.geometry());
    std::size_t retrieval = 0;
    for (const auto& p : c.profiles) retrieval += p.role == HeadRole::retrieval;
    if (c.retrieval_heads != (h + 1) / 2 || retrieval != (h + 1) / 2) ++count_mismatch;

    std::vector<double> sorted = gates;
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted[(h - 1) / 2], hi = sorted[h / 2];
    median_distance = std::max(median_distance, std::max({0.0, lo - c.threshold, c.threshold - hi}));

    for (const auto& f : transforms) {
      std::vector<double> mapped(h);
      std::transform(gates.begin(), gates.end(), mapped.begin(), f);
      const HeadClassification m = classify_heads(mapped, 0.5, config.geometry());
      for (std::size_t i = 0; i < h; ++i) {
        if (m.profiles[i].role != c.profiles[i].role) {
          ++partition_mismatch;
          break;
        }
      }
    }
  }
  const std::string cfg = "s=0.5;H<=64;trials=" + std::to_string(trials);
  return {within(exp, cfg, "retrieval_count_mismatches", static_cast<double>(count_mismatch), 0, 0),
          within(exp, cfg, "threshold_distance_from_median", median_distance, 0, 0),
          within(exp, cfg, "transform_partition_mismatches", static_cast<double>(partition_mismatch), 0, 0)};
}

std::vector<ResultRow> check_determinism(const EngineConfig& config) {
  const std::string exp = "c11_determinism";
  DecodeExperiment e;
  e.history = 3000;
  e.heads = 4;
  e.kv_heads = 2;
  e.head_dim = 32;
  e.steps = 8;
  e.gates = {0.7, 0.2, 0.9, 0.4};
  e.seed = stream_seed(config, 11);
  const DecodeRun a = run_decode(config, e), b = run_decode(config, e);
  WorkloadSpec spec;
  spec.kind = WorkloadKind::clustered_needles;
  spec.history = 2048;
  spec.head_dim = 32;
  spec.needle_count = 2;
  spec.seed = e.seed;
  const GeneratedWorkload ga = gen_workload(spec), gb = gen_workload(spec);
  const bool same_workload = ga.workload.q == gb.workload.q && ga.workload.k == gb.workload.k &&
                             ga.workload.v == gb.workload.v && ga.truth.front().positions == gb.truth.front().positions;
  const std::string cfg = echo(config, "S=3000;steps=8");
  return {within(exp, cfg, "decode_output_mismatch", a.last_output == b.last_output ? 0 : 1, 0, 0),
          within(exp, cfg, "ledger_mismatch", a.decode == b.decode && a.prefill == b.prefill ? 0 : 1, 0, 0),
          within(exp, cfg, "workload_mismatch", same_workload ? 0 : 1, 0, 0)};
}

const std::vector<Check>& verify_checks() {
  static const std::vector<Check> checks = {
      {1, "c01_worked_speedup", "worked speedup example", 1, check_worked_speedup},
      {2, "c02_speedup_law", "speedup law", 30, check_speedup_law},
      {3, "c03_dense_equivalence", "dense equivalence", 60, check_dense_equivalence},
      {4, "c04_score_soundness", "page score soundness", 30, check_score_soundness},
      {5, "c05_constant_decode_cost", "constant decode cost", 60, check_constant_decode_cost},
      {6, "c06_needle_recall", "needle recall", 60, check_needle_recall},
      {7, "c07_hierarchical_paging", "hierarchical paging benefit", 120, check_hierarchical_paging},
      {8, "c08_reuse_accounting", "reuse accounting", 10, check_reuse_accounting},
      {9, "c09_quantization_bound", "quantization bound", 30, check_quantization_bound},
      {10, "c10_head_classification", "head classification", 5, check_head_classification},
      {11, "c11_determinism", "determinism", 30, check_determinism},
  };
  return checks;
}

VerifyReport run_verify(const EngineConfig& config, std::ostream* log) {
  config.validate();
  VerifyReport report;
  report.pass = true;
  for (const Check& check : verify_checks()) {
    const auto start = std::chrono::steady_clock::now();
    CheckOutcome outcome;
    outcome.check = &check;
    outcome.rows = check.run(config);
    outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    outcome.pass = all_pass(outcome.rows);
    report.pass = report.pass && outcome.pass;
    if (log) {
      *log << (outcome.pass ? "PASS " : "FAIL ") << check.experiment << " (" << check.title << ") "
           << outcome.seconds << " s\n";
      for (const auto& r : outcome.rows) {
        if (!r.pass) *log << "  failed: " << r.metric << " [" << r.config << "] value=" << format_number(r.value)
                          << " oracle=" << format_number(r.oracle) << '\n';
      }
      log->flush();
    }
    report.rows.insert(report.rows.end(), outcome.rows.begin(), outcome.rows.end());
    report.checks.push_back(std::move(outcome));
  }
  return report;
}

}  // namespace hybrid_attn::harness
