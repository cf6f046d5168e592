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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hybrid_attn/engine.h"
#include "hybrid_attn/harness/workload_gen.h"

namespace hybrid_attn::harness {

// Building blocks shared by the verify checks and the sweeps. Every metric
// they produce comes with a brute-force counterpart computed here from raw
// workload tensors, without going through the page statistics.

struct PageGeometry {
  std::size_t physical_page = 64;
  std::size_t logical_page = 16;
};

// Dense single-head cache over KV head `kv_head` of w, fp32 features.
TwoWayCache build_dense_cache(const Workload& w, std::size_t kv_head, PageGeometry geometry);

// probe . k_j for every history token, in double.
std::vector<double> exact_scores(std::span<const float> probe, const StridedRows& keys);

// Exact-score top-K: the same pinned pages as the selector, then pages ranked
// by their best exact token score (ties to the lower page). Ascending.
std::vector<std::int64_t> oracle_top_pages(std::span<const double> scores, std::size_t page_size,
                                           std::size_t k);

// Fraction of `positions` whose page (position / page_size) is in `pages`.
double token_recall(std::span<const std::int64_t> positions, std::span<const std::int64_t> pages,
                    std::size_t page_size);

// Mean selected-page recall of the needles over `trials` workloads derived
// from `base` (seed varied per trial), for every (geometry, budget) pair.
struct RecallTable {
  std::size_t trials = 0;
  std::vector<std::vector<double>> recall;  // [geometry][budget]
  std::vector<std::vector<double>> oracle;  // exact-score top-K recall
};

RecallTable measure_recall(const WorkloadSpec& base, std::size_t trials,
                           std::span<const PageGeometry> geometries,
                           std::span<const std::size_t> budgets);

// Prefill (one query) followed by `steps` decode steps on random tensors.
struct DecodeExperiment {
  std::size_t history = 4096;
  std::size_t heads = 4;
  std::size_t kv_heads = 2;
  std::size_t head_dim = 32;
  std::size_t steps = 4;
  std::vector<double> gates;  // one per head
  std::uint64_t seed = 0;
};

struct DecodeRun {
  std::vector<HeadProfile> profiles;
  std::vector<PoolKind> pools;
  CostLedger prefill;
  CostLedger decode;
  std::vector<std::vector<std::uint64_t>> visited;  // [step][head]
  std::vector<std::int64_t> pages;                  // page count seen at each step
  std::vector<float> last_output;
};

DecodeRun run_decode(const EngineConfig& config, const DecodeExperiment& experiment);

// Tiles one decode step visits for a head when the history spans `pages`.
std::uint64_t expected_decode_tiles(const HeadProfile& profile, std::int64_t pages,
                                    std::size_t budget_tokens, std::size_t physical_page);

// Tiles a streaming head visits at prefill over query tiles with the given
// diagonals; dense heads visit diagonal + 1.
std::uint64_t expected_prefill_tiles(const HeadProfile& profile, std::span<const std::int64_t> diagonals);

}  // namespace hybrid_attn::harness
