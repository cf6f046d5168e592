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
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hybrid_attn/kv_store.h"

namespace hybrid_attn {

// Upper bound on q.k for any key inside the logical page's channel box:
// sum_i max(q[i] * k_max[i], q[i] * k_min[i]).
double logical_page_score(std::span<const float> query, const PageStats& stats);

// Max over the logical pages a physical page contains.
double physical_page_score(std::span<const float> query, const PhysicalPage& page);

// Physical-page scores of a dense head indexed by page ordinal, reduced by
// max over the query heads sharing the KV head.
std::vector<double> page_scores(std::span<const std::span<const float>> queries,
                                const HeadPages& head);

// Pages that are always selected for a sequence of `page_count` pages, in
// priority order (last page, first page, second to last), truncated to k.
std::vector<std::int64_t> pinned_pages(std::int64_t page_count, std::size_t k);

// Top-K page selection with K = ceil(budget / N_P). Pinned pages count against
// the budget; the remaining slots go to the highest scores, ties to the lower
// ordinal. Returns ordinals ascending. Throws std::invalid_argument when the
// budget is smaller than one page or the head has no key statistics.
std::vector<std::int64_t> select_pages(std::span<const std::span<const float>> queries,
                                       const HeadPages& head, std::size_t budget_tokens);

struct RankedSelection {
  std::vector<std::int64_t> pages;         // what select_pages returns
  std::vector<std::int64_t> ranked_picks;  // non-pinned pages, best score first
};

RankedSelection rank_and_select(std::span<const std::span<const float>> queries,
                                const HeadPages& head, std::size_t budget_tokens);

using PageList = std::shared_ptr<const std::vector<std::int64_t>>;

struct SelectionState {
  PageList selected_pages;
  std::vector<std::int64_t> ranked_picks;
  std::int64_t page_count = 0;  // sequence length in pages when selected
  std::int64_t chunk_start_step = 0;
  std::size_t reuse_interval = 1;
  std::size_t budget_tokens = 0;

  bool valid_for(std::int64_t step, std::size_t budget, std::size_t interval) const;
};

struct ReuseOutcome {
  PageList pages;
  SelectionState state;
  bool invoked = false;
};

// Reuses the cached selection inside its chunk of `reuse_interval` decode
// steps; otherwise reselects. Chunks are aligned to absolute step indices
// (a fresh chunk starts at step - step % C).
ReuseOutcome reusable_select(const std::optional<SelectionState>& state, std::int64_t step,
                             std::span<const std::span<const float>> queries, const HeadPages& head,
                             std::size_t budget_tokens, std::size_t reuse_interval);

// Pages to visit at a step inside the state's chunk once the sequence has
// grown to `page_count` pages: pinned pages for the current length, then the
// chunk's ranked picks, capped at K. Equals *state.selected_pages while the
// page count is unchanged.
std::vector<std::int64_t> refresh_pages(const SelectionState& state, std::int64_t page_count,
                                        std::size_t page_size);

}  // namespace hybrid_attn
