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

#include "hybrid_attn/page_selector.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hybrid_attn {

double logical_page_score(std::span<const float> query, const PageStats& stats) {
  if (query.size() != stats.k_min.size() || query.size() != stats.k_max.size()) {
    throw std::invalid_argument("logical_page_score: dimension mismatch");
  }
  double score = 0.0;
  for (std::size_t i = 0; i < query.size(); ++i) {
    const double q = query[i];
    score += std::max(q * stats.k_max[i], q * stats.k_min[i]);
  }
  return score;
}

double physical_page_score(std::span<const float> query, const PhysicalPage& page) {
  if (page.stats.empty()) throw std::invalid_argument("physical_page_score: page has no key statistics");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& st : page.stats) best = std::max(best, logical_page_score(query, st));
  return best;
}

std::vector<double> page_scores(std::span<const std::span<const float>> queries,
                                const HeadPages& head) {
  if (queries.empty()) throw std::invalid_argument("page_scores: no queries");
  std::vector<double> scores(static_cast<std::size_t>(head.page_count()),
                             -std::numeric_limits<double>::infinity());
  for (const auto& page : head.pages()) {
    double& s = scores[static_cast<std::size_t>(page.ordinal)];
    for (const auto& q : queries) s = std::max(s, physical_page_score(q, page));
  }
  return scores;
}

std::vector<std::int64_t> pinned_pages(std::int64_t page_count, std::size_t k) {
  std::vector<std::int64_t> out;
  for (std::int64_t p : {page_count - 1, std::int64_t{0}, page_count - 2}) {
    if (out.size() == k) break;
    if (p < 0 || std::find(out.begin(), out.end(), p) != out.end()) continue;
    out.push_back(p);
  }
  return out;
}

RankedSelection rank_and_select(std::span<const std::span<const float>> queries,
                                const HeadPages& head, std::size_t budget_tokens) {
  const std::size_t page_size = head.table().page_size();
  if (budget_tokens < page_size) {
    throw std::invalid_argument("select_pages: budget of " + std::to_string(budget_tokens) +
                                " tokens is smaller than one page (" + std::to_string(page_size) +
                                ")");
  }
  if (head.kind() != PoolKind::dense) {
    throw std::invalid_argument("select_pages: streaming pool carries no key statistics");
  }
  const std::int64_t pages = head.page_count();
  const std::size_t k = (budget_tokens + page_size - 1) / page_size;

  RankedSelection out;
  const std::vector<std::int64_t> pinned = pinned_pages(pages, k);
  const std::vector<double> scores = page_scores(queries, head);
  for (std::int64_t p = 0; p < pages; ++p) {
    if (std::find(pinned.begin(), pinned.end(), p) == pinned.end()) out.ranked_picks.push_back(p);
  }
  std::stable_sort(out.ranked_picks.begin(), out.ranked_picks.end(),
                   [&](std::int64_t a, std::int64_t b) {
                     return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
                   });
  if (static_cast<std::int64_t>(k) >= pages) {
    out.pages.resize(static_cast<std::size_t>(pages));
    std::iota(out.pages.begin(), out.pages.end(), std::int64_t{0});
    return out;
  }
  out.pages = pinned;
  const std::size_t free_slots = k - pinned.size();
  out.ranked_picks.resize(free_slots);
  out.pages.insert(out.pages.end(), out.ranked_picks.begin(), out.ranked_picks.end());
  std::sort(out.pages.begin(), out.pages.end());
  return out;
}

std::vector<std::int64_t> select_pages(std::span<const std::span<const float>> queries,
                                       const HeadPages& head, std::size_t budget_tokens) {
  return rank_and_select(queries, head, budget_tokens).pages;
}

bool SelectionState::valid_for(std::int64_t step, std::size_t budget, std::size_t interval) const {
  return selected_pages && budget == budget_tokens && interval == reuse_interval &&
         step >= chunk_start_step && step < chunk_start_step + static_cast<std::int64_t>(interval);
}

ReuseOutcome reusable_select(const std::optional<SelectionState>& state, std::int64_t step,
                             std::span<const std::span<const float>> queries, const HeadPages& head,
                             std::size_t budget_tokens, std::size_t reuse_interval) {
  if (reuse_interval == 0) throw std::invalid_argument("reusable_select: reuse interval must be >= 1");
  if (step < 0) throw std::invalid_argument("reusable_select: negative decode step");
  if (state && state->valid_for(step, budget_tokens, reuse_interval)) {
    return {state->selected_pages, *state, false};
  }
  RankedSelection ranked = rank_and_select(queries, head, budget_tokens);
  SelectionState fresh;
  fresh.selected_pages = std::make_shared<const std::vector<std::int64_t>>(std::move(ranked.pages));
  fresh.ranked_picks = std::move(ranked.ranked_picks);
  fresh.page_count = head.page_count();
  fresh.chunk_start_step = step - step % static_cast<std::int64_t>(reuse_interval);
  fresh.reuse_interval = reuse_interval;
  fresh.budget_tokens = budget_tokens;
  return {fresh.selected_pages, fresh, true};
}

std::vector<std::int64_t> refresh_pages(const SelectionState& state, std::int64_t page_count,
                                        std::size_t page_size) {
  if (!state.selected_pages) throw std::invalid_argument("refresh_pages: empty selection state");
  if (page_count == state.page_count) return *state.selected_pages;
  const std::size_t k = (state.budget_tokens + page_size - 1) / page_size;
  std::vector<std::int64_t> out;
  if (static_cast<std::int64_t>(k) >= page_count) {
    out.resize(static_cast<std::size_t>(page_count));
    std::iota(out.begin(), out.end(), std::int64_t{0});
    return out;
  }
  out = pinned_pages(page_count, k);
  for (std::int64_t p : state.ranked_picks) {
    if (out.size() == k) break;
    if (p < page_count && std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace hybrid_attn
