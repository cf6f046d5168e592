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

#include "hybrid_attn/engine.h"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace hybrid_attn {

std::vector<PoolKind> pool_assignment(std::span<const HeadProfile> profiles, std::size_t kv_heads) {
  if (kv_heads == 0 || profiles.size() % kv_heads != 0) {
    throw std::invalid_argument("pool_assignment: heads not a multiple of KV heads");
  }
  const std::size_t group = profiles.size() / kv_heads;
  std::vector<PoolKind> pools(kv_heads, PoolKind::streaming);
  for (std::size_t h = 0; h < profiles.size(); ++h) {
    if (profiles[h].role == HeadRole::retrieval) pools[h / group] = PoolKind::dense;
  }
  return pools;
}

Engine::Engine(EngineConfig config, std::size_t heads, std::size_t kv_heads, std::size_t head_dim,
               std::vector<HeadProfile> profiles)
    : config_((config.validate(), config)), heads_(heads), kv_heads_(kv_heads), head_dim_(head_dim),
      profiles_(std::move(profiles)),
      cache_(config_.cache_config(), head_dim, pool_assignment(profiles_, kv_heads)),
      selections_(kv_heads) {
  if (profiles_.size() != heads) throw std::invalid_argument("Engine: one profile per query head required");
}

BlockSchedule Engine::prefill_schedule(const TileGrid& grid, std::size_t head,
                                       std::int64_t query_tile) const {
  const HeadProfile& profile = profiles_.at(head);
  if (profile.role == HeadRole::retrieval) return full_schedule(grid, query_tile);
  return iterate(streaming_schedule(grid.kv_tiles(), profile, grid.diagonal(query_tile)));
}

PrefillOutput Engine::prefill(const Workload& w) {
  w.validate();
  if (w.heads() != heads_ || w.kv_heads() != kv_heads_ || w.head_dim() != head_dim_) {
    throw std::invalid_argument("prefill: workload shape does not match the engine");
  }
  if (cache_.head(0).tokens() != 0) throw std::logic_error("prefill: cache already holds tokens");

  const TileConfig tiles{config_.tile_q_prefill, config_.physical_page};
  const TileGrid grid(w.queries(), w.history(), tiles, true);
  auto result = blockwise_attention<float>(
      w, [&](std::size_t head, std::int64_t qt) { return prefill_schedule(grid, head, qt); }, tiles,
      true, Stage::prefill);
  for (std::size_t kv = 0; kv < kv_heads_; ++kv) cache_.append_tokens(kv, w.keys(kv), w.values(kv));
  ledger_ += result.ledger;
  return {std::move(result.output), std::move(result.ledger)};
}

DecodeOutput Engine::decode_step(const DecodeToken& token) {
  if (token.q.size() != heads_ * head_dim_ || token.k.size() != kv_heads_ * head_dim_ ||
      token.v.size() != kv_heads_ * head_dim_) {
    throw std::invalid_argument("decode_step: token shape does not match the engine");
  }
  const std::int64_t history = cache_.head(0).tokens();
  if (history == 0) throw std::logic_error("decode_step: cache is empty");
  const std::int64_t pages = cache_.head(0).page_count();
  const std::size_t group = heads_ / kv_heads_;
  const auto d = head_dim_;

  DecodeOutput out;
  out.output.assign(heads_ * d, 0.0f);

  // Dense KV heads: one selection per group from the retrieval heads' queries.
  std::vector<std::vector<std::int64_t>> dense_pages(kv_heads_);
  for (std::size_t kv = 0; kv < kv_heads_; ++kv) {
    if (cache_.pool_of(kv) != PoolKind::dense) continue;
    std::vector<std::span<const float>> queries;
    for (std::size_t h = kv * group; h < (kv + 1) * group; ++h) {
      if (profiles_[h].role == HeadRole::retrieval) queries.push_back(token.q.subspan(h * d, d));
    }
    const auto outcome = reusable_select(selections_[kv], step_, queries, cache_.head(kv),
                                         config_.budget_tokens, config_.reuse_interval);
    out.ledger.record_selector(outcome.invoked);
    selections_[kv] = outcome.state;
    dense_pages[kv] = refresh_pages(outcome.state, pages, config_.physical_page);
  }

  for (std::size_t kv = 0; kv < kv_heads_; ++kv) {
    const HeadPages& head_pages = cache_.head(kv);
    const auto new_k = token.k.subspan(kv * d, d);
    const auto new_v = token.v.subspan(kv * d, d);
    // Dequantized once per step and KV head; dropped when the step ends.
    std::map<std::int64_t, DequantizedPage> staged;
    auto staged_page = [&](std::int64_t ordinal) -> const DequantizedPage& {
      auto it = staged.find(ordinal);
      if (it != staged.end()) return it->second;
      DequantizedPage page = dequantize_page(head_pages.page(ordinal));
      if (ordinal == pages - 1) {
        // The current token joins the diagonal tile in-register.
        page.keys.insert(page.keys.end(), new_k.begin(), new_k.end());
        page.values.insert(page.values.end(), new_v.begin(), new_v.end());
        page.rows += 1;
        page.cols = d;
      }
      return staged.emplace(ordinal, std::move(page)).first->second;
    };

    for (std::size_t h = kv * group; h < (kv + 1) * group; ++h) {
      IndexTable table{h, {}};
      if (profiles_[h].role == HeadRole::streaming) {
        table.logical_pages = iterate(streaming_schedule(pages, profiles_[h], pages - 1));
      } else {
        table.logical_pages = dense_pages[kv];
      }
      if (table.logical_pages.empty() || table.logical_pages.back() != pages - 1) {
        throw std::logic_error("decode_step: index table misses the diagonal page");
      }
      std::vector<KvBlock> blocks;
      blocks.reserve(table.logical_pages.size());
      for (std::int64_t ordinal : table.logical_pages) {
        const DequantizedPage& page = staged_page(ordinal);
        blocks.push_back({{page.keys, page.rows, d, d}, {page.values, page.rows, d, d}});
      }
      const auto row = attend_row<float>(token.q.subspan(h * d, d), blocks);
      std::copy(row.begin(), row.end(), out.output.begin() + static_cast<std::ptrdiff_t>(h * d));
      out.ledger.record(Stage::decode, h, table.logical_pages.size(), static_cast<std::uint64_t>(pages));
      out.tables.push_back(std::move(table));
    }
  }

  for (std::size_t kv = 0; kv < kv_heads_; ++kv) {
    cache_.append_tokens(kv, token.k.subspan(kv * d, d), token.v.subspan(kv * d, d));
  }
  ++step_;
  ledger_ += out.ledger;
  return out;
}

}  // namespace hybrid_attn
