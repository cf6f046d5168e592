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
#include <optional>
#include <span>
#include <vector>

#include "hybrid_attn/attn_core.h"
#include "hybrid_attn/cost_ledger.h"
#include "hybrid_attn/engine_config.h"
#include "hybrid_attn/kv_store.h"
#include "hybrid_attn/page_selector.h"
#include "hybrid_attn/static_sparsity.h"

namespace hybrid_attn {

// Physical iteration step -> logical page ordinal for one query head.
struct IndexTable {
  std::size_t head = 0;
  std::vector<std::int64_t> logical_pages;  // strictly increasing
};

struct PrefillOutput {
  Tensor3<float> output;  // [N][H][D]
  CostLedger ledger;
};

struct DecodeToken {
  std::span<const float> q;  // [H][D]
  std::span<const float> k;  // [Hkv][D]
  std::span<const float> v;  // [Hkv][D]
};

struct DecodeOutput {
  std::vector<float> output;  // [H][D]
  std::vector<IndexTable> tables;
  CostLedger ledger;
};

// KV head pool membership: dense if any query head of its group is a
// retrieval head, streaming otherwise.
std::vector<PoolKind> pool_assignment(std::span<const HeadProfile> profiles, std::size_t kv_heads);

// One sequence: prefill once, then decode token by token. Retrieval heads run
// dense schedules at prefill and reusable top-K page selection at decode;
// streaming heads run sink + local schedules in both stages.
class Engine {
 public:
  Engine(EngineConfig config, std::size_t heads, std::size_t kv_heads, std::size_t head_dim,
         std::vector<HeadProfile> profiles);

  // Requires an empty cache; appends all S tokens afterwards.
  PrefillOutput prefill(const Workload& w);

  // Attends to the selected history pages plus the token itself, then
  // appends the token's K/V.
  DecodeOutput decode_step(const DecodeToken& token);

  const EngineConfig& config() const { return config_; }
  const std::vector<HeadProfile>& profiles() const { return profiles_; }
  const TwoWayCache& cache() const { return cache_; }
  const CostLedger& ledger() const { return ledger_; }
  std::int64_t decode_steps() const { return step_; }
  const std::optional<SelectionState>& selection(std::size_t kv_head) const {
    return selections_.at(kv_head);
  }

  // Schedule used for one query head at prefill.
  BlockSchedule prefill_schedule(const TileGrid& grid, std::size_t head, std::int64_t query_tile) const;

 private:
  EngineConfig config_;
  std::size_t heads_;
  std::size_t kv_heads_;
  std::size_t head_dim_;
  std::vector<HeadProfile> profiles_;
  TwoWayCache cache_;
  std::vector<std::optional<SelectionState>> selections_;
  CostLedger ledger_;
  std::int64_t step_ = 0;
};

}  // namespace hybrid_attn
