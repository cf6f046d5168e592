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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace hybrid_attn {

enum class Stage { prefill, decode };

std::string to_string(Stage stage);

// Tile counts for one (stage, head) pair. One tile is a T_Q x T_K score block
// together with its T_K x D value block.
struct TileCount {
  std::uint64_t visited = 0;
  std::uint64_t total = 0;

  // total / visited; 1.0 when nothing was recorded.
  double speedup() const;
  // Skipped fraction r = 1 - visited / total.
  double skip_fraction() const;

  TileCount& operator+=(const TileCount& other) {
    visited += other.visited;
    total += other.total;
    return *this;
  }
  bool operator==(const TileCount&) const = default;
};

// Visited vs total tile counts plus page-selector invocations. This is the
// stand-in for kernel latency: block-sparse attention time is proportional
// to the number of tiles a kernel actually visits.
class CostLedger {
 public:
  using Key = std::pair<Stage, std::size_t>;

  void record(Stage stage, std::size_t head, std::uint64_t visited, std::uint64_t total);
  void record_selector(bool invoked);

  TileCount head(Stage stage, std::size_t head) const;
  TileCount stage_total(Stage stage) const;

  std::uint64_t selector_invocations() const { return selector_invocations_; }
  std::uint64_t selector_requests() const { return selector_requests_; }

  const std::map<Key, TileCount>& entries() const { return entries_; }
  bool empty() const { return entries_.empty() && selector_requests_ == 0; }

  CostLedger& operator+=(const CostLedger& other);
  bool operator==(const CostLedger&) const = default;

 private:
  std::map<Key, TileCount> entries_;
  std::uint64_t selector_invocations_ = 0;
  std::uint64_t selector_requests_ = 0;
};

struct StageReport {
  Stage stage = Stage::prefill;
  std::uint64_t visited = 0;
  std::uint64_t total = 0;
  double skip_fraction = 0.0;
  double speedup = 1.0;
  std::vector<std::pair<std::size_t, TileCount>> heads;
};

struct CostReport {
  std::vector<StageReport> stages;  // only stages with recorded tiles
  std::uint64_t selector_invocations = 0;
  std::uint64_t selector_requests = 0;

  bool empty() const { return stages.empty() && selector_requests == 0; }
};

CostReport cost_report(const CostLedger& ledger);
nlohmann::ordered_json to_json(const CostReport& report);

}  // namespace hybrid_attn
