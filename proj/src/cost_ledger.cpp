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

#include "hybrid_attn/cost_ledger.h"

#include <stdexcept>

namespace hybrid_attn {

std::string to_string(Stage stage) { return stage == Stage::prefill ? "prefill" : "decode"; }

double TileCount::speedup() const {
  if (visited == 0) return 1.0;
  return static_cast<double>(total) / static_cast<double>(visited);
}

double TileCount::skip_fraction() const {
  if (total == 0) return 0.0;
  return 1.0 - static_cast<double>(visited) / static_cast<double>(total);
}

void CostLedger::record(Stage stage, std::size_t head, std::uint64_t visited,
                        std::uint64_t total) {
  if (visited > total) throw std::logic_error("CostLedger: visited tiles exceed total tiles");
  entries_[{stage, head}] += TileCount{visited, total};
}

void CostLedger::record_selector(bool invoked) {
  ++selector_requests_;
  if (invoked) ++selector_invocations_;
}

TileCount CostLedger::head(Stage stage, std::size_t head) const {
  const auto it = entries_.find({stage, head});
  return it == entries_.end() ? TileCount{} : it->second;
}

TileCount CostLedger::stage_total(Stage stage) const {
  TileCount sum;
  for (const auto& [key, count] : entries_) {
    if (key.first == stage) sum += count;
  }
  return sum;
}

CostLedger& CostLedger::operator+=(const CostLedger& other) {
  for (const auto& [key, count] : other.entries_) entries_[key] += count;
  selector_invocations_ += other.selector_invocations_;
  selector_requests_ += other.selector_requests_;
  return *this;
}

CostReport cost_report(const CostLedger& ledger) {
  CostReport report;
  report.selector_invocations = ledger.selector_invocations();
  report.selector_requests = ledger.selector_requests();
  for (Stage stage : {Stage::prefill, Stage::decode}) {
    StageReport sr;
    sr.stage = stage;
    TileCount sum;
    for (const auto& [key, count] : ledger.entries()) {
      if (key.first != stage) continue;
      sr.heads.emplace_back(key.second, count);
      sum += count;
    }
    if (sr.heads.empty()) continue;
    sr.visited = sum.visited;
    sr.total = sum.total;
    sr.skip_fraction = sum.skip_fraction();
    sr.speedup = sum.speedup();
    report.stages.push_back(std::move(sr));
  }
  return report;
}

nlohmann::ordered_json to_json(const CostReport& report) {
  nlohmann::ordered_json out;
  out["stages"] = nlohmann::ordered_json::array();
  for (const auto& sr : report.stages) {
    nlohmann::ordered_json s;
    s["stage"] = to_string(sr.stage);
    s["visited_tiles"] = sr.visited;
    s["total_tiles"] = sr.total;
    s["skip_fraction"] = sr.skip_fraction;
    s["speedup"] = sr.speedup;
    auto& heads = s["heads"] = nlohmann::ordered_json::array();
    for (const auto& [head, count] : sr.heads) {
      heads.push_back({{"head", head}, {"visited_tiles", count.visited},
                       {"total_tiles", count.total}, {"speedup", count.speedup()}});
    }
    out["stages"].push_back(std::move(s));
  }
  out["selector_invocations"] = report.selector_invocations;
  out["selector_requests"] = report.selector_requests;
  return out;
}

}  // namespace hybrid_attn
