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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybrid_attn/attn_core.h"

namespace hybrid_attn::harness {

enum class WorkloadKind { random, needle, clustered_needles };
std::string to_string(WorkloadKind kind);
WorkloadKind parse_workload_kind(const std::string& name);

// Synthetic workload recipe. Needle kinds plant keys along sign(q) of the
// probe query (last query row, first query head of each KV group) so that
// their exact score beats every haystack token by needle_margin * ||q||_1.
// Needle keys are confined to the unit box, which bounds attainable margins.
struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::random;
  std::size_t history = 4096;  // S
  std::size_t queries = 1;     // N
  std::size_t heads = 2;       // H
  std::size_t kv_heads = 1;    // Hkv
  std::size_t head_dim = 64;   // D
  double needle_margin = 0.5;
  std::size_t needle_count = 1;
  std::size_t cluster_span = 1;    // physical pages holding all clustered needles
  std::size_t physical_page = 64;  // page geometry used to place needles
  std::size_t logical_page = 16;
  double haystack_scale = 0.25;  // stddev of haystack key channels
  double spike_rate = 0.0;       // probability a haystack channel is a +-spike
  double spike_magnitude = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const WorkloadSpec& spec);
WorkloadSpec workload_spec_from_json(const nlohmann::json& j);

struct NeedleTruth {
  std::size_t kv_head = 0;
  std::size_t probe_head = 0;
  std::vector<std::int64_t> positions;  // ascending
  std::vector<std::int64_t> pages;      // physical pages holding needles, ascending
  double needle_score = 0.0;            // exact probe . needle (smallest over needles)
  double best_haystack_score = 0.0;     // exact max over all other tokens
  double q_l1 = 0.0;                    // ||probe||_1
};

struct GeneratedWorkload {
  Workload workload;
  std::vector<NeedleTruth> truth;  // one per KV head for needle kinds
};

// Throws std::invalid_argument for invalid dimensions or an unattainable
// margin (the required needle amplitude would leave the unit box).
GeneratedWorkload gen_workload(const WorkloadSpec& spec);

nlohmann::ordered_json to_json(const GeneratedWorkload& g);

}  // namespace hybrid_attn::harness
