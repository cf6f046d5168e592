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
#include <span>
#include <string>
#include <vector>

#include "hybrid_attn/engine_config.h"
#include "hybrid_attn/harness/results.h"

namespace hybrid_attn::harness {

enum class SweepAxis { page_size, budget, reuse_interval, sparsity };
std::string to_string(SweepAxis axis);
// Throws ConfigError for unknown names.
SweepAxis parse_sweep_axis(const std::string& name);

struct SweepOptions {
  std::size_t recall_trials = 100;
  std::size_t decode_steps = 64;  // T
  std::size_t history = 16384;
};

// Base config with one axis value applied. Throws ConfigError when the value
// does not make a valid configuration.
EngineConfig apply_axis(const EngineConfig& base, SweepAxis axis, double value);

// One block of rows per axis value: needle recall (exact-score oracle),
// decode speedup (closed form) and selector invocations per dense KV head
// (ceil(T / C)); page_size adds flat-page recall, sparsity adds retrieval
// head count and prefill speedup. Rows are ordered by (axis value, metric).
std::vector<ResultRow> run_sweep(SweepAxis axis, std::span<const double> values,
                                 const EngineConfig& base, const SweepOptions& options = {});

}  // namespace hybrid_attn::harness
