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

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "hybrid_attn/engine_config.h"
#include "hybrid_attn/harness/results.h"

namespace hybrid_attn::harness {

struct Check {
  int id = 0;
  std::string experiment;  // experiment column of its rows
  std::string title;
  double time_limit_seconds = 0.0;
  std::function<std::vector<ResultRow>(const EngineConfig&)> run;
};

// The verification suite, in order.
const std::vector<Check>& verify_checks();

std::vector<ResultRow> check_worked_speedup(const EngineConfig& config);
std::vector<ResultRow> check_speedup_law(const EngineConfig& config);
std::vector<ResultRow> check_dense_equivalence(const EngineConfig& config);
std::vector<ResultRow> check_score_soundness(const EngineConfig& config);
std::vector<ResultRow> check_constant_decode_cost(const EngineConfig& config);
std::vector<ResultRow> check_needle_recall(const EngineConfig& config);
std::vector<ResultRow> check_hierarchical_paging(const EngineConfig& config);
std::vector<ResultRow> check_reuse_accounting(const EngineConfig& config);
std::vector<ResultRow> check_quantization_bound(const EngineConfig& config);
std::vector<ResultRow> check_head_classification(const EngineConfig& config);
std::vector<ResultRow> check_determinism(const EngineConfig& config);

struct CheckOutcome {
  const Check* check = nullptr;
  std::vector<ResultRow> rows;
  double seconds = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<CheckOutcome> checks;
  std::vector<ResultRow> rows;  // all checks, suite order
  bool pass = false;
};

// Validates the config first (ConfigError before any work), then runs every
// check. Progress lines with timings go to `log` when given; timings never
// enter the rows.
VerifyReport run_verify(const EngineConfig& config, std::ostream* log = nullptr);

}  // namespace hybrid_attn::harness
