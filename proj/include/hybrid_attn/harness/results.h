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

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hybrid_attn/engine_config.h"

namespace hybrid_attn::harness {

struct ResultRow {
  std::string experiment;
  std::string config;  // key=value pairs joined with ';'
  std::string metric;
  double value = 0.0;
  double oracle = 0.0;
  bool pass = false;

  bool operator==(const ResultRow&) const = default;
};

// Row whose pass flag is |value - oracle| <= tolerance.
ResultRow within(std::string experiment, std::string config, std::string metric, double value,
                 double oracle, double tolerance);

// Compact config echo used in the `config` column.
std::string config_echo(const EngineConfig& config);

// Shortest decimal text that reads back to the same double; integers print
// without a fraction.
std::string format_number(double x);

inline constexpr const char* kCsvHeader = "experiment,config,metric,value,oracle,pass";

void write_csv(std::span<const ResultRow> rows, std::ostream& out);
void write_jsonl(std::span<const ResultRow> rows, std::ostream& out);
// Writes PATH as CSV and PATH with its extension replaced by .jsonl.
// Throws std::runtime_error on I/O failure.
void write_results(std::span<const ResultRow> rows, const std::string& csv_path);
std::string jsonl_path_for(const std::string& csv_path);

bool all_pass(std::span<const ResultRow> rows);

}  // namespace hybrid_attn::harness
