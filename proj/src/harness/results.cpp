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

#include "hybrid_attn/harness/results.h"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hybrid_attn::harness {

namespace {

// Commas and quotes only ever show up in free-text fields.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

ResultRow within(std::string experiment, std::string config, std::string metric, double value,
                 double oracle, double tolerance) {
  const bool pass = std::abs(value - oracle) <= tolerance;
  return {std::move(experiment), std::move(config), std::move(metric), value, oracle, pass};
}

std::string config_echo(const EngineConfig& c) {
  std::string s;
  s += "N_P=" + std::to_string(c.physical_page);
  s += ";N_L=" + std::to_string(c.logical_page);
  s += ";bits=" + std::to_string(c.quant_bits);
  s += ";B=" + std::to_string(c.budget_tokens);
  s += ";C=" + std::to_string(c.reuse_interval);
  s += ";sink=" + std::to_string(c.sink_blocks);
  s += ";local=" + std::to_string(c.local_blocks);
  s += ";s=" + format_number(c.target_sparsity);
  s += ";T_Q=" + std::to_string(c.tile_q_prefill);
  s += ";seed=" + std::to_string(c.seed);
  return s;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return "0";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw std::runtime_error("format_number: conversion failed");
  return std::string(buf, end);
}

void write_csv(std::span<const ResultRow> rows, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.experiment) << ',' << csv_field(r.config) << ',' << csv_field(r.metric)
        << ',' << format_number(r.value) << ',' << format_number(r.oracle) << ','
        << (r.pass ? "true" : "false") << '\n';
  }
}

void write_jsonl(std::span<const ResultRow> rows, std::ostream& out) {
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["experiment"] = r.experiment;
    j["config"] = r.config;
    j["metric"] = r.metric;
    // JSON has no inf/nan; those go out as strings.
    auto num = [](double x) -> nlohmann::ordered_json {
      if (std::isfinite(x)) return x;
      return format_number(x);
    };
    j["value"] = num(r.value);
    j["oracle"] = num(r.oracle);
    j["pass"] = r.pass;
    out << j.dump() << '\n';
  }
}

std::string jsonl_path_for(const std::string& csv_path) {
  return std::filesystem::path(csv_path).replace_extension(".jsonl").string();
}

void write_results(std::span<const ResultRow> rows, const std::string& csv_path) {
  const std::string json_path = jsonl_path_for(csv_path);
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");
  write_csv(rows, csv);
  std::ofstream jsonl(json_path, std::ios::binary);
  if (!jsonl) throw std::runtime_error("cannot open " + json_path + " for writing");
  write_jsonl(rows, jsonl);
  if (!csv.flush() || !jsonl.flush()) throw std::runtime_error("write failed for " + csv_path);
}

bool all_pass(std::span<const ResultRow> rows) {
  for (const auto& r : rows) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace hybrid_attn::harness
