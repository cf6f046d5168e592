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

// hybrid-attn: verification runner, ablation sweeps and workload generator.
//
//   hybrid-attn verify [--config F] [--out results.csv]
//   hybrid-attn bench --sweep AXIS --values V1,V2,... [--config F] --out PATH
//   hybrid-attn gen --spec F --out PATH
//
// Exit status: 0 all checks pass, 1 a check failed, 2 usage or config error.
// HYBRID_ATTN_THREADS caps the worker count.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hybrid_attn/engine_config.h"
#include "hybrid_attn/harness/checks.h"
#include "hybrid_attn/harness/results.h"
#include "hybrid_attn/harness/sweep.h"
#include "hybrid_attn/harness/workload_gen.h"

namespace {

constexpr int kPass = 0;
constexpr int kCheckFailure = 1;
constexpr int kUsageError = 2;

using namespace hybrid_attn;
using namespace hybrid_attn::harness;

EngineConfig config_from(const std::string& path) {
  return path.empty() ? EngineConfig{} : load_engine_config(path);
}

int verify(const std::string& config_path, const std::string& out) {
  const EngineConfig config = config_from(config_path);
  config.validate();
  const VerifyReport report = run_verify(config, &std::cout);
  write_results(report.rows, out);
  std::cout << (report.pass ? "verify: all checks passed" : "verify: FAILED") << " (" << report.rows.size()
            << " rows -> " << out << ")\n";
  return report.pass ? kPass : kCheckFailure;
}

int bench(const std::string& axis_name, const std::vector<double>& values, const std::string& config_path,
          const std::string& out, const SweepOptions& options) {
  const SweepAxis axis = parse_sweep_axis(axis_name);
  const EngineConfig config = config_from(config_path);
  const auto rows = run_sweep(axis, values, config, options);
  write_results(rows, out);
  const bool pass = all_pass(rows);
  std::cout << "bench " << axis_name << ": " << rows.size() << " rows -> " << out
            << (pass ? "" : " (some rows failed)") << '\n';
  return pass ? kPass : kCheckFailure;
}

int gen(const std::string& spec_path, const std::string& out) {
  std::ifstream in(spec_path);
  if (!in) throw ConfigError("cannot open workload spec " + spec_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("workload spec " + spec_path + ": " + e.what());
  }
  const WorkloadSpec spec = workload_spec_from_json(j);
  const GeneratedWorkload g = gen_workload(spec);
  nlohmann::ordered_json doc;
  doc["spec"] = to_json(spec);
  doc["workload"] = to_json(g);
  std::ofstream file(out, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + out + " for writing");
  file << doc.dump() << '\n';
  if (!file.flush()) throw std::runtime_error("write failed for " + out);
  std::cout << "gen: " << to_string(spec.kind) << " workload -> " << out << '\n';
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid sparse attention: verification, sweeps and workload generation"};
  app.require_subcommand(1);

  std::string config_path, out = "verify_results.csv";
  auto* verify_cmd = app.add_subcommand("verify", "Run every verification check");
  verify_cmd->add_option("--config", config_path, "Engine config JSON");
  verify_cmd->add_option("--out", out, "CSV output path (a .jsonl twin is written next to it)");

  std::string axis, bench_out;
  std::vector<double> values;
  SweepOptions options;
  auto* bench_cmd = app.add_subcommand("bench", "Run an ablation sweep");
  bench_cmd->add_option("--sweep", axis, "page_size, budget, reuse_interval or sparsity")->required();
  bench_cmd->add_option("--values", values, "Comma-separated axis values")->required()->delimiter(',');
  bench_cmd->add_option("--config", config_path, "Base engine config JSON");
  bench_cmd->add_option("--out", bench_out, "CSV output path")->required();
  bench_cmd->add_option("--trials", options.recall_trials, "Recall trials per point");
  bench_cmd->add_option("--steps", options.decode_steps, "Decode steps T per point");

  std::string spec_path, gen_out;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic workload");
  gen_cmd->add_option("--spec", spec_path, "Workload spec JSON")->required();
  gen_cmd->add_option("--out", gen_out, "Output JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsageError;
  }

  try {
    if (*verify_cmd) return verify(config_path, out);
    if (*bench_cmd) return bench(axis, values, config_path, bench_out, options);
    if (*gen_cmd) return gen(spec_path, gen_out);
  } catch (const std::invalid_argument& e) {
    // ConfigError and invalid workload specs alike.
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
