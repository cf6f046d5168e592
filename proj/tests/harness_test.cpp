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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "hybrid_attn/harness/checks.h"
#include "hybrid_attn/harness/experiments.h"
#include "hybrid_attn/harness/results.h"
#include "hybrid_attn/harness/sweep.h"
#include "hybrid_attn/harness/workload_gen.h"

using namespace hybrid_attn;
using namespace hybrid_attn::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hybrid_attn_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HYBRID_ATTN_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

WorkloadSpec needle_spec() {
  WorkloadSpec s;
  s.kind = WorkloadKind::needle;
  s.history = 2048;
  s.heads = 2;
  s.kv_heads = 1;
  s.head_dim = 32;
  s.seed = 42;
  return s;
}

}  // namespace

TEST(GenWorkload, SameSpecSameBytes) {
  const auto a = gen_workload(needle_spec()), b = gen_workload(needle_spec());
  EXPECT_EQ(a.workload.q, b.workload.q);
  EXPECT_EQ(a.workload.k, b.workload.k);
  EXPECT_EQ(a.workload.v, b.workload.v);
  WorkloadSpec other = needle_spec();
  other.seed = 43;
  EXPECT_NE(gen_workload(other).workload.k, a.workload.k);
}

TEST(GenWorkload, NeedleIsExactScoreArgmax) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    WorkloadSpec spec = needle_spec();
    spec.seed = seed;
    const auto g = gen_workload(spec);
    const NeedleTruth& t = g.truth.at(0);
    ASSERT_EQ(t.positions.size(), 1u);
    const auto scores = exact_scores(g.workload.q.row(0, t.probe_head), g.workload.keys(0));
    const auto argmax = std::max_element(scores.begin(), scores.end()) - scores.begin();
    EXPECT_EQ(argmax, t.positions[0]);
    double second = -INFINITY;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (static_cast<std::int64_t>(j) != t.positions[0]) second = std::max(second, scores[j]);
    }
    EXPECT_GE(scores[static_cast<std::size_t>(argmax)] - second, spec.needle_margin * t.q_l1 * (1 - 1e-6));
    EXPECT_EQ(t.pages, (std::vector<std::int64_t>{t.positions[0] / 64}));
  }
}

TEST(GenWorkload, ClusterSpanOneSharesAPhysicalPage) {
  WorkloadSpec spec = needle_spec();
  spec.kind = WorkloadKind::clustered_needles;
  spec.needle_count = 4;
  spec.cluster_span = 1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    spec.seed = seed;
    const auto t = gen_workload(spec).truth.at(0);
    ASSERT_EQ(t.positions.size(), 4u);
    EXPECT_EQ(t.pages.size(), 1u);
    std::vector<std::int64_t> logical;
    for (auto p : t.positions) logical.push_back(p / 16);
    EXPECT_EQ(std::set<std::int64_t>(logical.begin(), logical.end()).size(), 4u);
  }
}

TEST(GenWorkload, ImpossibleMarginIsDiagnosed) {
  WorkloadSpec spec = needle_spec();
  spec.needle_margin = 1.5;
  try {
    gen_workload(spec);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("unattainable"), std::string::npos);
  }
  spec.needle_margin = 0.5;
  spec.history = 100;  // not a whole number of pages
  EXPECT_THROW(gen_workload(spec), std::invalid_argument);
}

TEST(GenWorkload, SpecJsonRoundTrip) {
  WorkloadSpec spec = needle_spec();
  spec.cluster_span = 3;
  const auto back = workload_spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
  EXPECT_EQ(to_json(back), to_json(spec));
  EXPECT_THROW(workload_spec_from_json({{"bogus", 1}}), std::invalid_argument);
  EXPECT_THROW(workload_spec_from_json({{"kind", "haystack"}}), std::invalid_argument);
}

TEST(Results, CsvSchemaAndFormatting) {
  const std::vector<ResultRow> rows = {{"e", "a=1;b=2", "m", 0.1, 2.0, true},
                                       {"e", "x, y", "n", -3.25, 1e-12, false}};
  std::ostringstream out;
  write_csv(rows, out);
  EXPECT_EQ(out.str(),
            "experiment,config,metric,value,oracle,pass\n"
            "e,a=1;b=2,m,0.1,2,true\n"
            "e,\"x, y\",n,-3.25,1e-12,false\n");
  std::ostringstream j;
  write_jsonl(rows, j);
  EXPECT_EQ(j.str().substr(0, j.str().find('\n')),
            R"({"experiment":"e","config":"a=1;b=2","metric":"m","value":0.1,"oracle":2.0,"pass":true})");
}

TEST(Results, GoldenRowsForPinnedSeed) {
  EngineConfig config;
  config.seed = 7;
  std::vector<ResultRow> rows = check_worked_speedup(config);
  for (const auto& more : {check_reuse_accounting(config), check_head_classification(config)}) {
    rows.insert(rows.end(), more.begin(), more.end());
  }
  std::ostringstream out;
  write_csv(rows, out);
  EXPECT_EQ(out.str(), read_file(fs::path(HYBRID_ATTN_GOLDEN_DIR) / "verify_rows.csv"));
}

TEST(Sweep, ReuseIntervalInvocationCounts) {
  SweepOptions opt;
  opt.recall_trials = 4;
  opt.history = 4096;
  const std::vector<double> values = {16, 8, 4, 2, 1};  // deliberately unsorted
  const auto rows = run_sweep(SweepAxis::reuse_interval, values, EngineConfig{}, opt);
  std::vector<double> invocations;
  for (const auto& r : rows) {
    if (r.metric == "selector_invocations") {
      invocations.push_back(r.value);
      EXPECT_EQ(r.value, r.oracle);
    }
  }
  EXPECT_EQ(invocations, (std::vector<double>{64, 32, 16, 8, 4}));
  EXPECT_TRUE(all_pass(rows));
}

TEST(Sweep, BudgetReachesFullRecallAtFullCoverage) {
  SweepOptions opt;
  opt.recall_trials = 10;
  opt.history = 4096;
  opt.decode_steps = 4;
  const std::vector<double> values = {256, 1024, 4096};
  const auto rows = run_sweep(SweepAxis::budget, values, EngineConfig{}, opt);
  const ResultRow* last = nullptr;
  for (const auto& r : rows) {
    if (r.metric == "needle_recall") last = &r;
  }
  ASSERT_NE(last, nullptr);
  EXPECT_EQ(last->value, 1.0);
  EXPECT_EQ(last->oracle, 1.0);
  EXPECT_TRUE(all_pass(rows));
}

TEST(Sweep, PageSizeHierarchicalNeverTrailsFlat) {
  SweepOptions opt;
  opt.recall_trials = 20;
  opt.decode_steps = 4;
  EngineConfig base;
  base.budget_tokens = 1024;
  const std::vector<double> values = {16, 32, 64, 128};
  const auto rows = run_sweep(SweepAxis::page_size, values, base, opt);
  for (const auto& r : rows) {
    if (r.metric == "needle_recall_hier_minus_flat") EXPECT_GE(r.value, 0.0) << r.config;
  }
  EXPECT_THROW(run_sweep(SweepAxis::page_size, std::vector<double>{48}, base, opt), ConfigError);
  EXPECT_THROW(run_sweep(SweepAxis::budget, std::vector<double>{32}, base, opt), ConfigError);
}

TEST(Sweep, SparsityRowsCarryHeadCountsAndPrefillSpeedup) {
  SweepOptions opt;
  opt.recall_trials = 2;
  opt.history = 2048;
  opt.decode_steps = 2;
  const std::vector<double> values = {0.0, 0.5, 0.75};
  const auto rows = run_sweep(SweepAxis::sparsity, values, EngineConfig{}, opt);
  std::vector<double> heads, speedups;
  for (const auto& r : rows) {
    if (r.metric == "retrieval_heads") heads.push_back(r.value);
    if (r.metric == "prefill_speedup") speedups.push_back(r.value);
  }
  EXPECT_EQ(heads, (std::vector<double>{8, 4, 2}));
  ASSERT_EQ(speedups.size(), 3u);
  EXPECT_EQ(speedups[0], 1.0);
  EXPECT_LT(speedups[1], speedups[2]);
  EXPECT_TRUE(all_pass(rows));
  EXPECT_THROW(parse_sweep_axis("tiles"), ConfigError);
}

TEST(Cli, BadBudgetIsAConfigErrorWithoutCsv) {
  const fs::path dir = scratch_dir("badcfg");
  write_file(dir / "cfg.json", R"({"budget_tokens": 32, "physical_page": 64})");
  EXPECT_EQ(run_cli("verify --config " + (dir / "cfg.json").string() + " --out " + (dir / "out.csv").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "out.csv"));
  EXPECT_FALSE(fs::exists(dir / "out.jsonl"));
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("bench --sweep budget --out /dev/null"), 2);
  EXPECT_EQ(run_cli("bench --sweep tiles --values 1 --out /dev/null"), 2);
  EXPECT_EQ(run_cli("gen --spec /nonexistent.json --out /dev/null"), 2);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, BenchWritesCsvAndJsonLines) {
  const fs::path dir = scratch_dir("bench");
  const fs::path out = dir / "reuse.csv";
  EXPECT_EQ(run_cli("bench --sweep reuse_interval --values 1,4 --trials 2 --steps 8 --out " + out.string()), 0);
  const std::string csv = read_file(out);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  EXPECT_TRUE(fs::exists(dir / "reuse.jsonl"));
  fs::remove_all(dir);
}

TEST(Cli, GenWritesWorkloadAndRejectsImpossibleMargin) {
  const fs::path dir = scratch_dir("gen");
  write_file(dir / "spec.json", R"({"kind": "needle", "history": 512, "head_dim": 8, "heads": 1, "seed": 3})");
  EXPECT_EQ(run_cli("gen --spec " + (dir / "spec.json").string() + " --out " + (dir / "w.json").string()), 0);
  const auto doc = nlohmann::json::parse(read_file(dir / "w.json"));
  EXPECT_EQ(doc["workload"]["dims"]["S"], 512);
  EXPECT_EQ(doc["workload"]["needles"][0]["positions"].size(), 1u);
  write_file(dir / "bad.json", R"({"kind": "needle", "history": 512, "head_dim": 8, "needle_margin": 3.0})");
  EXPECT_EQ(run_cli("gen --spec " + (dir / "bad.json").string() + " --out " + (dir / "x.json").string()), 2);
  fs::remove_all(dir);
}
