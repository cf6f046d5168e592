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

#include "hybrid_attn/engine.h"
#include "hybrid_attn/rng.h"
#include "test_util.h"

using namespace hybrid_attn;
using hybrid_attn::testing::random_workload;

namespace {

std::vector<HeadProfile> profiles_for(std::vector<double> gates, double sparsity) {
  return classify_heads(gates, sparsity).profiles;
}

EngineConfig exact_config() {
  EngineConfig c;
  c.quant_bits = 0;
  return c;
}

struct Token {
  std::vector<float> q, k, v;
  DecodeToken view() const { return {q, k, v}; }
};

Token random_token(std::size_t h, std::size_t hkv, std::size_t d, Rng& rng) {
  Token t{std::vector<float>(h * d), std::vector<float>(hkv * d), std::vector<float>(hkv * d)};
  for (auto* buf : {&t.q, &t.k, &t.v}) {
    for (auto& x : *buf) x = static_cast<float>(rng.normal());
  }
  return t;
}

}  // namespace

TEST(EnginePrefill, AllRetrievalMatchesReference) {
  const auto w = random_workload(200, 700, 4, 2, 16, 1);
  Engine engine(exact_config(), 4, 2, 16, profiles_for({0.9, 0.8, 0.7, 0.6}, 0.0));
  const auto out = engine.prefill(w);
  const auto ref = reference_attention(w);
  EXPECT_LE(relative_error(out.output.data(), ref.data()), 1e-5);
  EXPECT_EQ(engine.cache().head(0).tokens(), 700);
  EXPECT_THROW(engine.prefill(w), std::logic_error);
}

TEST(EnginePrefill, StreamingHeadsStayWithinLambdaBudget) {
  const std::size_t s = 64 * 40;
  const auto w = random_workload(s, s, 2, 1, 8, 2);
  Engine engine(exact_config(), 2, 1, 8, profiles_for({0.9, 0.1}, 0.5));
  const auto out = engine.prefill(w);
  const TileCount streaming = out.ledger.head(Stage::prefill, 1);
  const TileCount dense = out.ledger.head(Stage::prefill, 0);
  EXPECT_EQ(dense.visited, dense.total);
  EXPECT_EQ(dense.total, 40u * 41u / 2u);
  EXPECT_EQ(streaming.visited, 1u + 2u + 38u * 3u);
}

TEST(EnginePrefill, HalfSparsitySpeedupMatchesRecomputedSkip) {
  const std::size_t s = 64 * 16;
  const auto w = random_workload(s, s, 4, 2, 8, 3);
  Engine engine(exact_config(), 4, 2, 8, profiles_for({0.2, 0.9, 0.1, 0.8}, 0.5));
  const auto out = engine.prefill(w);
  std::uint64_t visited = 0, total = 0;
  for (std::size_t h = 0; h < 4; ++h) {
    const auto c = out.ledger.head(Stage::prefill, h);
    visited += c.visited;
    total += c.total;
  }
  const double r = 1.0 - static_cast<double>(visited) / static_cast<double>(total);
  EXPECT_DOUBLE_EQ(out.ledger.stage_total(Stage::prefill).speedup(), 1.0 / (1.0 - r));
  // Two dense heads of 136 tiles, two streaming heads of 3 + 45 + ... tiles.
  EXPECT_EQ(total, 4u * 136u);
  EXPECT_EQ(visited, 2u * 136u + 2u * (1u + 2u + 14u * 3u));
}

TEST(EngineDecode, FullBudgetMatchesReference) {
  const std::size_t s = 1000, d = 16, h = 2, hkv = 1;
  auto w = random_workload(1, s, h, hkv, d, 4);
  EngineConfig c = exact_config();
  c.budget_tokens = 2048;
  Engine engine(c, h, hkv, d, profiles_for({0.9, 0.8}, 0.0));
  engine.prefill(w);
  Rng rng(5);
  for (int step = 0; step < 5; ++step) {
    const Token t = random_token(h, hkv, d, rng);
    const auto out = engine.decode_step(t.view());
    // Extend the workload by the token and compare the last row.
    Workload ext{Tensor3<float>(1, h, d), Tensor3<float>(w.history() + 1, hkv, d),
                 Tensor3<float>(w.history() + 1, hkv, d)};
    std::copy(w.k.data().begin(), w.k.data().end(), ext.k.data().begin());
    std::copy(w.v.data().begin(), w.v.data().end(), ext.v.data().begin());
    std::copy(t.k.begin(), t.k.end(), ext.k.row(w.history(), 0).begin());
    std::copy(t.v.begin(), t.v.end(), ext.v.row(w.history(), 0).begin());
    std::copy(t.q.begin(), t.q.end(), ext.q.data().begin());
    const auto ref = reference_attention(ext);
    EXPECT_LE(relative_error(std::span<const float>(out.output), ref.data()), 1e-5);
    w = std::move(ext);
  }
}

TEST(EngineDecode, DenseCostIsConstantAndStreamingVisitsThree) {
  const std::size_t d = 8;
  for (std::size_t s : {64 * 128, 64 * 512}) {
    auto w = random_workload(1, s, 2, 2, d, 6);
    Engine engine(EngineConfig{}, 2, 2, d, profiles_for({0.9, 0.1}, 0.5));
    engine.prefill(w);
    Rng rng(7);
    for (int step = 0; step < 6; ++step) {
      const Token t = random_token(2, 2, d, rng);
      const auto out = engine.decode_step(t.view());
      ASSERT_EQ(out.tables.size(), 2u);
      EXPECT_EQ(out.tables[0].logical_pages.size(), 64u);
      EXPECT_EQ(out.tables[1].logical_pages.size(), 3u);
      EXPECT_TRUE(std::is_sorted(out.tables[0].logical_pages.begin(), out.tables[0].logical_pages.end()));
      EXPECT_EQ(out.ledger.head(Stage::decode, 0).visited, 64u);
    }
    EXPECT_EQ(engine.cache().pool_of(1), PoolKind::streaming);
    EXPECT_LE(engine.cache().head(1).pages().size(), 3u);
  }
}

TEST(EngineDecode, LedgerStagesStayConsistent) {
  const std::size_t s = 64 * 100, d = 8;
  auto w = random_workload(64, s, 2, 1, d, 8);
  Engine engine(EngineConfig{}, 2, 1, d, profiles_for({0.9, 0.1}, 0.5));
  const auto pre = engine.prefill(w);
  Rng rng(9);
  CostLedger decode;
  for (int step = 0; step < 9; ++step) decode += engine.decode_step(random_token(2, 1, d, rng).view()).ledger;
  CostLedger both = pre.ledger;
  both += decode;
  EXPECT_EQ(both, engine.ledger());
  EXPECT_EQ(engine.ledger().stage_total(Stage::prefill), pre.ledger.stage_total(Stage::prefill));
  EXPECT_EQ(engine.ledger().selector_requests(), 9u);
  EXPECT_EQ(engine.ledger().selector_invocations(), 3u);  // C = 4: steps 0, 4, 8
  EXPECT_EQ(engine.decode_steps(), 9);
}

TEST(EngineDecode, DeterministicAcrossRuns) {
  auto run = [] {
    auto w = random_workload(1, 3000, 4, 2, 8, 10);
    Engine engine(EngineConfig{}, 4, 2, 8, profiles_for({0.3, 0.6, 0.9, 0.1}, 0.5));
    engine.prefill(w);
    Rng rng(11);
    std::vector<float> all;
    for (int step = 0; step < 5; ++step) {
      const auto out = engine.decode_step(random_token(4, 2, 8, rng).view());
      all.insert(all.end(), out.output.begin(), out.output.end());
    }
    return std::make_pair(all, engine.ledger());
  };
  EXPECT_EQ(run(), run());
}

TEST(EngineDecode, RejectsMisuse) {
  Engine engine(EngineConfig{}, 2, 1, 4, profiles_for({0.9, 0.1}, 0.5));
  Rng rng(12);
  EXPECT_THROW(engine.decode_step(random_token(2, 1, 4, rng).view()), std::logic_error);
  EXPECT_THROW(engine.prefill(random_workload(1, 10, 4, 1, 4, 1)), std::invalid_argument);
  EXPECT_THROW(Engine(EngineConfig{}, 2, 1, 4, profiles_for({0.9}, 0.0)), std::invalid_argument);
}

TEST(CostReport, WorkedExampleAndAdditivity) {
  CostLedger a;
  a.record(Stage::prefill, 0, 10, 21);
  EXPECT_DOUBLE_EQ(a.stage_total(Stage::prefill).speedup(), 2.1);
  CostLedger b;
  b.record(Stage::prefill, 0, 5, 10);
  b.record(Stage::decode, 1, 3, 300);
  b.record_selector(true);
  CostLedger sum = a;
  sum += b;
  EXPECT_EQ(sum.head(Stage::prefill, 0), (TileCount{15, 31}));
  EXPECT_EQ(sum.head(Stage::decode, 1), (TileCount{3, 300}));
  const auto report = cost_report(sum);
  ASSERT_EQ(report.stages.size(), 2u);
  EXPECT_EQ(report.stages[0].visited, 15u);
  EXPECT_EQ(report.selector_invocations, 1u);
  EXPECT_EQ(to_json(report)["stages"][1]["speedup"].get<double>(), 100.0);
  EXPECT_THROW(a.record(Stage::decode, 0, 5, 4), std::logic_error);
  EXPECT_TRUE(cost_report(CostLedger{}).empty());
}

TEST(EngineConfig, JsonRoundTripAndErrors) {
  EngineConfig c;
  c.budget_tokens = 2048;
  c.reuse_interval = 8;
  EXPECT_EQ(engine_config_from_json(to_json(c)), c);
  EXPECT_THROW(engine_config_from_json({{"budget_tokens", 32}}), ConfigError);
  EXPECT_THROW(engine_config_from_json({{"nonsense", 1}}), ConfigError);
  EXPECT_THROW(engine_config_from_json({{"logical_page", 24}}), ConfigError);
  EXPECT_THROW(engine_config_from_json({{"target_sparsity", "half"}}), ConfigError);
  EXPECT_THROW(load_engine_config("/nonexistent/config.json"), ConfigError);
}
