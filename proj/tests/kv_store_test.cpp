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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hybrid_attn/attn_core.h"
#include "hybrid_attn/kv_store.h"
#include "hybrid_attn/rng.h"
#include "test_util.h"

using namespace hybrid_attn;

namespace {

std::vector<float> random_rows(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<float> out(rows * cols);
  for (auto& x : out) x = static_cast<float>(scale * rng.normal());
  return out;
}

CacheConfig config(std::size_t np, std::size_t nl, int bits) {
  CacheConfig c;
  c.physical_page = np;
  c.logical_page = nl;
  c.quant_bits = bits;
  return c;
}

}  // namespace

TEST(Quantization, ErrorWithinHalfStep) {
  for (int bits : {2, 4, 8}) {
    const auto raw = random_rows(64, 32, 11 + bits, 3.0);
    const auto q = quantize_page(raw, 64, 32, bits);
    const auto back = dequantize(q);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const float big = std::max(std::abs(raw[i]), std::abs(back[i]));
      const double ulp = std::nextafter(big, INFINITY) - big;
      EXPECT_LE(std::abs(static_cast<double>(raw[i]) - back[i]), q.scale[i % 32] / 2.0 + ulp) << "bits " << bits;
    }
  }
}

TEST(Quantization, ConstantChannelIsExact) {
  std::vector<float> raw(16 * 3);
  for (std::size_t r = 0; r < 16; ++r) {
    raw[r * 3 + 0] = -2.5f;
    raw[r * 3 + 1] = 0.1f * static_cast<float>(r);
    raw[r * 3 + 2] = 7.0f;
  }
  const auto q = quantize_page(raw, 16, 3, 4);
  EXPECT_EQ(q.scale[0], 1.0f);
  EXPECT_EQ(q.zero[0], -2.5f);
  const auto back = dequantize(q);
  for (std::size_t r = 0; r < 16; ++r) {
    EXPECT_EQ(back[r * 3 + 0], -2.5f);
    EXPECT_EQ(back[r * 3 + 2], 7.0f);
  }
}

TEST(Quantization, FourBitCodesSpanFullRange) {
  const auto raw = random_rows(64, 8, 5);
  const auto q = quantize_page(raw, 64, 8, 4);
  for (std::size_t c = 0; c < 8; ++c) {
    std::uint32_t lo = 99, hi = 0;
    for (std::size_t r = 0; r < 64; ++r) {
      lo = std::min(lo, q.code(r, c));
      hi = std::max(hi, q.code(r, c));
    }
    EXPECT_EQ(lo, 0u);
    EXPECT_EQ(hi, 15u);
  }
  EXPECT_EQ(q.packed.size(), 64u * 8u * 4u / 8u);
}

TEST(Quantization, RequantizingReconstructionIsStable) {
  const auto raw = random_rows(32, 4, 9);
  const auto once = dequantize(quantize_page(raw, 32, 4, 4));
  const auto twice = dequantize(quantize_page(once, 32, 4, 4));
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-5);
}

TEST(Quantization, EmptyPageAndBadInput) {
  const auto q = quantize_page({}, 0, 4, 4);
  EXPECT_EQ(q.rows, 0u);
  EXPECT_TRUE(dequantize(q).empty());
  const std::vector<float> raw = {1.0f, 2.0f};
  EXPECT_THROW(quantize_page(raw, 1, 2, 1), std::invalid_argument);
  EXPECT_THROW(quantize_page(raw, 1, 2, 9), std::invalid_argument);
  EXPECT_THROW(quantize_page(raw, 2, 2, 4), std::invalid_argument);
  const std::vector<float> bad = {1.0f, NAN};
  EXPECT_THROW(quantize_page(bad, 1, 2, 4), std::invalid_argument);
}

TEST(HeadPages, SixtyFourTokensFillOnePageWithFourStats) {
  TwoWayCache cache(config(64, 16, 4), 8, {PoolKind::dense});
  const auto k = random_rows(64, 8, 1), v = random_rows(64, 8, 2);
  cache.append_tokens(0, k, v);
  const HeadPages& head = cache.head(0);
  ASSERT_EQ(head.pages().size(), 1u);
  EXPECT_EQ(head.page_count(), 1);
  EXPECT_TRUE(head.pages()[0].full());
  ASSERT_EQ(head.pages()[0].stats.size(), 4u);
  for (const auto& st : head.pages()[0].stats) EXPECT_EQ(st.covered_tokens, 16u);
  EXPECT_TRUE(head.pages()[0].raw_keys.empty());
}

TEST(HeadPages, SingleTokenStatsCollapse) {
  TwoWayCache cache(config(64, 16, 4), 3, {PoolKind::dense});
  const std::vector<float> k = {0.5f, -1.0f, 2.0f}, v = {1.0f, 1.0f, 1.0f};
  cache.append_tokens(0, k, v);
  const auto& st = cache.head(0).pages()[0].stats.at(0);
  EXPECT_EQ(st.k_min, k);
  EXPECT_EQ(st.k_max, k);
  EXPECT_EQ(st.covered_tokens, 1u);
}

TEST(HeadPages, StatsMatchBruteForceOverStream) {
  const std::size_t d = 6, n = 1024 + 7;
  const auto k = random_rows(n, d, 3), v = random_rows(n, d, 4);
  TwoWayCache cache(config(64, 16, 4), d, {PoolKind::dense});
  // Uneven chunks so page and logical-page boundaries fall mid-append.
  std::size_t at = 0;
  Rng rng(5);
  while (at < n) {
    const std::size_t m = std::min<std::size_t>(n - at, 1 + rng.below(40));
    cache.append_tokens(0, std::span(k).subspan(at * d, m * d), std::span(v).subspan(at * d, m * d));
    at += m;
  }
  std::size_t covered = 0;
  for (const auto& page : cache.head(0).pages()) {
    for (std::size_t l = 0; l < page.stats.size(); ++l) {
      const std::size_t first = static_cast<std::size_t>(page.first_position) + l * 16;
      const std::size_t last = std::min(first + 16, n);
      EXPECT_EQ(page.stats[l].covered_tokens, last - first);
      for (std::size_t c = 0; c < d; ++c) {
        float lo = INFINITY, hi = -INFINITY;
        for (std::size_t t = first; t < last; ++t) {
          lo = std::min(lo, k[t * d + c]);
          hi = std::max(hi, k[t * d + c]);
        }
        EXPECT_EQ(page.stats[l].k_min[c], lo);
        EXPECT_EQ(page.stats[l].k_max[c], hi);
      }
      covered += page.stats[l].covered_tokens;
    }
  }
  // Logical pages partition the token range: no overlap, no gap.
  EXPECT_EQ(covered, n);
}

TEST(HeadPages, TailPageStaysWithinHalfStepAsItGrows) {
  const std::size_t d = 4;
  TwoWayCache cache(config(64, 16, 4), d, {PoolKind::dense});
  const auto k = random_rows(40, d, 8), v = random_rows(40, d, 9);
  for (std::size_t t = 0; t < 40; ++t) {
    cache.append_tokens(0, std::span(k).subspan(t * d, d), std::span(v).subspan(t * d, d));
    const PhysicalPage& page = cache.head(0).pages().back();
    const auto dq = dequantize_page(page);
    for (std::size_t i = 0; i < (t + 1) * d; ++i) {
      EXPECT_LE(std::abs(dq.keys[i] - k[i]), page.keys.scale[i % d] / 2.0 + 1e-6);
    }
  }
}

TEST(PageTable, LookupExamples) {
  TwoWayCache cache(config(64, 16, 4), 2, {PoolKind::dense});
  const auto k = random_rows(200, 2, 1);
  cache.append_tokens(0, k, k);
  const PageTable& table = cache.head(0).table();
  const Placement p = lookup(table, 130);
  EXPECT_EQ(p.page_id, table.entries()[2].page_id);
  EXPECT_EQ(p.slot, 2u);
  EXPECT_EQ(lookup(table, 0).slot, 0u);
  EXPECT_EQ(lookup(table, 199).slot, 199u - 192u);
  EXPECT_THROW(lookup(table, 200), std::out_of_range);
  EXPECT_THROW(lookup(table, -1), std::out_of_range);
}

TEST(PageTable, RoundTripThroughPages) {
  const std::size_t d = 3, n = 300;
  const auto k = random_rows(n, d, 21), v = random_rows(n, d, 22);
  TwoWayCache cache(config(32, 8, 0), d, {PoolKind::dense});
  cache.append_tokens(0, k, v);
  const HeadPages& head = cache.head(0);
  for (std::size_t t = 0; t < n; ++t) {
    const Placement p = lookup(head.table(), static_cast<std::int64_t>(t));
    const auto it = std::find_if(head.pages().begin(), head.pages().end(),
                                 [&](const PhysicalPage& pg) { return pg.page_id == p.page_id; });
    ASSERT_NE(it, head.pages().end());
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(it->raw_keys[p.slot * d + c], k[t * d + c]);
  }
}

TEST(StreamingPool, KeepsOnlySinkAndLocalPages) {
  CacheConfig c = config(16, 16, 4);
  TwoWayCache cache(c, 2, {PoolKind::streaming});
  const auto k = random_rows(16, 2, 1);
  for (int i = 0; i < 20; ++i) {
    cache.append_tokens(0, k, k);
    const HeadPages& head = cache.head(0);
    EXPECT_LE(head.pages().size(), c.sink_pages + c.local_pages);
    EXPECT_EQ(head.pages().front().ordinal, 0);  // sink pinned
    EXPECT_EQ(head.pages().back().ordinal, head.page_count() - 1);
    EXPECT_TRUE(head.pages().front().stats.empty());
  }
  const HeadPages& head = cache.head(0);
  EXPECT_EQ(head.page_count(), 20);
  EXPECT_EQ(head.pages()[1].ordinal, 18);
  EXPECT_THROW(lookup(head.table(), 16 * 5), std::out_of_range);
  EXPECT_EQ(lookup(head.table(), 16 * 19 + 3).slot, 3u);
  EXPECT_EQ(head.find(5), nullptr);
}

TEST(KvQuantization, EightBitAttentionStaysClose) {
  const std::size_t s = 512, d = 16;
  auto w = hybrid_attn::testing::random_workload(1, s, 1, 1, d, 33);
  TwoWayCache cache(config(64, 16, 8), d, {PoolKind::dense});
  cache.append_tokens(0, w.keys(0), w.values(0));
  Workload dq = w;
  std::size_t t = 0;
  for (const auto& page : cache.head(0).pages()) {
    const auto p = dequantize_page(page);
    for (std::size_t r = 0; r < p.rows; ++r, ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        dq.k(t, 0, c) = p.keys[r * d + c];
        dq.v(t, 0, c) = p.values[r * d + c];
      }
    }
  }
  const auto exact = reference_attention(w), approx = reference_attention(dq);
  EXPECT_LE(relative_error(approx.data(), exact.data()), 1e-2);
}

TEST(CacheConfig, Validation) {
  EXPECT_THROW(config(64, 24, 4).validate(), std::invalid_argument);
  EXPECT_THROW(config(64, 16, 1).validate(), std::invalid_argument);
  EXPECT_NO_THROW(config(64, 16, 0).validate());
  EXPECT_THROW(TwoWayCache(config(64, 16, 4), 2, {}), std::invalid_argument);
  TwoWayCache cache(config(64, 16, 4), 2, {PoolKind::dense});
  const std::vector<float> odd = {1.0f, 2.0f, 3.0f};
  EXPECT_THROW(cache.append_tokens(0, odd, odd), std::invalid_argument);
  EXPECT_THROW(cache.append_tokens(1, std::vector<float>{1, 2}, std::vector<float>{1, 2}), std::out_of_range);
}

TEST(Snapshot, MatchesGoldenFile) {
  CacheConfig c = config(4, 2, 2);
  TwoWayCache cache(c, 2, {PoolKind::dense, PoolKind::streaming});
  const std::vector<float> k = {0, 1, 3, 1, 1, 2, 2, 0, 5, 5};
  const std::vector<float> v = {1, 0, 1, 0, 1, 0, 1, 0, 2, 2};
  cache.append_tokens(0, k, v);
  cache.append_tokens(1, k, v);
  std::ostringstream out;
  write_snapshot(cache, out);
  std::ifstream golden(std::string(HYBRID_ATTN_GOLDEN_DIR) + "/tiny_snapshot.jsonl");
  ASSERT_TRUE(golden);
  std::stringstream expected;
  expected << golden.rdbuf();
  EXPECT_EQ(out.str(), expected.str());
}

TEST(Snapshot, RoundTripsCodesAndStats) {
  const std::size_t d = 4;
  TwoWayCache cache(config(16, 4, 4), d, {PoolKind::dense});
  const auto k = random_rows(40, d, 1), v = random_rows(40, d, 2);
  cache.append_tokens(0, k, v);
  std::stringstream buf;
  write_snapshot(cache, buf);
  const Snapshot snap = read_snapshot(buf);
  EXPECT_EQ(snap.header.physical_page, 16u);
  EXPECT_EQ(snap.header.bits, 4);
  ASSERT_EQ(snap.pages.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const PhysicalPage& page = cache.head(0).pages()[i];
    const SnapshotPage& sp = snap.pages[i];
    EXPECT_EQ(sp.page_id, page.page_id);
    EXPECT_EQ(sp.token_count, page.token_count);
    EXPECT_EQ(sp.k_scales, page.keys.scale);
    EXPECT_EQ(sp.v_zeros, page.values.zero);
    EXPECT_EQ(sp.stats, page.stats);
    for (std::size_t r = 0; r < page.token_count; ++r) {
      for (std::size_t col = 0; col < d; ++col) EXPECT_EQ(sp.k_codes[r * d + col], page.keys.code(r, col));
    }
  }
}
