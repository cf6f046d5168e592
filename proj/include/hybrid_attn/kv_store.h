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
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hybrid_attn/tensor.h"

namespace hybrid_attn {

// Per-channel asymmetric uniform quantization of one page tensor ([rows][cols]).
// Codes are bit-packed LSB-first, `bits` bits each, row-major.
struct QuantizedTensor {
  int bits = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> packed;
  std::vector<float> scale;  // per channel
  std::vector<float> zero;   // per channel

  std::uint32_t code(std::size_t row, std::size_t col) const;
  bool operator==(const QuantizedTensor&) const = default;
};

// scale = (max - min) / (2^bits - 1), zero = min, code = round((x - zero) / scale)
// clamped to [0, 2^bits - 1]. A constant channel gets scale 1 and zero = value.
// Requires 2 <= bits <= 8 and finite input.
QuantizedTensor quantize_page(std::span<const float> raw, std::size_t rows, std::size_t cols,
                              int bits);

// x = code * scale + zero, row-major [rows][cols].
std::vector<float> dequantize(const QuantizedTensor& q);

// Channel-wise key bounds of one logical page, taken from unquantized keys.
struct PageStats {
  std::vector<float> k_min;
  std::vector<float> k_max;
  std::size_t covered_tokens = 0;

  bool operator==(const PageStats&) const = default;
};

// One physical page of a single KV head. The token features come first, then
// the quantization metadata, then the key statistics, mirroring the in-memory
// record layout of the page.
struct PhysicalPage {
  std::uint64_t page_id = 0;
  std::size_t kv_head = 0;
  std::int64_t ordinal = 0;         // page index along the sequence
  std::int64_t first_position = 0;  // ordinal * N_P
  std::size_t capacity = 0;         // N_P
  std::size_t token_count = 0;

  QuantizedTensor keys;    // quantized pools only
  QuantizedTensor values;
  // Full-precision features. Always present when quant_bits == 0; otherwise
  // kept only while the page is still filling, so that its per-channel
  // quantization can be redone from raw data as tokens arrive.
  std::vector<float> raw_keys;
  std::vector<float> raw_values;

  std::vector<PageStats> stats;  // dense pool only, ceil(token_count / N_L) entries

  bool full() const { return token_count == capacity; }
};

struct DequantizedPage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> keys;    // [rows][cols]
  std::vector<float> values;  // [rows][cols]
};

// Features of a page as attention consumes them. Empty page -> empty result.
DequantizedPage dequantize_page(const PhysicalPage& page);

struct Placement {
  std::uint64_t page_id = 0;
  std::size_t slot = 0;
  bool operator==(const Placement&) const = default;
};

// Token position -> (page, slot) for one KV head.
class PageTable {
 public:
  struct Entry {
    std::int64_t ordinal = 0;
    std::uint64_t page_id = 0;
  };

  explicit PageTable(std::size_t page_size = 64) : page_size_(page_size) {}

  // Throws std::out_of_range for positions >= S or inside evicted pages.
  Placement lookup(std::int64_t position) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::int64_t tokens() const { return tokens_; }
  std::size_t page_size() const { return page_size_; }

 private:
  friend class HeadPages;
  std::size_t page_size_;
  std::int64_t tokens_ = 0;
  std::vector<Entry> entries_;  // ascending ordinal
};

Placement lookup(const PageTable& table, std::int64_t position);

enum class PoolKind { dense, streaming };
std::string to_string(PoolKind kind);

struct CacheConfig {
  std::size_t physical_page = 64;  // N_P
  std::size_t logical_page = 16;   // N_L, divides N_P
  int quant_bits = 4;              // 0 keeps fp32 features
  std::size_t sink_pages = 1;      // streaming pool geometry
  std::size_t local_pages = 2;

  void validate() const;
};

// Pages of one KV head in one pool.
class HeadPages {
 public:
  HeadPages(std::size_t kv_head, PoolKind kind, const CacheConfig& config, std::size_t head_dim);

  // Keys/values as [m][D] row-major.
  void append(std::span<const float> keys, std::span<const float> values, std::uint64_t& next_page_id);

  std::size_t kv_head() const { return kv_head_; }
  PoolKind kind() const { return kind_; }
  std::int64_t tokens() const { return table_.tokens_; }
  // Pages the sequence spans so far, evicted ones included: ceil(S / N_P).
  std::int64_t page_count() const;
  const PageTable& table() const { return table_; }
  const std::vector<PhysicalPage>& pages() const { return pages_; }

  // nullptr when the page has been evicted or does not exist.
  const PhysicalPage* find(std::int64_t ordinal) const;
  const PhysicalPage& page(std::int64_t ordinal) const;

 private:
  void open_page(std::uint64_t page_id);
  void seal(PhysicalPage& page) const;
  void evict_outside_window();

  std::size_t kv_head_;
  PoolKind kind_;
  CacheConfig config_;
  std::size_t head_dim_;
  std::vector<PhysicalPage> pages_;  // ascending ordinal
  PageTable table_;
};

// Paged KV cache split into a dense pool (all tokens, with key statistics)
// and a streaming pool (sink and local pages only, no statistics).
class TwoWayCache {
 public:
  TwoWayCache(CacheConfig config, std::size_t head_dim, std::vector<PoolKind> pool_of_kv_head);

  void append_tokens(std::size_t kv_head, std::span<const float> keys, std::span<const float> values);
  void append_tokens(std::size_t kv_head, const StridedRows& keys, const StridedRows& values);

  const HeadPages& head(std::size_t kv_head) const;
  PoolKind pool_of(std::size_t kv_head) const { return heads_.at(kv_head).kind(); }
  std::vector<std::size_t> heads_in(PoolKind kind) const;

  const CacheConfig& config() const { return config_; }
  std::size_t head_dim() const { return head_dim_; }
  std::size_t kv_heads() const { return heads_.size(); }

 private:
  CacheConfig config_;
  std::size_t head_dim_;
  std::vector<HeadPages> heads_;
  std::uint64_t next_page_id_ = 0;
};

// JSON-lines snapshot: one header line {N_P, N_L, bits, head_dim}, then one
// line per page (dense pool first, then streaming; KV heads ascending; pages
// in table order) with codes, scales, zeros and stats in that order.
void write_snapshot(const TwoWayCache& cache, std::ostream& out);

struct SnapshotHeader {
  std::size_t physical_page = 0;
  std::size_t logical_page = 0;
  int bits = 0;
  std::size_t head_dim = 0;
};

struct SnapshotPage {
  PoolKind pool = PoolKind::dense;
  std::size_t kv_head = 0;
  std::uint64_t page_id = 0;
  std::int64_t first_position = 0;
  std::size_t token_count = 0;
  std::vector<std::uint32_t> k_codes, v_codes;
  std::vector<float> k_raw, v_raw;
  std::vector<float> k_scales, k_zeros, v_scales, v_zeros;
  std::vector<PageStats> stats;
};

struct Snapshot {
  SnapshotHeader header;
  std::vector<SnapshotPage> pages;
};

Snapshot read_snapshot(std::istream& in);

}  // namespace hybrid_attn
