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

#include "hybrid_attn/kv_store.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace hybrid_attn {

namespace {

void put_code(std::vector<std::uint8_t>& packed, std::size_t index, int bits, std::uint32_t code) {
  std::size_t bit = index * static_cast<std::size_t>(bits);
  for (int b = 0; b < bits; ++b, ++bit) {
    if ((code >> b) & 1u) packed[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
}

std::uint32_t get_code(const std::vector<std::uint8_t>& packed, std::size_t index, int bits) {
  std::uint32_t code = 0;
  std::size_t bit = index * static_cast<std::size_t>(bits);
  for (int b = 0; b < bits; ++b, ++bit) {
    code |= static_cast<std::uint32_t>((packed[bit / 8] >> (bit % 8)) & 1u) << b;
  }
  return code;
}

}  // namespace

std::uint32_t QuantizedTensor::code(std::size_t row, std::size_t col) const {
  if (row >= rows || col >= cols) throw std::out_of_range("QuantizedTensor::code");
  return get_code(packed, row * cols + col, bits);
}

QuantizedTensor quantize_page(std::span<const float> raw, std::size_t rows, std::size_t cols,
                              int bits) {
  if (bits < 2 || bits > 8) {
    throw std::invalid_argument("quantize_page: bits must be in [2, 8], got " + std::to_string(bits));
  }
  if (raw.size() != rows * cols) throw std::invalid_argument("quantize_page: size mismatch");
  for (float x : raw) {
    if (!std::isfinite(x)) throw std::invalid_argument("quantize_page: non-finite input");
  }
  QuantizedTensor q;
  q.bits = bits;
  q.rows = rows;
  q.cols = cols;
  q.packed.assign((rows * cols * static_cast<std::size_t>(bits) + 7) / 8, 0);
  q.scale.assign(cols, 1.0f);
  q.zero.assign(cols, 0.0f);
  if (rows == 0) return q;

  const std::uint32_t levels = (1u << bits) - 1u;
  for (std::size_t c = 0; c < cols; ++c) {
    float lo = raw[c], hi = raw[c];
    for (std::size_t r = 1; r < rows; ++r) {
      lo = std::min(lo, raw[r * cols + c]);
      hi = std::max(hi, raw[r * cols + c]);
    }
    q.zero[c] = lo;
    if (hi > lo) {
      float s = static_cast<float>((static_cast<double>(hi) - lo) / levels);
      q.scale[c] = s > 0.0f ? s : std::numeric_limits<float>::denorm_min();
    }
    const double scale = q.scale[c], zero = q.zero[c];
    for (std::size_t r = 0; r < rows; ++r) {
      const double t = std::nearbyint((static_cast<double>(raw[r * cols + c]) - zero) / scale);
      const auto code = static_cast<std::uint32_t>(std::clamp(t, 0.0, static_cast<double>(levels)));
      put_code(q.packed, r * cols + c, bits, code);
    }
  }
  return q;
}

std::vector<float> dequantize(const QuantizedTensor& q) {
  std::vector<float> out(q.rows * q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    for (std::size_t c = 0; c < q.cols; ++c) {
      const double x = static_cast<double>(get_code(q.packed, r * q.cols + c, q.bits)) * q.scale[c] +
                       static_cast<double>(q.zero[c]);
      out[r * q.cols + c] = static_cast<float>(x);
    }
  }
  return out;
}

DequantizedPage dequantize_page(const PhysicalPage& page) {
  DequantizedPage out;
  out.rows = page.token_count;
  if (page.token_count == 0) return out;
  if (page.keys.bits == 0) {
    out.cols = page.raw_keys.size() / page.token_count;
    out.keys = page.raw_keys;
    out.values = page.raw_values;
    return out;
  }
  out.cols = page.keys.cols;
  out.keys = dequantize(page.keys);
  out.values = dequantize(page.values);
  return out;
}

Placement PageTable::lookup(std::int64_t position) const {
  if (position < 0 || position >= tokens_) {
    throw std::out_of_range("lookup: position " + std::to_string(position) + " outside [0, " +
                            std::to_string(tokens_) + ")");
  }
  const std::int64_t ordinal = position / static_cast<std::int64_t>(page_size_);
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), ordinal,
                                   [](const Entry& e, std::int64_t o) { return e.ordinal < o; });
  if (it == entries_.end() || it->ordinal != ordinal) {
    throw std::out_of_range("lookup: position " + std::to_string(position) + " was evicted");
  }
  return {it->page_id, static_cast<std::size_t>(position % static_cast<std::int64_t>(page_size_))};
}

Placement lookup(const PageTable& table, std::int64_t position) { return table.lookup(position); }

std::string to_string(PoolKind kind) { return kind == PoolKind::dense ? "dense" : "streaming"; }

void CacheConfig::validate() const {
  if (physical_page == 0 || logical_page == 0) throw std::invalid_argument("page sizes must be >= 1");
  if (physical_page % logical_page != 0) {
    throw std::invalid_argument("logical page (" + std::to_string(logical_page) +
                                ") must divide physical page (" + std::to_string(physical_page) + ")");
  }
  if (quant_bits != 0 && (quant_bits < 2 || quant_bits > 8)) {
    throw std::invalid_argument("quant_bits must be 0 (off) or in [2, 8]");
  }
  if (sink_pages == 0 || local_pages == 0) throw std::invalid_argument("sink/local pages must be >= 1");
}

HeadPages::HeadPages(std::size_t kv_head, PoolKind kind, const CacheConfig& config,
                     std::size_t head_dim)
    : kv_head_(kv_head), kind_(kind), config_(config), head_dim_(head_dim),
      table_(config.physical_page) {
  config_.validate();
  if (head_dim == 0) throw std::invalid_argument("head_dim must be >= 1");
}

std::int64_t HeadPages::page_count() const {
  const auto np = static_cast<std::int64_t>(config_.physical_page);
  return (table_.tokens_ + np - 1) / np;
}

const PhysicalPage* HeadPages::find(std::int64_t ordinal) const {
  const auto it = std::lower_bound(pages_.begin(), pages_.end(), ordinal,
                                   [](const PhysicalPage& p, std::int64_t o) { return p.ordinal < o; });
  if (it == pages_.end() || it->ordinal != ordinal) return nullptr;
  return &*it;
}

const PhysicalPage& HeadPages::page(std::int64_t ordinal) const {
  const PhysicalPage* p = find(ordinal);
  if (!p) {
    throw std::out_of_range("page " + std::to_string(ordinal) + " of KV head " +
                            std::to_string(kv_head_) + " is not resident");
  }
  return *p;
}

void HeadPages::open_page(std::uint64_t page_id) {
  PhysicalPage page;
  page.page_id = page_id;
  page.kv_head = kv_head_;
  page.ordinal = page_count();
  page.first_position = page.ordinal * static_cast<std::int64_t>(config_.physical_page);
  page.capacity = config_.physical_page;
  page.raw_keys.reserve(config_.physical_page * head_dim_);
  page.raw_values.reserve(config_.physical_page * head_dim_);
  pages_.push_back(std::move(page));
  table_.entries_.push_back({pages_.back().ordinal, page_id});
  if (kind_ == PoolKind::streaming) evict_outside_window();
}

// Requantizes from the raw staging copy; drops the copy once the page is full.
void HeadPages::seal(PhysicalPage& page) const {
  if (config_.quant_bits == 0) return;
  page.keys = quantize_page(page.raw_keys, page.token_count, head_dim_, config_.quant_bits);
  page.values = quantize_page(page.raw_values, page.token_count, head_dim_, config_.quant_bits);
  if (page.full()) {
    page.raw_keys = {};
    page.raw_values = {};
  }
}

// Sink pages are pinned; the remaining pages form a ring of local pages.
void HeadPages::evict_outside_window() {
  const auto sinks = static_cast<std::int64_t>(config_.sink_pages);
  while (pages_.size() > config_.sink_pages + config_.local_pages) {
    auto victim = std::find_if(pages_.begin(), pages_.end(),
                               [&](const PhysicalPage& p) { return p.ordinal >= sinks; });
    table_.entries_.erase(std::find_if(table_.entries_.begin(), table_.entries_.end(),
                                       [&](const PageTable::Entry& e) {
                                         return e.ordinal == victim->ordinal;
                                       }));
    pages_.erase(victim);
  }
}

void HeadPages::append(std::span<const float> keys, std::span<const float> values,
                       std::uint64_t& next_page_id) {
  if (keys.size() != values.size() || keys.empty() || keys.size() % head_dim_ != 0) {
    throw std::invalid_argument("append_tokens: expected matching non-empty [m x " +
                                std::to_string(head_dim_) + "] keys and values");
  }
  for (float x : keys) {
    if (!std::isfinite(x)) throw std::invalid_argument("append_tokens: non-finite key");
  }
  for (float x : values) {
    if (!std::isfinite(x)) throw std::invalid_argument("append_tokens: non-finite value");
  }
  const std::size_t m = keys.size() / head_dim_;
  bool tail_dirty = false;
  for (std::size_t t = 0; t < m; ++t) {
    if (pages_.empty() || pages_.back().full()) open_page(next_page_id++);
    PhysicalPage& page = pages_.back();
    const auto key = keys.subspan(t * head_dim_, head_dim_);
    const auto value = values.subspan(t * head_dim_, head_dim_);
    page.raw_keys.insert(page.raw_keys.end(), key.begin(), key.end());
    page.raw_values.insert(page.raw_values.end(), value.begin(), value.end());

    if (kind_ == PoolKind::dense) {
      if (page.token_count % config_.logical_page == 0) {
        page.stats.push_back({{key.begin(), key.end()}, {key.begin(), key.end()}, 1});
      } else {
        PageStats& st = page.stats.back();
        for (std::size_t c = 0; c < head_dim_; ++c) {
          st.k_min[c] = std::min(st.k_min[c], key[c]);
          st.k_max[c] = std::max(st.k_max[c], key[c]);
        }
        ++st.covered_tokens;
      }
    }
    ++page.token_count;
    ++table_.tokens_;
    tail_dirty = true;
    if (page.full()) {
      seal(page);
      tail_dirty = false;
    }
  }
  if (tail_dirty) seal(pages_.back());
}

TwoWayCache::TwoWayCache(CacheConfig config, std::size_t head_dim,
                         std::vector<PoolKind> pool_of_kv_head)
    : config_(config), head_dim_(head_dim) {
  config_.validate();
  if (pool_of_kv_head.empty()) throw std::invalid_argument("cache needs at least one KV head");
  heads_.reserve(pool_of_kv_head.size());
  for (std::size_t h = 0; h < pool_of_kv_head.size(); ++h) {
    heads_.emplace_back(h, pool_of_kv_head[h], config_, head_dim);
  }
}

void TwoWayCache::append_tokens(std::size_t kv_head, std::span<const float> keys,
                                std::span<const float> values) {
  if (kv_head >= heads_.size()) throw std::out_of_range("append_tokens: KV head out of range");
  heads_[kv_head].append(keys, values, next_page_id_);
}

void TwoWayCache::append_tokens(std::size_t kv_head, const StridedRows& keys,
                                const StridedRows& values) {
  if (keys.cols != head_dim_ || values.cols != head_dim_ || keys.rows != values.rows) {
    throw std::invalid_argument("append_tokens: dimension mismatch");
  }
  std::vector<float> k(keys.rows * head_dim_), v(values.rows * head_dim_);
  for (std::size_t r = 0; r < keys.rows; ++r) {
    std::copy_n(keys.row(r).begin(), head_dim_, k.begin() + r * head_dim_);
    std::copy_n(values.row(r).begin(), head_dim_, v.begin() + r * head_dim_);
  }
  append_tokens(kv_head, k, v);
}

const HeadPages& TwoWayCache::head(std::size_t kv_head) const {
  if (kv_head >= heads_.size()) throw std::out_of_range("KV head out of range");
  return heads_[kv_head];
}

std::vector<std::size_t> TwoWayCache::heads_in(PoolKind kind) const {
  std::vector<std::size_t> out;
  for (const auto& h : heads_) {
    if (h.kind() == kind) out.push_back(h.kv_head());
  }
  return out;
}

void write_snapshot(const TwoWayCache& cache, std::ostream& out) {
  using nlohmann::ordered_json;
  const auto& cfg = cache.config();
  ordered_json header;
  header["N_P"] = cfg.physical_page;
  header["N_L"] = cfg.logical_page;
  header["bits"] = cfg.quant_bits;
  header["head_dim"] = cache.head_dim();
  out << header.dump() << '\n';

  auto codes = [](const QuantizedTensor& q) {
    std::vector<std::uint32_t> c(q.rows * q.cols);
    for (std::size_t r = 0; r < q.rows; ++r) {
      for (std::size_t k = 0; k < q.cols; ++k) c[r * q.cols + k] = q.code(r, k);
    }
    return c;
  };
  for (PoolKind kind : {PoolKind::dense, PoolKind::streaming}) {
    for (std::size_t kv : cache.heads_in(kind)) {
      const HeadPages& head = cache.head(kv);
      for (const auto& entry : head.table().entries()) {
        const PhysicalPage& page = head.page(entry.ordinal);
        ordered_json rec;
        rec["pool"] = to_string(kind);
        rec["kv_head"] = kv;
        rec["page_id"] = page.page_id;
        rec["first_position"] = page.first_position;
        rec["token_count"] = page.token_count;
        if (cfg.quant_bits == 0) {
          rec["k_raw"] = page.raw_keys;
          rec["v_raw"] = page.raw_values;
        } else {
          rec["k_codes"] = codes(page.keys);
          rec["v_codes"] = codes(page.values);
          rec["k_scales"] = page.keys.scale;
          rec["v_scales"] = page.values.scale;
          rec["k_zeros"] = page.keys.zero;
          rec["v_zeros"] = page.values.zero;
        }
        auto& stats = rec["stats"] = ordered_json::array();
        for (const auto& st : page.stats) {
          stats.push_back({{"k_min", st.k_min}, {"k_max", st.k_max},
                           {"covered_tokens", st.covered_tokens}});
        }
        out << rec.dump() << '\n';
      }
    }
  }
}

Snapshot read_snapshot(std::istream& in) {
  Snapshot snap;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("read_snapshot: missing header");
  const auto header = nlohmann::json::parse(line);
  snap.header = {header.at("N_P").get<std::size_t>(), header.at("N_L").get<std::size_t>(),
                 header.at("bits").get<int>(), header.at("head_dim").get<std::size_t>()};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    SnapshotPage p;
    p.pool = rec.at("pool").get<std::string>() == "dense" ? PoolKind::dense : PoolKind::streaming;
    p.kv_head = rec.at("kv_head").get<std::size_t>();
    p.page_id = rec.at("page_id").get<std::uint64_t>();
    p.first_position = rec.at("first_position").get<std::int64_t>();
    p.token_count = rec.at("token_count").get<std::size_t>();
    if (snap.header.bits == 0) {
      p.k_raw = rec.at("k_raw").get<std::vector<float>>();
      p.v_raw = rec.at("v_raw").get<std::vector<float>>();
    } else {
      p.k_codes = rec.at("k_codes").get<std::vector<std::uint32_t>>();
      p.v_codes = rec.at("v_codes").get<std::vector<std::uint32_t>>();
      p.k_scales = rec.at("k_scales").get<std::vector<float>>();
      p.v_scales = rec.at("v_scales").get<std::vector<float>>();
      p.k_zeros = rec.at("k_zeros").get<std::vector<float>>();
      p.v_zeros = rec.at("v_zeros").get<std::vector<float>>();
    }
    for (const auto& st : rec.at("stats")) {
      p.stats.push_back({st.at("k_min").get<std::vector<float>>(),
                         st.at("k_max").get<std::vector<float>>(),
                         st.at("covered_tokens").get<std::size_t>()});
    }
    snap.pages.push_back(std::move(p));
  }
  return snap;
}

}  // namespace hybrid_attn
