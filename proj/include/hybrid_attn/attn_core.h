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
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "hybrid_attn/cost_ledger.h"
#include "hybrid_attn/tensor.h"

namespace hybrid_attn {

// Attention inputs for one sequence. q holds the N newest tokens; k and v hold
// all S tokens, so query row i sits at absolute position S - N + i.
struct Workload {
  Tensor3<float> q;  // [N][H][D]
  Tensor3<float> k;  // [S][Hkv][D]
  Tensor3<float> v;  // [S][Hkv][D]

  std::size_t queries() const { return q.dim0(); }
  std::size_t history() const { return k.dim0(); }
  std::size_t heads() const { return q.dim1(); }
  std::size_t kv_heads() const { return k.dim1(); }
  std::size_t head_dim() const { return q.dim2(); }
  std::size_t group_size() const { return heads() / kv_heads(); }

  // Keys/values of one KV head as strided rows.
  StridedRows keys(std::size_t kv_head) const;
  StridedRows values(std::size_t kv_head) const;

  // Throws std::invalid_argument on shape mismatch, H not a multiple of Hkv,
  // N > S, zero extents or non-finite entries.
  void validate() const;
};

// Query head -> KV head under grouped-query attention: floor(h / n).
std::size_t gqa_map(std::size_t head, std::size_t group_size, std::size_t heads);

// softmax(q K^T / sqrt(D)) V per head, evaluated in double. With `causal`,
// query row i sees history positions <= S - N + i.
Tensor3<double> reference_attention(const Workload& w, bool causal = true);

// Running online-softmax accumulator for one query row.
template <typename Real>
struct SoftmaxState {
  explicit SoftmaxState(std::size_t head_dim) : output(head_dim, Real{0}) {}

  Real running_max = -std::numeric_limits<Real>::infinity();
  Real denominator = Real{0};
  std::vector<Real> output;  // un-normalized weighted value sum

  bool empty() const { return denominator == Real{0}; }
  // log of the softmax normalizer, max + log(denominator).
  double log_normalizer() const;
  void finalize(std::span<Real> out) const;
};

// Folds one block of already-scaled scores and their value rows into state.
// Masked positions carry -inf and contribute nothing; an all-masked block
// leaves the state untouched.
template <typename Real>
void merge_block(SoftmaxState<Real>& state, std::span<const Real> scores,
                 const StridedRows& values);

struct TileConfig {
  std::size_t tile_q = 64;
  std::size_t tile_k = 64;
};

// Ascending KV tile indices one (head, query tile) pair visits.
using BlockSchedule = std::vector<std::int64_t>;
using ScheduleProvider = std::function<BlockSchedule(std::size_t head, std::int64_t query_tile)>;

// Tile geometry of one attention call. Query tiles are aligned to absolute
// token positions so that, with tile_k a multiple of tile_q, every query tile
// lies inside exactly one KV tile (its diagonal tile).
class TileGrid {
 public:
  TileGrid(std::size_t queries, std::size_t history, TileConfig tiles, bool causal);

  std::int64_t first_query_tile() const { return first_qtile_; }
  std::int64_t last_query_tile() const { return last_qtile_; }
  std::int64_t query_tile_count() const { return last_qtile_ - first_qtile_ + 1; }
  std::int64_t kv_tiles() const { return kv_tiles_; }

  // Query rows [begin, end) covered by a query tile.
  std::pair<std::size_t, std::size_t> rows(std::int64_t query_tile) const;
  // Most recent KV tile a query tile may attend.
  std::int64_t diagonal(std::int64_t query_tile) const;
  // Tiles a dense schedule would visit (diagonal + 1).
  std::int64_t total_tiles(std::int64_t query_tile) const { return diagonal(query_tile) + 1; }
  // Last history position query row r may attend.
  std::size_t row_limit(std::size_t row) const;

  const TileConfig& tiles() const { return tiles_; }
  bool causal() const { return causal_; }

 private:
  std::size_t queries_;
  std::size_t history_;
  TileConfig tiles_;
  bool causal_;
  std::size_t offset_;
  std::int64_t first_qtile_ = 0;
  std::int64_t last_qtile_ = 0;
  std::int64_t kv_tiles_ = 0;
};

// Every tile from 0 through the diagonal.
BlockSchedule full_schedule(const TileGrid& grid, std::int64_t query_tile);

// Throws std::invalid_argument unless the schedule is strictly ascending, in
// range and contains the diagonal tile.
void validate_schedule(const TileGrid& grid, std::int64_t query_tile, const BlockSchedule& s);

template <typename Real>
struct AttentionResult {
  Tensor3<Real> output;                 // [N][H][D]
  std::vector<double> log_normalizer;   // [N * H], row-major (row, head)
  CostLedger ledger;
};

// Block-sparse attention. For each (head, query tile) pair the provider's
// schedule is validated and its tiles merged in ascending order; the causal
// mask is applied element-wise, which only changes anything on the diagonal
// tile. Pairs may run concurrently; each pair's arithmetic is sequential,
// so results do not depend on the worker count.
template <typename Real>
AttentionResult<Real> blockwise_attention(const Workload& w, const ScheduleProvider& schedule,
                                          TileConfig tiles, bool causal = true,
                                          Stage stage = Stage::prefill);

// One visited tile of KV rows for a single head, all attendable.
struct KvBlock {
  StridedRows keys;
  StridedRows values;
};

// Single-query-row blockwise attention over already gathered tiles (the
// decode path, T_Q = 1). Blocks are merged in the given order.
template <typename Real>
std::vector<Real> attend_row(std::span<const float> query, std::span<const KvBlock> blocks,
                             double* log_normalizer = nullptr);

}  // namespace hybrid_attn
