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

#include "hybrid_attn/attn_core.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hybrid_attn/parallel.h"

namespace hybrid_attn {

namespace {

template <typename Real>
Real dot(std::span<const float> a, std::span<const float> b) {
  Real sum{0};
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<Real>(a[i]) * static_cast<Real>(b[i]);
  return sum;
}

void require_finite(std::span<const float> data, const char* name) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw std::invalid_argument(std::string("workload: non-finite value in ") + name +
                                  " at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

StridedRows Workload::keys(std::size_t kv_head) const {
  const std::size_t d = head_dim();
  return {k.data().subspan(kv_head * d), history(), d, kv_heads() * d};
}

StridedRows Workload::values(std::size_t kv_head) const {
  const std::size_t d = head_dim();
  return {v.data().subspan(kv_head * d), history(), d, kv_heads() * d};
}

void Workload::validate() const {
  if (queries() == 0 || history() == 0 || heads() == 0 || kv_heads() == 0 || head_dim() == 0) {
    throw std::invalid_argument("workload: all extents must be positive");
  }
  if (k.dim2() != head_dim() || v.dim2() != head_dim()) {
    throw std::invalid_argument("workload: head dimension differs between q, k and v");
  }
  if (v.dim0() != history() || v.dim1() != kv_heads()) {
    throw std::invalid_argument("workload: k and v shapes differ");
  }
  if (heads() % kv_heads() != 0) {
    throw std::invalid_argument("workload: query heads (" + std::to_string(heads()) +
                                ") not a multiple of KV heads (" + std::to_string(kv_heads()) +
                                ")");
  }
  if (queries() > history()) {
    throw std::invalid_argument("workload: more query tokens than history tokens");
  }
  require_finite(q.data(), "q");
  require_finite(k.data(), "k");
  require_finite(v.data(), "v");
}

std::size_t gqa_map(std::size_t head, std::size_t group_size, std::size_t heads) {
  if (group_size == 0) throw std::invalid_argument("gqa_map: group size must be >= 1");
  if (head >= heads) {
    throw std::out_of_range("gqa_map: head " + std::to_string(head) + " out of range [0, " +
                            std::to_string(heads) + ")");
  }
  return head / group_size;
}

Tensor3<double> reference_attention(const Workload& w, bool causal) {
  w.validate();
  const std::size_t n = w.queries(), s = w.history(), h = w.heads(), d = w.head_dim();
  const std::size_t group = w.group_size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor3<double> out(n, h, d, 0.0);
  std::vector<double> scores(s);
  for (std::size_t head = 0; head < h; ++head) {
    const std::size_t kv = gqa_map(head, group, h);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t limit = causal ? s - n + i : s - 1;
      const auto q = w.q.row(i, head);
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= limit; ++j) {
        scores[j] = dot<double>(q, w.k.row(j, kv)) * scale;
        max_score = std::max(max_score, scores[j]);
      }
      double denom = 0.0;
      auto o = out.row(i, head);
      for (std::size_t j = 0; j <= limit; ++j) {
        const double p = std::exp(scores[j] - max_score);
        denom += p;
        const auto vj = w.v.row(j, kv);
        for (std::size_t c = 0; c < d; ++c) o[c] += p * static_cast<double>(vj[c]);
      }
      for (auto& x : o) x /= denom;
    }
  }
  return out;
}

template <typename Real>
double SoftmaxState<Real>::log_normalizer() const {
  return static_cast<double>(running_max) + std::log(static_cast<double>(denominator));
}

template <typename Real>
void SoftmaxState<Real>::finalize(std::span<Real> out) const {
  if (empty()) throw std::logic_error("softmax state finalized before any unmasked block");
  for (std::size_t c = 0; c < output.size(); ++c) out[c] = output[c] / denominator;
}

template <typename Real>
void merge_block(SoftmaxState<Real>& state, std::span<const Real> scores,
                 const StridedRows& values) {
  if (scores.size() != values.rows) throw std::invalid_argument("merge_block: score/value count mismatch");
  Real block_max = -std::numeric_limits<Real>::infinity();
  for (Real s : scores) {
    if (std::isnan(s) || s == std::numeric_limits<Real>::infinity()) {
      throw std::invalid_argument("merge_block: non-finite score");
    }
    block_max = std::max(block_max, s);
  }
  if (block_max == -std::numeric_limits<Real>::infinity()) return;

  const Real new_max = std::max(state.running_max, block_max);
  const Real correction = std::exp(state.running_max - new_max);
  state.denominator *= correction;
  for (auto& x : state.output) x *= correction;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const Real p = std::exp(scores[j] - new_max);
    if (p == Real{0}) continue;
    state.denominator += p;
    const auto v = values.row(j);
    for (std::size_t c = 0; c < v.size(); ++c) state.output[c] += p * static_cast<Real>(v[c]);
  }
  state.running_max = new_max;
}

TileGrid::TileGrid(std::size_t queries, std::size_t history, TileConfig tiles, bool causal)
    : queries_(queries), history_(history), tiles_(tiles), causal_(causal) {
  if (tiles.tile_q == 0 || tiles.tile_k == 0) throw std::invalid_argument("tile sizes must be >= 1");
  if (queries == 0 || history == 0) throw std::invalid_argument("tile grid needs tokens");
  if (causal && queries > history) throw std::invalid_argument("causal grid with N > S");
  if (causal && tiles.tile_k % tiles.tile_q != 0) {
    throw std::invalid_argument("tile_k (" + std::to_string(tiles.tile_k) +
                                ") must be a multiple of tile_q (" + std::to_string(tiles.tile_q) +
                                ")");
  }
  offset_ = causal ? history - queries : 0;
  first_qtile_ = static_cast<std::int64_t>(offset_ / tiles.tile_q);
  last_qtile_ = static_cast<std::int64_t>((offset_ + queries - 1) / tiles.tile_q);
  kv_tiles_ = static_cast<std::int64_t>((history + tiles.tile_k - 1) / tiles.tile_k);
}

std::pair<std::size_t, std::size_t> TileGrid::rows(std::int64_t query_tile) const {
  if (query_tile < first_qtile_ || query_tile > last_qtile_) {
    throw std::out_of_range("query tile " + std::to_string(query_tile) + " outside grid");
  }
  const std::size_t begin = std::max<std::size_t>(query_tile * tiles_.tile_q, offset_);
  const std::size_t end = std::min<std::size_t>((query_tile + 1) * tiles_.tile_q, offset_ + queries_);
  return {begin - offset_, end - offset_};
}

std::int64_t TileGrid::diagonal(std::int64_t query_tile) const {
  if (!causal_) return kv_tiles_ - 1;
  const auto [begin, end] = rows(query_tile);
  (void)begin;
  return static_cast<std::int64_t>(row_limit(end - 1) / tiles_.tile_k);
}

std::size_t TileGrid::row_limit(std::size_t row) const {
  return causal_ ? offset_ + row : history_ - 1;
}

BlockSchedule full_schedule(const TileGrid& grid, std::int64_t query_tile) {
  BlockSchedule s(static_cast<std::size_t>(grid.total_tiles(query_tile)));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<std::int64_t>(i);
  return s;
}

void validate_schedule(const TileGrid& grid, std::int64_t query_tile, const BlockSchedule& s) {
  const std::int64_t diag = grid.diagonal(query_tile);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0 || s[i] >= grid.kv_tiles()) {
      throw std::invalid_argument("schedule tile " + std::to_string(s[i]) +
                                  " beyond KV extent of " + std::to_string(grid.kv_tiles()) +
                                  " tiles");
    }
    if (s[i] > diag) {
      throw std::invalid_argument("schedule tile " + std::to_string(s[i]) +
                                  " lies past the diagonal tile " + std::to_string(diag));
    }
    if (i > 0 && s[i] <= s[i - 1]) throw std::invalid_argument("schedule not strictly ascending");
  }
  if (s.empty() || s.back() != diag) {
    throw std::invalid_argument("schedule for query tile " + std::to_string(query_tile) +
                                " omits the diagonal tile " + std::to_string(diag));
  }
}

template <typename Real>
AttentionResult<Real> blockwise_attention(const Workload& w, const ScheduleProvider& schedule,
                                          TileConfig tiles, bool causal, Stage stage) {
  w.validate();
  const TileGrid grid(w.queries(), w.history(), tiles, causal);
  const std::size_t h = w.heads(), d = w.head_dim(), s_len = w.history();
  const std::size_t group = w.group_size();
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(d));

  AttentionResult<Real> result;
  result.output = Tensor3<Real>(w.queries(), h, d, Real{0});
  result.log_normalizer.assign(w.queries() * h, 0.0);

  const std::size_t qtiles = static_cast<std::size_t>(grid.query_tile_count());
  std::vector<TileCount> pair_counts(h * qtiles);

  parallel_for(h * qtiles, [&](std::size_t pair) {
    const std::size_t head = pair / qtiles;
    const std::int64_t qt = grid.first_query_tile() + static_cast<std::int64_t>(pair % qtiles);
    const std::size_t kv = gqa_map(head, group, h);
    const BlockSchedule tiles_to_visit = schedule(head, qt);
    validate_schedule(grid, qt, tiles_to_visit);

    const auto [row_begin, row_end] = grid.rows(qt);
    std::vector<SoftmaxState<Real>> states(row_end - row_begin, SoftmaxState<Real>(d));
    std::vector<Real> scores(tiles.tile_k);
    const StridedRows keys = w.keys(kv);
    const StridedRows values = w.values(kv);

    for (const std::int64_t tile : tiles_to_visit) {
      const std::size_t kv_begin = static_cast<std::size_t>(tile) * tiles.tile_k;
      const std::size_t kv_end = std::min(kv_begin + tiles.tile_k, s_len);
      const std::size_t count = kv_end - kv_begin;
      const StridedRows tile_values{values.data.subspan(kv_begin * values.stride), count, d,
                                    values.stride};
      for (std::size_t r = row_begin; r < row_end; ++r) {
        const auto q = w.q.row(r, head);
        const std::size_t limit = grid.row_limit(r);
        for (std::size_t j = 0; j < count; ++j) {
          const std::size_t pos = kv_begin + j;
          scores[j] = pos > limit ? -std::numeric_limits<Real>::infinity()
                                  : dot<Real>(q, keys.row(pos)) * scale;
        }
        merge_block(states[r - row_begin], std::span<const Real>(scores.data(), count), tile_values);
      }
    }
    for (std::size_t r = row_begin; r < row_end; ++r) {
      const auto& st = states[r - row_begin];
      st.finalize(result.output.row(r, head));
      result.log_normalizer[r * h + head] = st.log_normalizer();
    }
    pair_counts[pair] = {tiles_to_visit.size(), static_cast<std::uint64_t>(grid.total_tiles(qt))};
  });

  for (std::size_t pair = 0; pair < pair_counts.size(); ++pair) {
    result.ledger.record(stage, pair / qtiles, pair_counts[pair].visited, pair_counts[pair].total);
  }
  return result;
}

template <typename Real>
std::vector<Real> attend_row(std::span<const float> query, std::span<const KvBlock> blocks,
                             double* log_normalizer) {
  const std::size_t d = query.size();
  const Real scale = Real{1} / std::sqrt(static_cast<Real>(d));
  SoftmaxState<Real> state(d);
  std::vector<Real> scores;
  for (const auto& block : blocks) {
    if (block.keys.cols != d || block.values.cols != d || block.keys.rows != block.values.rows) {
      throw std::invalid_argument("attend_row: block shape mismatch");
    }
    scores.resize(block.keys.rows);
    for (std::size_t j = 0; j < block.keys.rows; ++j) {
      scores[j] = dot<Real>(query, block.keys.row(j)) * scale;
    }
    merge_block(state, std::span<const Real>(scores), block.values);
  }
  std::vector<Real> out(d);
  state.finalize(out);
  if (log_normalizer) *log_normalizer = state.log_normalizer();
  return out;
}

template struct SoftmaxState<float>;
template struct SoftmaxState<double>;
template void merge_block<float>(SoftmaxState<float>&, std::span<const float>, const StridedRows&);
template void merge_block<double>(SoftmaxState<double>&, std::span<const double>, const StridedRows&);
template AttentionResult<float> blockwise_attention<float>(const Workload&, const ScheduleProvider&,
                                                           TileConfig, bool, Stage);
template AttentionResult<double> blockwise_attention<double>(const Workload&, const ScheduleProvider&,
                                                             TileConfig, bool, Stage);
template std::vector<float> attend_row<float>(std::span<const float>, std::span<const KvBlock>, double*);
template std::vector<double> attend_row<double>(std::span<const float>, std::span<const KvBlock>, double*);

}  // namespace hybrid_attn
