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

#include "hybrid_attn/static_sparsity.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hybrid_attn {

std::string to_string(HeadRole role) { return role == HeadRole::retrieval ? "retrieval" : "streaming"; }

HeadClassification classify_heads(std::span<const double> gates, double target_sparsity,
                                  StreamingGeometry geometry) {
  if (gates.empty()) throw std::invalid_argument("classify_heads: empty gate list");
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) {
    throw std::invalid_argument("classify_heads: target sparsity must lie in [0, 1)");
  }
  if (geometry.sink_blocks == 0 || geometry.local_blocks == 0) {
    throw std::invalid_argument("classify_heads: sink and local blocks must be >= 1");
  }
  for (double g : gates) {
    if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("classify_heads: gate outside [0, 1]");
  }
  const std::size_t heads = gates.size();
  // 1e-9 absorbs representation error in (1 - s) * H, e.g. s = 0.3, H = 10.
  const auto retrieval = static_cast<std::size_t>(
      std::ceil((1.0 - target_sparsity) * static_cast<double>(heads) - 1e-9));

  std::vector<std::size_t> order(heads);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gates[a] > gates[b]; });

  HeadClassification out;
  out.profiles.resize(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    out.profiles[h] = {gates[h], HeadRole::streaming, geometry.sink_blocks, geometry.local_blocks};
  }
  for (std::size_t rank = 0; rank < retrieval; ++rank) {
    out.profiles[order[rank]].role = HeadRole::retrieval;
  }
  out.retrieval_heads = retrieval;
  out.threshold = gates[order[retrieval - 1]];
  return out;
}

BlockIterator::BlockIterator(std::vector<Segment> segments) {
  for (const auto& s : segments) {
    if (s.begin < 0 || s.end < s.begin) throw std::invalid_argument("BlockIterator: malformed segment");
    if (s.begin == s.end) continue;
    if (!segments_.empty()) {
      if (s.begin < segments_.back().end) {
        throw std::invalid_argument("BlockIterator: segments overlap or descend");
      }
      if (s.begin == segments_.back().end) {
        segments_.back().end = s.end;
        continue;
      }
    }
    segments_.push_back(s);
  }
}

std::size_t BlockIterator::size() const {
  std::size_t n = 0;
  for (const auto& s : segments_) n += static_cast<std::size_t>(s.end - s.begin);
  return n;
}

BlockIterator::Cursor BlockIterator::begin(std::size_t* steps) const {
  if (segments_.empty()) return end();
  if (steps) ++*steps;
  return Cursor(&segments_, 0, segments_.front().begin, steps);
}

BlockIterator::Cursor BlockIterator::end() const {
  return Cursor(&segments_, segments_.size(), 0, nullptr);
}

BlockIterator::Cursor& BlockIterator::Cursor::operator++() {
  const auto& segs = *segments_;
  ++tile_;
  if (tile_ == segs[segment_].end) {
    ++segment_;
    if (segment_ == segs.size()) {
      tile_ = 0;
      return *this;
    }
    tile_ = segs[segment_].begin;
  }
  if (steps_) ++*steps_;
  return *this;
}

BlockSchedule iterate(const BlockIterator& it, std::size_t* index_computations) {
  BlockSchedule out;
  out.reserve(it.size());
  for (auto c = it.begin(index_computations); c != it.end(); ++c) out.push_back(*c);
  return out;
}

BlockIterator streaming_schedule(std::int64_t seq_tiles, const HeadProfile& profile,
                                 std::int64_t query_tile) {
  if (profile.role != HeadRole::streaming) {
    throw std::invalid_argument("streaming_schedule: head is not a streaming head");
  }
  if (query_tile < 0 || query_tile >= seq_tiles) {
    throw std::out_of_range("streaming_schedule: query tile outside [0, seq_tiles)");
  }
  const auto sink = static_cast<std::int64_t>(profile.sink_blocks);
  const auto local = static_cast<std::int64_t>(profile.local_blocks);
  const std::int64_t sink_end = std::min(sink, query_tile + 1);
  const std::int64_t local_begin = std::max(query_tile - local + 1, sink_end);
  return BlockIterator({{0, sink_end}, {local_begin, query_tile + 1}});
}

BlockIterator dense_iterator(std::int64_t diagonal) { return BlockIterator({{0, diagonal + 1}}); }

}  // namespace hybrid_attn
