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
#include <span>
#include <string>
#include <vector>

#include "hybrid_attn/attn_core.h"

namespace hybrid_attn {

enum class HeadRole { retrieval, streaming };
std::string to_string(HeadRole role);

struct StreamingGeometry {
  std::size_t sink_blocks = 1;
  std::size_t local_blocks = 2;
};

struct HeadProfile {
  double gate = 1.0;  // alpha in [0, 1]; closer to 1 means retrieval
  HeadRole role = HeadRole::retrieval;
  std::size_t sink_blocks = 1;
  std::size_t local_blocks = 2;

  bool operator==(const HeadProfile&) const = default;
};

struct HeadClassification {
  std::vector<HeadProfile> profiles;
  double threshold = 0.0;  // tau: smallest gate among retrieval heads
  std::size_t retrieval_heads = 0;
};

// Splits heads by gate value at the target-sparsity quantile. Heads are ranked
// by (gate, lower index first); the top ceil((1 - s) * H) become retrieval
// heads, so ties at tau resolve toward the lower head index and the count is
// exact. tau is the gate of the lowest-ranked retrieval head; at s = 0.5 it is
// a median of the gates (the upper median when H is even).
HeadClassification classify_heads(std::span<const double> gates, double target_sparsity,
                                  StreamingGeometry geometry = {});

// Ordered, non-overlapping [begin, end) ranges over the KV tile axis.
class BlockIterator {
 public:
  struct Segment {
    std::int64_t begin = 0;
    std::int64_t end = 0;
    bool operator==(const Segment&) const = default;
  };

  BlockIterator() = default;
  // Adjacent segments are coalesced; empty ones are dropped. Throws
  // std::invalid_argument for overlapping or descending segments.
  explicit BlockIterator(std::vector<Segment> segments);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t size() const;

  class Cursor {
   public:
    using value_type = std::int64_t;
    using difference_type = std::ptrdiff_t;

    Cursor() = default;
    std::int64_t operator*() const { return tile_; }
    Cursor& operator++();
    Cursor operator++(int) {
      Cursor c = *this;
      ++*this;
      return c;
    }
    bool operator==(const Cursor& o) const { return segment_ == o.segment_ && tile_ == o.tile_; }

   private:
    friend class BlockIterator;
    Cursor(const std::vector<Segment>* segs, std::size_t seg, std::int64_t tile, std::size_t* steps)
        : segments_(segs), segment_(seg), tile_(tile), steps_(steps) {}
    const std::vector<Segment>* segments_ = nullptr;
    std::size_t segment_ = 0;
    std::int64_t tile_ = 0;
    std::size_t* steps_ = nullptr;
  };

  // `steps`, when given, counts index computations (one per advance).
  Cursor begin(std::size_t* steps = nullptr) const;
  Cursor end() const;

 private:
  std::vector<Segment> segments_;
};

// All visited tiles in ascending order; between-segment jumps cost O(1).
BlockSchedule iterate(const BlockIterator& it, std::size_t* index_computations = nullptr);

// Lambda-shaped schedule: the first sink_blocks tiles plus the local_blocks
// tiles ending at the query tile's diagonal. Short sequences collapse to the
// tiles that exist, without double counting.
BlockIterator streaming_schedule(std::int64_t seq_tiles, const HeadProfile& profile,
                                 std::int64_t query_tile);

// Full window [0, diagonal].
BlockIterator dense_iterator(std::int64_t diagonal);

}  // namespace hybrid_attn
