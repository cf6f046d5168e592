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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace hybrid_attn {

// Dense row-major rank-3 tensor. Index order is [d0][d1][d2]; the innermost
// axis is always the head dimension in this library.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, T fill = T{})
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

  std::size_t dim0() const { return d0_; }
  std::size_t dim1() const { return d1_; }
  std::size_t dim2() const { return d2_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[offset(i, j, k)]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[offset(i, j, k)];
  }

  // Innermost vector at (i, j).
  std::span<T> row(std::size_t i, std::size_t j) { return {data_.data() + offset(i, j, 0), d2_}; }
  std::span<const T> row(std::size_t i, std::size_t j) const {
    return {data_.data() + offset(i, j, 0), d2_};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * d1_ + j) * d2_ + k;
  }

  std::size_t d0_ = 0;
  std::size_t d1_ = 0;
  std::size_t d2_ = 0;
  std::vector<T> data_;
};

// Rows of length `cols` laid out `stride` elements apart inside `data`.
// Used to view one KV head inside an interleaved [S][Hkv][D] buffer.
struct StridedRows {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  std::span<const float> row(std::size_t r) const { return data.subspan(r * stride, cols); }
};

template <typename A, typename B>
double max_abs_diff(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

// Norm-wise relative error max|a-b| / max|b|. Element-wise ratios are
// meaningless for attention outputs that cross zero.
template <typename A, typename B>
double relative_error(std::span<const A> a, std::span<const B> b) {
  double scale = 0.0;
  for (const auto& x : b) scale = std::max(scale, std::abs(static_cast<double>(x)));
  const double diff = max_abs_diff(a, b);
  if (scale == 0.0) return diff;
  return diff / scale;
}

}  // namespace hybrid_attn
