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
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "hybrid_attn/kv_store.h"
#include "hybrid_attn/static_sparsity.h"

namespace hybrid_attn {

// Invalid configuration or usage; the CLI maps it to exit status 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EngineConfig {
  std::size_t physical_page = 64;
  std::size_t logical_page = 16;
  int quant_bits = 4;  // 0 disables KV quantization
  std::size_t budget_tokens = 4096;
  std::size_t reuse_interval = 4;
  std::size_t sink_blocks = 1;
  std::size_t local_blocks = 2;
  double target_sparsity = 0.5;
  std::size_t tile_q_prefill = 64;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;

  CacheConfig cache_config() const;
  StreamingGeometry geometry() const { return {sink_blocks, local_blocks}; }

  bool operator==(const EngineConfig&) const = default;
};

nlohmann::ordered_json to_json(const EngineConfig& config);
// Missing keys keep their defaults; unknown keys and bad values throw ConfigError.
EngineConfig engine_config_from_json(const nlohmann::json& j);
EngineConfig load_engine_config(const std::string& path);

}  // namespace hybrid_attn
