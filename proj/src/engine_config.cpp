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

#include "hybrid_attn/engine_config.h"

#include <fstream>
#include <set>

namespace hybrid_attn {

void EngineConfig::validate() const {
  if (physical_page == 0) throw ConfigError("physical_page must be >= 1");
  if (logical_page == 0 || physical_page % logical_page != 0) {
    throw ConfigError("logical_page must be >= 1 and divide physical_page");
  }
  if (quant_bits != 0 && (quant_bits < 2 || quant_bits > 8)) {
    throw ConfigError("quant_bits must be 0 or in [2, 8]");
  }
  if (budget_tokens < physical_page) {
    throw ConfigError("budget_tokens (" + std::to_string(budget_tokens) +
                      ") must be at least one physical page (" + std::to_string(physical_page) + ")");
  }
  if (reuse_interval == 0) throw ConfigError("reuse_interval must be >= 1");
  if (sink_blocks == 0 || local_blocks == 0) throw ConfigError("sink_blocks and local_blocks must be >= 1");
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) {
    throw ConfigError("target_sparsity must lie in [0, 1)");
  }
  if (tile_q_prefill == 0 || physical_page % tile_q_prefill != 0) {
    throw ConfigError("tile_q_prefill must be >= 1 and divide physical_page");
  }
}

CacheConfig EngineConfig::cache_config() const {
  return {physical_page, logical_page, quant_bits, sink_blocks, local_blocks};
}

nlohmann::ordered_json to_json(const EngineConfig& c) {
  nlohmann::ordered_json j;
  j["physical_page"] = c.physical_page;
  j["logical_page"] = c.logical_page;
  j["quant_bits"] = c.quant_bits;
  j["budget_tokens"] = c.budget_tokens;
  j["reuse_interval"] = c.reuse_interval;
  j["sink_blocks"] = c.sink_blocks;
  j["local_blocks"] = c.local_blocks;
  j["target_sparsity"] = c.target_sparsity;
  j["tile_q_prefill"] = c.tile_q_prefill;
  j["seed"] = c.seed;
  return j;
}

EngineConfig engine_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("engine config must be a JSON object");
  static const std::set<std::string> known = {
      "physical_page", "logical_page", "quant_bits",     "budget_tokens", "reuse_interval",
      "sink_blocks",   "local_blocks", "target_sparsity", "tile_q_prefill", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown engine config key '" + key + "'");
  }
  EngineConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("physical_page", c.physical_page);
    get("logical_page", c.logical_page);
    get("quant_bits", c.quant_bits);
    get("budget_tokens", c.budget_tokens);
    get("reuse_interval", c.reuse_interval);
    get("sink_blocks", c.sink_blocks);
    get("local_blocks", c.local_blocks);
    get("target_sparsity", c.target_sparsity);
    get("tile_q_prefill", c.tile_q_prefill);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("engine config: ") + e.what());
  }
  c.validate();
  return c;
}

EngineConfig load_engine_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return engine_config_from_json(j);
}

}  // namespace hybrid_attn
