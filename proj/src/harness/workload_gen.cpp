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

#include "hybrid_attn/harness/workload_gen.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hybrid_attn/rng.h"

namespace hybrid_attn::harness {

namespace {

constexpr double kNeedleAmplitudeCap = 1.0;

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Distinct positions of the planted needles.
std::vector<std::int64_t> place_needles(const WorkloadSpec& spec, Rng& rng) {
  const auto np = static_cast<std::int64_t>(spec.physical_page);
  const auto nl = static_cast<std::int64_t>(spec.logical_page);
  const std::int64_t pages = static_cast<std::int64_t>(spec.history) / np;
  // Stay clear of the first page and the last two pages, which page
  // selection always keeps.
  const std::int64_t first_page = 1, last_page = pages - 3;
  std::vector<std::int64_t> out;
  if (spec.kind == WorkloadKind::needle) {
    const std::int64_t lo = first_page * np, hi = (last_page + 1) * np;
    for (std::size_t i = 0; i < spec.needle_count; ++i) {
      std::int64_t pos;
      do {
        pos = lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo)));
      } while (std::find(out.begin(), out.end(), pos) != out.end());
      out.push_back(pos);
    }
  } else {
    const auto span = static_cast<std::int64_t>(spec.cluster_span);
    const std::int64_t start =
        first_page + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(last_page - first_page - span + 2)));
    const std::int64_t slots = span * (np / nl);
    std::vector<std::int64_t> chosen;
    for (std::size_t i = 0; i < spec.needle_count; ++i) {
      std::int64_t slot;
      do {
        slot = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(slots)));
      } while (std::find(chosen.begin(), chosen.end(), slot) != chosen.end());
      chosen.push_back(slot);
      out.push_back(start * np + slot * nl + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(nl))));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::random: return "random";
    case WorkloadKind::needle: return "needle";
    case WorkloadKind::clustered_needles: return "clustered_needles";
  }
  return "random";
}

WorkloadKind parse_workload_kind(const std::string& name) {
  if (name == "random") return WorkloadKind::random;
  if (name == "needle") return WorkloadKind::needle;
  if (name == "clustered_needles") return WorkloadKind::clustered_needles;
  throw std::invalid_argument("unknown workload kind '" + name + "'");
}

void WorkloadSpec::validate() const {
  if (history == 0 || queries == 0 || heads == 0 || kv_heads == 0 || head_dim == 0) {
    throw std::invalid_argument("workload spec: all dimensions must be positive");
  }
  if (queries > history) throw std::invalid_argument("workload spec: queries exceed history");
  if (heads % kv_heads != 0) throw std::invalid_argument("workload spec: heads not a multiple of kv_heads");
  if (!(haystack_scale >= 0.0) || !(spike_rate >= 0.0 && spike_rate <= 1.0)) {
    throw std::invalid_argument("workload spec: bad haystack parameters");
  }
  if (kind == WorkloadKind::random) return;
  if (physical_page == 0 || logical_page == 0 || physical_page % logical_page != 0) {
    throw std::invalid_argument("workload spec: logical_page must divide physical_page");
  }
  if (history % physical_page != 0 || history / physical_page < 5) {
    throw std::invalid_argument("workload spec: needle kinds need S a multiple of physical_page and >= 5 pages");
  }
  if (needle_count == 0) throw std::invalid_argument("workload spec: needle_count must be >= 1");
  if (!(needle_margin > 0.0)) throw std::invalid_argument("workload spec: needle_margin must be > 0");
  if (kind == WorkloadKind::clustered_needles) {
    if (cluster_span == 0 || cluster_span > history / physical_page - 3) {
      throw std::invalid_argument("workload spec: cluster_span does not fit the sequence");
    }
    if (needle_count > cluster_span * (physical_page / logical_page)) {
      throw std::invalid_argument("workload spec: more needles than logical pages in the cluster");
    }
  } else if (needle_count > history - 3 * physical_page) {
    throw std::invalid_argument("workload spec: too many needles");
  }
}

GeneratedWorkload gen_workload(const WorkloadSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.queries, s = spec.history, h = spec.heads, hkv = spec.kv_heads,
                    d = spec.head_dim;
  GeneratedWorkload g;
  Workload& w = g.workload;
  w.q = Tensor3<float>(n, h, d);
  w.k = Tensor3<float>(s, hkv, d);
  w.v = Tensor3<float>(s, hkv, d);
  for (auto& x : w.q.data()) x = static_cast<float>(rng.normal());
  for (auto& x : w.k.data()) {
    if (spec.spike_rate > 0.0 && rng.uniform() < spec.spike_rate) {
      x = static_cast<float>(rng.uniform() < 0.5 ? -spec.spike_magnitude : spec.spike_magnitude);
    } else {
      x = static_cast<float>(spec.haystack_scale * rng.normal());
    }
  }
  for (auto& x : w.v.data()) x = static_cast<float>(rng.normal());
  if (spec.kind == WorkloadKind::random) return g;

  const std::size_t group = h / hkv;
  for (std::size_t kv = 0; kv < hkv; ++kv) {
    NeedleTruth truth;
    truth.kv_head = kv;
    truth.probe_head = kv * group;
    truth.positions = place_needles(spec, rng);
    const auto probe = w.q.row(n - 1, truth.probe_head);
    for (float x : probe) truth.q_l1 += std::abs(static_cast<double>(x));

    double best_other = -INFINITY;
    for (std::size_t j = 0; j < s; ++j) {
      if (std::binary_search(truth.positions.begin(), truth.positions.end(), static_cast<std::int64_t>(j))) continue;
      best_other = std::max(best_other, dot(probe, w.k.row(j, kv)));
    }
    const double amplitude = (best_other + spec.needle_margin * truth.q_l1) / truth.q_l1;
    if (amplitude > kNeedleAmplitudeCap) {
      throw std::invalid_argument(
          "needle margin " + std::to_string(spec.needle_margin) + " unattainable at D=" +
          std::to_string(d) + ": needs amplitude " + std::to_string(amplitude) +
          " but needle keys are confined to the unit box (max margin " +
          std::to_string(kNeedleAmplitudeCap - best_other / truth.q_l1) + ")");
    }
    truth.needle_score = INFINITY;
    for (std::int64_t pos : truth.positions) {
      auto key = w.k.row(static_cast<std::size_t>(pos), kv);
      for (std::size_t c = 0; c < d; ++c) {
        key[c] = static_cast<float>(probe[c] < 0 ? -amplitude : amplitude);
      }
      truth.needle_score = std::min(truth.needle_score, dot(probe, key));
      const std::int64_t page = pos / static_cast<std::int64_t>(spec.physical_page);
      if (truth.pages.empty() || truth.pages.back() != page) truth.pages.push_back(page);
    }
    truth.best_haystack_score = best_other;
    g.truth.push_back(std::move(truth));
  }
  return g;
}

nlohmann::ordered_json to_json(const WorkloadSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(spec.kind);
  j["history"] = spec.history;
  j["queries"] = spec.queries;
  j["heads"] = spec.heads;
  j["kv_heads"] = spec.kv_heads;
  j["head_dim"] = spec.head_dim;
  j["needle_margin"] = spec.needle_margin;
  j["needle_count"] = spec.needle_count;
  j["cluster_span"] = spec.cluster_span;
  j["physical_page"] = spec.physical_page;
  j["logical_page"] = spec.logical_page;
  j["haystack_scale"] = spec.haystack_scale;
  j["spike_rate"] = spec.spike_rate;
  j["spike_magnitude"] = spec.spike_magnitude;
  j["seed"] = spec.seed;
  return j;
}

WorkloadSpec workload_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("workload spec must be a JSON object");
  const nlohmann::ordered_json defaults = to_json(WorkloadSpec{});
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw std::invalid_argument("unknown workload spec key '" + key + "'");
  }
  WorkloadSpec s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  try {
    if (j.contains("kind")) s.kind = parse_workload_kind(j.at("kind").get<std::string>());
    get("history", s.history);
    get("queries", s.queries);
    get("heads", s.heads);
    get("kv_heads", s.kv_heads);
    get("head_dim", s.head_dim);
    get("needle_margin", s.needle_margin);
    get("needle_count", s.needle_count);
    get("cluster_span", s.cluster_span);
    get("physical_page", s.physical_page);
    get("logical_page", s.logical_page);
    get("haystack_scale", s.haystack_scale);
    get("spike_rate", s.spike_rate);
    get("spike_magnitude", s.spike_magnitude);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("workload spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::ordered_json to_json(const GeneratedWorkload& g) {
  const Workload& w = g.workload;
  nlohmann::ordered_json j;
  j["dims"] = {{"N", w.queries()}, {"S", w.history()}, {"H", w.heads()},
               {"Hkv", w.kv_heads()}, {"D", w.head_dim()}};
  j["q"] = std::vector<float>(w.q.data().begin(), w.q.data().end());
  j["k"] = std::vector<float>(w.k.data().begin(), w.k.data().end());
  j["v"] = std::vector<float>(w.v.data().begin(), w.v.data().end());
  auto& truth = j["needles"] = nlohmann::ordered_json::array();
  for (const auto& t : g.truth) {
    truth.push_back({{"kv_head", t.kv_head}, {"probe_head", t.probe_head},
                     {"positions", t.positions}, {"pages", t.pages},
                     {"needle_score", t.needle_score}, {"best_haystack_score", t.best_haystack_score}});
  }
  return j;
}

}  // namespace hybrid_attn::harness
