/*
 * Copyright (c) 2026, the replsim authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cinttypes>
#include <cstdio>
#include <map>
#include <string>

#include "replsim/common.hpp"
#include "replsim/replica.hpp"

namespace replsim {

/// Volatile state for convergence comparison: key -> (ts, value hash).
inline std::map<Key, std::pair<Timestamp, std::uint64_t>> volatile_state(
    const Replica& r) {
  std::map<Key, std::pair<Timestamp, std::uint64_t>> out;
  const auto& cfg = r.config();
  for (const auto& [key, rec] : r.store()) {
    out[key] = {rec.ts, value_hash(key, rec.ts.version, rec.ts.node, cfg.seed,
                                   cfg.value_bytes)};
  }
  return out;
}

/// Durable state: highest-ts log entry per key.
inline std::map<Key, Timestamp> durable_state(const Replica& r) {
  return r.nvm_log().fold();
}

/// Sorted (key, ts_version, ts_node, value_hash) lines plus an
/// order-independent digest of the durable per-key state.
inline std::string state_dump(const Replica& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "node %u volatile\n", r.id());
  out += buf;
  for (const auto& [key, v] : volatile_state(r)) {
    std::snprintf(buf, sizeof(buf),
                  "k=%" PRIu64 " v=%" PRIu64 " n=%u h=%016" PRIx64 "\n", key,
                  v.first.version, v.first.node, v.second);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "node %u nvm\n", r.id());
  out += buf;
  Fingerprint digest;
  for (const auto& [key, ts] : durable_state(r)) {
    std::uint64_t h = value_hash(key, ts.version, ts.node, r.config().seed,
                                 r.config().value_bytes);
    std::snprintf(buf, sizeof(buf),
                  "k=%" PRIu64 " v=%" PRIu64 " n=%u h=%016" PRIx64 "\n", key,
                  ts.version, ts.node, h);
    out += buf;
    digest.put_u64(key);
    digest.put_u64(ts.version);
    digest.put_u32(ts.node);
  }
  std::snprintf(buf, sizeof(buf), "digest %u %016" PRIx64 "\n", r.id(),
                digest.value());
  out += buf;
  return out;
}

inline bool volatile_states_equal(const Replica& a, const Replica& b,
                                  std::string* why = nullptr) {
  auto sa = volatile_state(a);
  auto sb = volatile_state(b);
  if (sa == sb) return true;
  if (why != nullptr) {
    for (const auto& [k, v] : sa) {
      auto it = sb.find(k);
      if (it == sb.end() || it->second != v) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "key %" PRIu64 ": node %u has v%" PRIu64 ",n%u", k,
                      a.id(), v.first.version, v.first.node);
        *why = buf;
        break;
      }
    }
    if (why->empty()) *why = "extra keys at node " + std::to_string(b.id());
  }
  return false;
}

inline bool durable_states_equal(const Replica& a, const Replica& b) {
  return durable_state(a) == durable_state(b);
}

}  // namespace replsim
