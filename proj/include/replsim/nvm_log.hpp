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

#include <algorithm>
#include <map>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/model.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

/// One durable log record. gdp_flag is set once the write is known to be
/// persisted at every replica (coordinator/follower global durability point).
struct NvmLogEntry {
  Key key = 0;
  Timestamp ts;
  bool gdp_flag = false;
  ScopeId scope = 0;

  friend bool operator==(const NvmLogEntry&, const NvmLogEntry&) = default;
};

/// Append-only durable log, in local-persist order, at most one entry per
/// (key, ts). Survives crashes; everything else in a node is volatile.
class NvmLog {
 public:
  bool contains(Key key, const Timestamp& ts) const {
    auto it = index_.find(key);
    if (it == index_.end()) return false;
    for (auto i : it->second) {
      if (entries_[i].ts == ts) return true;
    }
    return false;
  }

  /// Highest durable timestamp for a key, or (0,0) if none.
  Timestamp latest(Key key) const {
    Timestamp best{};
    auto it = index_.find(key);
    if (it == index_.end()) return best;
    for (auto i : it->second) best = std::max(best, entries_[i].ts);
    return best;
  }

  void append(Key key, const Timestamp& ts, ScopeId scope) {
    if (contains(key, ts)) return;  // retransmitted persist
    index_[key].push_back(entries_.size());
    entries_.push_back(NvmLogEntry{key, ts, false, scope});
  }

  /// Returns false if no entry with exactly this (key, ts) exists.
  bool set_gdp_flag(Key key, const Timestamp& ts) {
    auto it = index_.find(key);
    if (it == index_.end()) return false;
    for (auto i : it->second) {
      if (entries_[i].ts == ts) {
        entries_[i].gdp_flag = true;
        return true;
      }
    }
    return false;
  }

  /// True if some entry for `key` with ts' >= ts is durable.
  bool covers(Key key, const Timestamp& ts) const { return latest(key) >= ts; }

  const std::vector<NvmLogEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Durable state: highest-ts entry per key.
  std::map<Key, Timestamp> fold() const {
    std::map<Key, Timestamp> out;
    for (const auto& e : entries_) {
      auto [it, inserted] = out.emplace(e.key, e.ts);
      if (!inserted && e.ts > it->second) it->second = e.ts;
    }
    return out;
  }

  void fingerprint(Fingerprint& f) const {
    f.put_u64(entries_.size());
    for (const auto& e : entries_) {
      f.put_u64(e.key);
      f.put_u64(e.ts.version);
      f.put_u32(e.ts.node);
      f.put_bool(e.gdp_flag);
      f.put_u64(e.scope);
    }
  }

 private:
  std::vector<NvmLogEntry> entries_;
  std::map<Key, std::vector<std::size_t>> index_;
};

/// Partially-persisted compilation: for each key, the highest-ts entry with a
/// clear gdp_flag, unless a same-key entry with gdp_flag set exists at
/// ts' >= ts (the flagged newer entry proves the older outcome moot).
///
/// Under Event no entry ever carries a gdp_flag, so the dilemma covers the
/// whole durable state: one entry per key (its highest-ts log entry).
inline std::vector<UpdateEntry> compile_partially_persisted(
    const NvmLog& log, PersistencyModel model) {
  std::map<Key, Timestamp> best_unflagged;
  std::map<Key, Timestamp> best_flagged;
  for (const auto& e : log.entries()) {
    auto& slot = e.gdp_flag ? best_flagged[e.key] : best_unflagged[e.key];
    slot = std::max(slot, e.ts);
  }
  std::vector<UpdateEntry> out;
  for (const auto& [key, ts] : best_unflagged) {
    if (model != PersistencyModel::Event) {
      auto it = best_flagged.find(key);
      if (it != best_flagged.end() && it->second >= ts) continue;
    }
    out.push_back(UpdateEntry{key, ts, false});
  }
  return out;
}

}  // namespace replsim
