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

#include <cstdint>
#include <map>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

/// Per-absent-node buffer of committed updates, deduplicated by key: a newer
/// update to a record overwrites the earlier one. Once the configured byte
/// capacity is exceeded the contents are discarded and incremental recovery is
/// disabled for this outage (fallback to full copy).
class MissedUpdatesBuffer {
 public:
  MissedUpdatesBuffer() = default;
  MissedUpdatesBuffer(std::uint64_t capacity_bytes, std::uint64_t entry_bytes)
      : capacity_bytes_(capacity_bytes), entry_bytes_(entry_bytes) {}

  /// Dedup-insert; returns true if the buffer changed.
  bool record(Key key, const Timestamp& ts) {
    if (overflowed_) return false;
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      if (ts <= it->second) return false;
      it->second = ts;
      return true;
    }
    if ((entries_.size() + 1) * entry_bytes_ > capacity_bytes_) {
      entries_.clear();
      overflowed_ = true;
      return true;
    }
    entries_.emplace(key, ts);
    return true;
  }

  bool overflowed() const { return overflowed_; }
  std::uint64_t size() const { return entries_.size(); }
  std::uint64_t bytes() const { return entries_.size() * entry_bytes_; }
  std::uint64_t entry_bytes() const { return entry_bytes_; }
  const std::map<Key, Timestamp>& entries() const { return entries_; }

  std::vector<UpdateEntry> snapshot() const {
    std::vector<UpdateEntry> out;
    out.reserve(entries_.size());
    for (const auto& [key, ts] : entries_) out.push_back(UpdateEntry{key, ts});
    return out;
  }

  void fingerprint(Fingerprint& f) const {
    f.put_bool(overflowed_);
    f.put_u64(entries_.size());
    for (const auto& [key, ts] : entries_) {
      f.put_u64(key);
      f.put_u64(ts.version);
      f.put_u32(ts.node);
    }
  }

 private:
  std::map<Key, Timestamp> entries_;
  std::uint64_t capacity_bytes_ = UINT64_MAX;
  std::uint64_t entry_bytes_ = 1;
  bool overflowed_ = false;
};

}  // namespace replsim
