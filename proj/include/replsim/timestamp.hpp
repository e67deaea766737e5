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

#include <compare>
#include <cstdint>
#include <ostream>

#include "replsim/common.hpp"

namespace replsim {

/// Per-record logical timestamp. Version increases monotonically at every
/// update; node_id identifies the coordinator that produced the version and
/// breaks ties, so the order is total.
struct Timestamp {
  std::uint64_t version = 0;
  NodeId node = 0;

  friend auto operator<=>(const Timestamp& a, const Timestamp& b) {
    if (auto c = a.version <=> b.version; c != 0) return c;
    return a.node <=> b.node;
  }
  friend bool operator==(const Timestamp&, const Timestamp&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Timestamp& t) {
    return os << "(" << t.version << "," << t.node << ")";
  }
};

enum class Ordering { Less, Equal, Greater };

inline Ordering compare_timestamps(const Timestamp& a, const Timestamp& b) {
  auto c = a <=> b;
  if (c < 0) return Ordering::Less;
  if (c > 0) return Ordering::Greater;
  return Ordering::Equal;
}

/// Next write timestamp: bump the current version, stamp the coordinator.
inline Timestamp next_write_timestamp(const Timestamp& current,
                                      NodeId coordinator) {
  return Timestamp{current.version + 1, coordinator};
}

}  // namespace replsim
