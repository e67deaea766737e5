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
#include <string>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

/// One completed client operation. Values map one-to-one to writer
/// timestamps, so a read's observation identifies the write it saw
/// (version 0 = the initial value).
struct HistoryOp {
  bool is_write = false;
  Key key = 0;
  Timestamp ts;       // written, or observed by the read
  SimTime invoke = 0;
  SimTime complete = 0;
};

struct LinViolation {
  Key key = 0;
  std::string reason;
};

/// Per-key linearizability check for a register with unique write values.
/// Writes are totally ordered by timestamp; the history is legal iff
///   (1) timestamp order never contradicts real-time order between writes,
///   (2) no read observes a write invoked after the read completed,
///   (3) no read observes a value older than one established by an operation
///       that completed before the read began.
inline std::vector<LinViolation> check_linearizability(
    const std::vector<HistoryOp>& history) {
  std::vector<LinViolation> out;
  std::map<Key, std::vector<HistoryOp>> per_key;
  for (const auto& op : history) per_key[op.key].push_back(op);

  for (auto& [key, ops] : per_key) {
    std::map<Timestamp, std::pair<SimTime, SimTime>> writes;
    for (const auto& op : ops) {
      if (op.is_write) writes[op.ts] = {op.invoke, op.complete};
    }
    // (1) scan writes in timestamp order; an earlier-ts write invoked after a
    // later-ts write completed is a contradiction.
    SimTime max_invoke_so_far = -1;
    for (const auto& [ts, iv] : writes) {
      if (iv.second < max_invoke_so_far) {
        out.push_back({key, "write timestamp order contradicts real time"});
        break;
      }
      max_invoke_so_far = std::max(max_invoke_so_far, iv.first);
    }
    // (2) + (3): sweep all ops by completion time; for each read, the maximum
    // timestamp established by ops completed before its invocation bounds
    // what it may observe from below.
    std::vector<const HistoryOp*> by_complete;
    std::vector<const HistoryOp*> reads_by_invoke;
    for (const auto& op : ops) {
      by_complete.push_back(&op);
      if (!op.is_write) reads_by_invoke.push_back(&op);
    }
    std::sort(by_complete.begin(), by_complete.end(),
              [](const HistoryOp* a, const HistoryOp* b) {
                return a->complete < b->complete;
              });
    std::sort(reads_by_invoke.begin(), reads_by_invoke.end(),
              [](const HistoryOp* a, const HistoryOp* b) {
                return a->invoke < b->invoke;
              });
    std::size_t ci = 0;
    Timestamp established{};
    for (const auto* r : reads_by_invoke) {
      while (ci < by_complete.size() && by_complete[ci]->complete < r->invoke) {
        established = std::max(established, by_complete[ci]->ts);
        ++ci;
      }
      if (r->ts < established) {
        out.push_back({key, "stale read after a newer completed operation"});
      }
      if (r->ts.version > 0) {
        auto wit = writes.find(r->ts);
        // A miss is legal: the value may come from a write that never
        // completed at a client (e.g., a takeover replay took effect).
        if (wit != writes.end() && wit->second.first > r->complete) {
          out.push_back({key, "read observed a future write"});
        }
      }
    }
  }
  return out;
}

}  // namespace replsim
