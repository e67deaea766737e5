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
#include <string>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

enum class TimerKind : std::uint8_t {
  InvAck,       // coordinator: rebroadcast INVs / PERSIST_SC
  AckVal,       // follower: resend ACKs
  Takeover,     // staggered takeover of an incomplete write
  RecovRetry,   // recovering node: re-send RECOV_START / CATCHUP_REQ
  Heartbeat,    // CM period tick
};

inline std::string_view to_string(TimerKind k) {
  switch (k) {
    case TimerKind::InvAck: return "inv_ack";
    case TimerKind::AckVal: return "ack_val";
    case TimerKind::Takeover: return "takeover";
    case TimerKind::RecovRetry: return "recov_retry";
    case TimerKind::Heartbeat: return "heartbeat";
  }
  return "?";
}

struct TimerKey {
  TimerKind kind = TimerKind::InvAck;
  Key key = 0;
  Timestamp ts;
  ScopeId scope = 0;

  friend auto operator<=>(const TimerKey&, const TimerKey&) = default;
  friend bool operator==(const TimerKey&, const TimerKey&) = default;
};

struct TimerSet {
  TimerKey timer;
  SimTime delay = 0;
};

enum class OpStatus : std::uint8_t { Ok, Rejected, Stalled };

/// Client completion. `ts` is the write's assigned timestamp, or the
/// timestamp of the value a read observed.
struct ClientCompletion {
  RequestId request = 0;
  OpStatus status = OpStatus::Ok;
  Timestamp ts;
};

/// Request to push one entry to the local NVM log. The entry becomes durable
/// (and is appended to the log) when the driver reports persist completion.
struct PersistRequest {
  Key key = 0;
  Timestamp ts;
  ScopeId scope = 0;
  bool background = false;   // Event-model background flush
  bool recovery = false;     // issued while applying recovery state
  std::uint64_t size_bytes = 0;  // 0 = one key/value entry

  friend bool operator==(const PersistRequest&, const PersistRequest&) = default;
};

/// Out-of-band notifications for the driving harness (invariant hooks,
/// recovery progress). Not part of the protocol.
struct StepEvent {
  enum class Kind : std::uint8_t {
    GdpSet,             // gdp_flag set for (key, ts)
    StaleEpochDrop,     // a protocol message was dropped as stale
    RecoveryDone,       // recovery finished at this node
    BufferOverflow,     // a Missed_updates buffer overflowed
    ShadowEntered,
    FullyOnline,
    ScenarioFault,      // unsupported condition; harness must halt
  };
  Kind kind = Kind::GdpSet;
  Key key = 0;
  Timestamp ts;
  NodeId peer = kNoNode;
  std::string detail;
};

/// Phase timing for one recovery, measured at the recovering node.
struct RecoveryReport {
  NodeId node = kNoNode;
  bool incremental = true;
  bool fallback_fullcopy = false;
  SimTime start_to_ack = 0;
  SimTime catchup_to_resp = 0;
  SimTime apply_to_end = 0;
  SimTime total = 0;
  std::uint64_t buffer_entries = 0;
  std::uint64_t buffer_bytes = 0;
  std::uint64_t entries_rejected = 0;
  std::uint64_t entries_replayed = 0;
};

/// Deterministic result of one state-machine step.
struct StepOutput {
  std::vector<Message> out;
  std::vector<TimerSet> set_timers;
  std::vector<TimerKey> cancel_timers;
  std::vector<ClientCompletion> completions;
  std::vector<PersistRequest> persists;
  std::vector<StepEvent> events;
  std::vector<RecoveryReport> recovery_reports;

  void merge(StepOutput&& o) {
    auto mv = [](auto& dst, auto& src) {
      dst.insert(dst.end(), std::make_move_iterator(src.begin()),
                 std::make_move_iterator(src.end()));
    };
    mv(out, o.out);
    mv(set_timers, o.set_timers);
    mv(cancel_timers, o.cancel_timers);
    mv(completions, o.completions);
    mv(persists, o.persists);
    mv(events, o.events);
    mv(recovery_reports, o.recovery_reports);
  }
};

}  // namespace replsim
