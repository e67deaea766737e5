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
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

enum class MsgKind : std::uint8_t {
  INV,
  ACK,
  ACK_C,
  ACK_P,
  VAL,
  VAL_C,
  VAL_P,
  PERSIST_SC,
  ACK_P_SC,
  VAL_P_SC,
  RECOV_START,
  RECOV_START_ACK,
  CATCHUP_REQ,
  CATCHUP_RESP,
  RECOV_END,
  HEARTBEAT,
  HEARTBEAT_ACK,
  RECONFIG,
};

inline std::string_view to_string(MsgKind k) {
  switch (k) {
    case MsgKind::INV: return "INV";
    case MsgKind::ACK: return "ACK";
    case MsgKind::ACK_C: return "ACK_C";
    case MsgKind::ACK_P: return "ACK_P";
    case MsgKind::VAL: return "VAL";
    case MsgKind::VAL_C: return "VAL_C";
    case MsgKind::VAL_P: return "VAL_P";
    case MsgKind::PERSIST_SC: return "PERSIST_SC";
    case MsgKind::ACK_P_SC: return "ACK_P_SC";
    case MsgKind::VAL_P_SC: return "VAL_P_SC";
    case MsgKind::RECOV_START: return "RECOV_START";
    case MsgKind::RECOV_START_ACK: return "RECOV_START_ACK";
    case MsgKind::CATCHUP_REQ: return "CATCHUP_REQ";
    case MsgKind::CATCHUP_RESP: return "CATCHUP_RESP";
    case MsgKind::RECOV_END: return "RECOV_END";
    case MsgKind::HEARTBEAT: return "HEARTBEAT";
    case MsgKind::HEARTBEAT_ACK: return "HEARTBEAT_ACK";
    case MsgKind::RECONFIG: return "RECONFIG";
  }
  return "?";
}

inline std::optional<MsgKind> parse_msg_kind(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(MsgKind::RECONFIG); ++i) {
    auto k = static_cast<MsgKind>(i);
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

inline bool is_membership_kind(MsgKind k) {
  return k == MsgKind::HEARTBEAT || k == MsgKind::HEARTBEAT_ACK ||
         k == MsgKind::RECONFIG;
}

inline bool is_recovery_kind(MsgKind k) {
  return k == MsgKind::RECOV_START || k == MsgKind::RECOV_START_ACK ||
         k == MsgKind::CATCHUP_REQ || k == MsgKind::CATCHUP_RESP ||
         k == MsgKind::RECOV_END;
}

/// One (key, value, ts) update. The value payload is identified by the write
/// timestamp (see value_hash); entries carry no separate value bytes.
struct UpdateEntry {
  Key key = 0;
  Timestamp ts;
  bool committed_mark = false;  // buddy-filled for Partially_persisted entries

  friend bool operator==(const UpdateEntry&, const UpdateEntry&) = default;
  friend auto operator<=>(const UpdateEntry&, const UpdateEntry&) = default;
};

/// Membership view carried by RECONFIG.
struct MembershipView {
  Epoch epoch = 0;
  std::vector<NodeId> live;        // sorted
  std::vector<NodeId> recovering;  // subset of live, sorted
  bool cluster_paused = false;

  bool is_live(NodeId n) const {
    return std::binary_search(live.begin(), live.end(), n);
  }
  bool is_recovering(NodeId n) const {
    return std::binary_search(recovering.begin(), recovering.end(), n);
  }

  friend bool operator==(const MembershipView&, const MembershipView&) = default;
};

struct Message {
  MsgKind kind = MsgKind::INV;
  NodeId src = 0;
  NodeId dst = 0;
  Epoch epoch = 0;
  Key key = 0;
  Timestamp ts;
  ScopeId scope = 0;

  // Kind-dependent payloads.
  std::vector<UpdateEntry> entries;  // PERSIST_SC write set, CATCHUP_REQ list,
                                     // CATCHUP_RESP marked list
  std::vector<UpdateEntry> buffer;   // CATCHUP_RESP missed-updates snapshot
  MembershipView view;               // RECONFIG
  bool flag = false;                 // CATCHUP_REQ: fullcopy; CATCHUP_RESP:
                                     // overflowed; fullcopy chunk: last chunk
  std::uint64_t chunk_index = 0;     // fullcopy chunk pull
  std::uint64_t chunk_total = 0;

  friend bool operator==(const Message&, const Message&) = default;
};

inline void fingerprint_update_entry(Fingerprint& f, const UpdateEntry& e) {
  f.put_u64(e.key);
  f.put_u64(e.ts.version);
  f.put_u32(e.ts.node);
  f.put_bool(e.committed_mark);
}

inline void fingerprint_message(Fingerprint& f, const Message& m) {
  f.put_u32(static_cast<std::uint32_t>(m.kind));
  f.put_u32(m.src);
  f.put_u32(m.dst);
  f.put_u64(m.epoch);
  f.put_u64(m.key);
  f.put_u64(m.ts.version);
  f.put_u32(m.ts.node);
  f.put_u64(m.scope);
  f.put_bool(m.flag);
  f.put_u64(m.chunk_index);
  f.put_u64(m.chunk_total);
  f.put_u64(m.entries.size());
  for (const auto& e : m.entries) fingerprint_update_entry(f, e);
  f.put_u64(m.buffer.size());
  for (const auto& e : m.buffer) fingerprint_update_entry(f, e);
  f.put_u64(m.view.epoch);
  f.put_u64(m.view.live.size());
  for (auto n : m.view.live) f.put_u32(n);
  f.put_u64(m.view.recovering.size());
  for (auto n : m.view.recovering) f.put_u32(n);
  f.put_bool(m.view.cluster_paused);
}

/// Total order used to canonicalize in-flight message sets in the checker.
inline bool message_less(const Message& a, const Message& b) {
  Fingerprint fa, fb;
  fingerprint_message(fa, a);
  fingerprint_message(fb, b);
  return fa.value() < fb.value();
}

}  // namespace replsim
