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
#include <cassert>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/missed_updates.hpp"
#include "replsim/model.hpp"
#include "replsim/nvm_log.hpp"
#include "replsim/step.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

/// Seeded protocol bugs for the mutation suite. All default off.
struct Mutations {
  bool ack_before_persist = false;       // durability ACK sent before persist
  bool val_on_partial_acks = false;      // VAL triggers one ACK early
  bool skip_ts_check_on_inv = false;     // lower-ts INVs overwrite the record
  bool skip_gdp_on_val = false;          // follower never sets gdp_flag
  bool no_ack_val_retry = false;         // ACK-VAL timer never armed
  bool no_inv_ack_retry = false;         // INV-ACK timer never armed
  bool buddy_mark_never_committed = false;  // buddy marks T_curr<T_in entries
  bool missed_updates_keep_old = false;  // buffer keeps the older entry
  bool no_takeover = false;              // incomplete writes never replayed

  bool any() const {
    return ack_before_persist || val_on_partial_acks || skip_ts_check_on_inv ||
           skip_gdp_on_val || no_ack_val_retry || no_inv_ack_retry ||
           buddy_mark_never_committed || missed_updates_keep_old || no_takeover;
  }
};

struct ReplicaConfig {
  NodeId id = 0;
  NodeId cm_node = 0;
  PersistencyModel model = PersistencyModel::Synch;
  std::uint32_t key_bytes = 16;
  std::uint32_t value_bytes = 128;
  std::uint64_t missed_updates_capacity = UINT64_MAX;
  std::uint64_t seed = 1;  // value salt
  SimTime inv_ack_timeout = 2_ms;
  SimTime ack_val_timeout = 2_ms;
  SimTime takeover_stagger = 100_us;
  SimTime recov_retry_timeout = 2_ms;
  std::uint64_t fullcopy_chunk_bytes = 64ull << 20;
  std::uint64_t fullcopy_total_bytes = 0;  // 0 = actual store size
  Mutations mutations;

  std::uint64_t entry_bytes() const { return key_bytes + value_bytes + 16; }
};

enum class RecoveryPhase : std::uint8_t {
  Down,
  ShadowReplica,
  AwaitStartAcks,
  AwaitCatchup,
  Applying,
  FullyOnline,
};

inline std::string_view to_string(RecoveryPhase p) {
  switch (p) {
    case RecoveryPhase::Down: return "Down";
    case RecoveryPhase::ShadowReplica: return "ShadowReplica";
    case RecoveryPhase::AwaitStartAcks: return "AwaitStartAcks";
    case RecoveryPhase::AwaitCatchup: return "AwaitCatchup";
    case RecoveryPhase::Applying: return "Applying";
    case RecoveryPhase::FullyOnline: return "FullyOnline";
  }
  return "?";
}

/// Volatile datastore cell. Invalid = INV applied, consistency VAL pending.
struct RecordEntry {
  Timestamp ts;
  bool valid = true;
};

/// Monotone per-write point marks (Table of visibility/durability points).
struct DurabilityMarks {
  bool lvp = false, ldp = false;
  bool cgvp = false, cgdp = false;
  bool fgvp = false, fgdp = false;
};

/// One write this node coordinates (client write or replay).
struct CoordWrite {
  ScopeId scope = 0;
  Epoch initiated_epoch = 0;
  std::set<NodeId> targeted;
  std::set<NodeId> acked;    // Synch
  std::set<NodeId> acked_c;  // split-ack models
  std::set<NodeId> acked_p;  // Strict, REnf
  bool local_persist_done = false;
  bool needs_local_persist = false;
  bool completed = false;
  bool val_c_sent = false;  // VAL under Synch/REnf
  bool val_p_sent = false;  // Strict only
  bool replay = false;
  RequestId request = 0;
  SimTime started = 0;
};

/// One write this node follows (INV received, VAL(s) pending).
struct FollowerPending {
  NodeId coordinator = kNoNode;
  ScopeId scope = 0;
  Epoch initiated_epoch = 0;
  bool persisted = false;
  bool await_val_c = true;
  bool await_val_p = false;
  bool sent_ack_c = false;      // ACK under Synch counts as the C flavor here
  bool ack_c_on_persist = false;  // Synch: ACK implies durability
  bool ack_p_on_persist = false;
};

/// Coordinator-side scope bookkeeping (Scope model).
struct ScopeState {
  enum class Phase : std::uint8_t { Open, Persisting, Done };
  Phase phase = Phase::Open;
  std::map<Key, Timestamp> writes;  // latest scope write per key
  std::set<NodeId> acked_p_sc;
  std::set<NodeId> targeted;
  Epoch initiated_epoch = 0;
  std::uint64_t flush_pending = 0;
  bool flush_issued = false;
  bool completed = false;
  RequestId request = 0;
};

/// Follower-side scope flush (created on PERSIST_SC).
struct FollowerScope {
  NodeId coordinator = kNoNode;
  std::vector<UpdateEntry> entries;
  std::uint64_t flush_pending = 0;
  bool acked = false;        // ACK_P_SC sent
  bool await_val_p_sc = true;
};

/// A durability ACK owed for an obsolete INV, payable once the local NVM
/// covers the timestamp.
struct DeferredAck {
  MsgKind kind = MsgKind::ACK;
  NodeId dst = kNoNode;
  Key key = 0;
  Timestamp ts;
  ScopeId scope = 0;
};

/// Per-node protocol state machine. Single-owner: the driver (simulator or
/// checker) serializes all steps; identical (state, input) yields identical
/// StepOutput.
class Replica {
 public:
  using WriteId = std::pair<Key, Timestamp>;

  Replica() = default;
  Replica(const ReplicaConfig& cfg, const MembershipView& initial)
      : cfg_(cfg), view_(initial) {}

  const ReplicaConfig& config() const { return cfg_; }
  NodeId id() const { return cfg_.id; }
  RecoveryPhase phase() const { return phase_; }
  const MembershipView& view() const { return view_; }
  const NvmLog& nvm_log() const { return log_; }
  const std::map<Key, RecordEntry>& store() const { return records_; }
  const std::map<NodeId, MissedUpdatesBuffer>& missed_buffers() const {
    return missed_;
  }
  const std::map<WriteId, DurabilityMarks>& marks() const { return marks_; }
  const std::map<WriteId, CoordWrite>& coordinated() const { return coord_; }
  const std::map<WriteId, FollowerPending>& following() const {
    return follow_;
  }

  Timestamp record_ts(Key key) const {
    auto it = records_.find(key);
    return it == records_.end() ? Timestamp{} : it->second.ts;
  }
  bool record_valid(Key key) const {
    auto it = records_.find(key);
    return it == records_.end() ? true : it->second.valid;
  }

  /// Crash: volatile state is lost, the NVM log survives.
  void crash() {
    phase_ = RecoveryPhase::Down;
    view_ = MembershipView{};
    records_.clear();
    coord_.clear();
    follow_.clear();
    scopes_.clear();
    follow_scopes_.clear();
    missed_.clear();
    deferred_acks_.clear();
    marks_.clear();
    read_waiters_.clear();
    pending_catchup_.clear();
    fullcopy_cursor_.clear();
    chunk_entries_.clear();
    reset_recovery_session();
  }

  // ---------------------------------------------------------------- steps --

  StepOutput client_write(SimTime now, RequestId req, Key key,
                          ScopeId scope = 0) {
    StepOutput o;
    if (!serving_clients()) {
      o.completions.push_back({req, OpStatus::Rejected, {}});
      return o;
    }
    start_write(now, o, key, next_write_timestamp(record_ts(key), cfg_.id),
                scope, req, /*replay=*/false);
    flush_pending_catchup(now, o);
    return o;
  }

  StepOutput client_read(SimTime now, RequestId req, Key key) {
    StepOutput o;
    (void)now;
    if (!serving_clients()) {
      o.completions.push_back({req, OpStatus::Rejected, {}});
      return o;
    }
    auto it = records_.find(key);
    if (it == records_.end()) {
      o.completions.push_back({req, OpStatus::Ok, Timestamp{}});
      return o;
    }
    if (it->second.valid) {
      o.completions.push_back({req, OpStatus::Ok, it->second.ts});
      return o;
    }
    read_waiters_[key].push_back(req);  // stalled until the pending VAL
    return o;
  }

  /// Scope model: close scope `scope` (PERSIST command).
  StepOutput client_persist(SimTime now, RequestId req, ScopeId scope) {
    StepOutput o;
    if (!serving_clients() || cfg_.model != PersistencyModel::Scope) {
      o.completions.push_back({req, OpStatus::Rejected, {}});
      return o;
    }
    auto& sc = scopes_[scope];  // empty scope persists trivially
    sc.phase = ScopeState::Phase::Persisting;
    sc.request = req;
    sc.initiated_epoch = view_.epoch;
    sc.targeted = live_followers();
    issue_scope_flush(o, scope, sc);
    broadcast_persist_sc(o, scope, sc);
    if (!cfg_.mutations.no_inv_ack_retry) {
      o.set_timers.push_back(
          {TimerKey{TimerKind::InvAck, 0, Timestamp{}, scope},
           cfg_.inv_ack_timeout});
    }
    evaluate_scope(now, o, scope);
    flush_pending_catchup(now, o);
    return o;
  }

  StepOutput deliver(SimTime now, const Message& m) {
    StepOutput o;
    if (phase_ == RecoveryPhase::Down) {
      if (m.kind == MsgKind::RECONFIG) {
        handle_reconfig(now, o, m.view);
      } else if (m.kind == MsgKind::HEARTBEAT) {
        o.out.push_back(make_msg(MsgKind::HEARTBEAT_ACK, m.src));
      }
      return o;
    }
    if (m.kind == MsgKind::RECONFIG) {
      handle_reconfig(now, o, m.view);
      flush_pending_catchup(now, o);
      return o;
    }
    if (m.kind == MsgKind::HEARTBEAT) {
      o.out.push_back(make_msg(MsgKind::HEARTBEAT_ACK, m.src));
      return o;
    }
    if (m.epoch != view_.epoch) {
      o.events.push_back({StepEvent::Kind::StaleEpochDrop, m.key, m.ts, m.src,
                          std::string(to_string(m.kind))});
      return o;
    }
    switch (m.kind) {
      case MsgKind::INV: handle_inv(now, o, m); break;
      case MsgKind::ACK:
      case MsgKind::ACK_C:
      case MsgKind::ACK_P: handle_ack(now, o, m); break;
      case MsgKind::VAL:
      case MsgKind::VAL_C:
      case MsgKind::VAL_P: handle_val(now, o, m); break;
      case MsgKind::PERSIST_SC: handle_persist_sc(now, o, m); break;
      case MsgKind::ACK_P_SC: handle_ack_p_sc(now, o, m); break;
      case MsgKind::VAL_P_SC: handle_val_p_sc(now, o, m); break;
      case MsgKind::RECOV_START: handle_recov_start(now, o, m); break;
      case MsgKind::RECOV_START_ACK: handle_recov_start_ack(now, o, m); break;
      case MsgKind::CATCHUP_REQ: handle_catchup_req(now, o, m); break;
      case MsgKind::CATCHUP_RESP: handle_catchup_resp(now, o, m); break;
      case MsgKind::RECOV_END: handle_recov_end(now, o, m); break;
      default: break;
    }
    flush_pending_catchup(now, o);
    return o;
  }

  StepOutput timer_fire(SimTime now, const TimerKey& t) {
    StepOutput o;
    if (phase_ == RecoveryPhase::Down) return o;
    switch (t.kind) {
      case TimerKind::InvAck: fire_inv_ack(now, o, t); break;
      case TimerKind::AckVal: fire_ack_val(now, o, t); break;
      case TimerKind::Takeover: fire_takeover(now, o, t); break;
      case TimerKind::RecovRetry: fire_recov_retry(now, o); break;
      case TimerKind::Heartbeat: break;  // CM only
    }
    flush_pending_catchup(now, o);
    return o;
  }

  StepOutput persist_done(SimTime now, const PersistRequest& r) {
    StepOutput o;
    if (phase_ == RecoveryPhase::Down) return o;  // completion raced a crash
    if (r.size_bytes > 0) {  // full-copy chunk
      handle_chunk_persisted(now, o, r);
      flush_pending_catchup(now, o);
      return o;
    }
    log_.append(r.key, r.ts, r.scope);
    WriteId id{r.key, r.ts};
    set_mark(id, &DurabilityMarks::ldp);
    if (r.recovery && recovery_persists_ > 0) {
      --recovery_persists_;
      if (has_write_durability_points(cfg_.model)) {
        set_gdp(o, r.key, r.ts);  // recovery entries were globally committed
      }
    }
    if (auto it = follow_.find(id); it != follow_.end()) {
      auto& p = it->second;
      p.persisted = true;
      if (p.ack_c_on_persist) {
        p.ack_c_on_persist = false;
        p.sent_ack_c = true;
        o.out.push_back(make_write_msg(MsgKind::ACK, p.coordinator, r.key, r.ts,
                                       p.scope));
      }
      if (p.ack_p_on_persist) {
        p.ack_p_on_persist = false;
        o.out.push_back(make_write_msg(MsgKind::ACK_P, p.coordinator, r.key,
                                       r.ts, p.scope));
      }
    }
    if (auto it = coord_.find(id); it != coord_.end()) {
      if (it->second.needs_local_persist) {
        it->second.local_persist_done = true;
        evaluate_coord(now, o, id);
      }
    }
    if (gdp_on_persist_.erase(id) > 0) set_gdp(o, r.key, r.ts);
    if (r.scope != 0) {
      if (auto it = scopes_.find(r.scope);
          it != scopes_.end() && it->second.flush_pending > 0) {
        if (--it->second.flush_pending == 0) evaluate_scope(now, o, r.scope);
      }
      if (auto it = follow_scopes_.find(r.scope);
          it != follow_scopes_.end() && it->second.flush_pending > 0) {
        if (--it->second.flush_pending == 0) follower_scope_ack(o, r.scope);
      }
    }
    pay_deferred_acks(o, r.key);
    maybe_finish_recovery(now, o);
    flush_pending_catchup(now, o);
    return o;
  }

  /// Event model: flush any deferred background persists. Normal steps emit
  /// background persist requests eagerly, so this is a no-op unless a test
  /// staged entries explicitly.
  StepOutput background_persist_tick(SimTime) {
    StepOutput o;
    for (auto& r : bg_queue_) o.persists.push_back(r);
    bg_queue_.clear();
    return o;
  }

  // ------------------------------------------------------------- recovery --

  /// Buddy check, pure: marks each Partially_persisted entry whose current
  /// record timestamp equals the entry's (globally committed). Entries whose
  /// record is newer are covered by the Missed_updates buffer; under Event,
  /// where no durability evidence exists, the current record is attached when
  /// the buffer lacks it.
  std::vector<UpdateEntry> buddy_check(const std::vector<UpdateEntry>& list,
                                       NodeId recovering,
                                       std::vector<UpdateEntry>* extras) const {
    std::vector<UpdateEntry> marked = list;
    const MissedUpdatesBuffer* buf = nullptr;
    if (auto it = missed_.find(recovering); it != missed_.end()) {
      buf = &it->second;
    }
    for (auto& e : marked) {
      Timestamp cur = record_ts(e.key);
      if (cur == e.ts) {
        e.committed_mark = true;
      } else if (cur < e.ts && cfg_.mutations.buddy_mark_never_committed) {
        e.committed_mark = true;
      } else if (cur > e.ts && cfg_.model == PersistencyModel::Event &&
                 extras != nullptr) {
        bool covered = false;
        if (buf != nullptr) {
          auto bit = buf->entries().find(e.key);
          covered = bit != buf->entries().end() && bit->second >= cur;
        }
        if (!covered) extras->push_back(UpdateEntry{e.key, cur});
      }
    }
    return marked;
  }

  // --------------------------------------------------------------- hashing --

  void fingerprint(Fingerprint& f) const {
    f.put_u32(cfg_.id);
    f.put_u32(static_cast<std::uint32_t>(phase_));
    f.put_u64(view_.epoch);
    for (auto n : view_.live) f.put_u32(n);
    for (auto n : view_.recovering) f.put_u32(n);
    f.put_bool(view_.cluster_paused);
    f.put_u64(records_.size());
    for (const auto& [k, r] : records_) {
      f.put_u64(k);
      f.put_u64(r.ts.version);
      f.put_u32(r.ts.node);
      f.put_bool(r.valid);
    }
    log_.fingerprint(f);
    f.put_u64(coord_.size());
    for (const auto& [id, w] : coord_) {
      f.put_u64(id.first);
      f.put_u64(id.second.version);
      f.put_u32(id.second.node);
      f.put_u64(w.acked.size() + 31 * w.acked_c.size() +
                1009 * w.acked_p.size());
      for (auto n : w.acked) f.put_u32(n);
      for (auto n : w.acked_c) f.put_u32(n);
      for (auto n : w.acked_p) f.put_u32(n);
      f.put_bool(w.local_persist_done);
      f.put_bool(w.completed);
      f.put_bool(w.val_c_sent);
      f.put_bool(w.val_p_sent);
      f.put_bool(w.replay);
    }
    f.put_u64(follow_.size());
    for (const auto& [id, p] : follow_) {
      f.put_u64(id.first);
      f.put_u64(id.second.version);
      f.put_u32(id.second.node);
      f.put_u32(p.coordinator);
      f.put_bool(p.persisted);
      f.put_bool(p.await_val_c);
      f.put_bool(p.await_val_p);
      f.put_bool(p.ack_c_on_persist);
      f.put_bool(p.ack_p_on_persist);
    }
    f.put_u64(scopes_.size());
    for (const auto& [sid, sc] : scopes_) {
      f.put_u64(sid);
      f.put_u32(static_cast<std::uint32_t>(sc.phase));
      f.put_u64(sc.writes.size());
      for (const auto& [k, ts] : sc.writes) {
        f.put_u64(k);
        f.put_u64(ts.version);
        f.put_u32(ts.node);
      }
      for (auto n : sc.acked_p_sc) f.put_u32(n);
      f.put_u64(sc.flush_pending);
      f.put_bool(sc.completed);
    }
    f.put_u64(follow_scopes_.size());
    for (const auto& [sid, fs] : follow_scopes_) {
      f.put_u64(sid);
      f.put_u64(fs.flush_pending);
      f.put_bool(fs.acked);
      f.put_bool(fs.await_val_p_sc);
    }
    f.put_u64(missed_.size());
    for (const auto& [n, buf] : missed_) {
      f.put_u32(n);
      buf.fingerprint(f);
    }
    // Deferred-ACK order is immaterial (emission feeds a message set).
    std::vector<const DeferredAck*> dacks;
    for (const auto& d : deferred_acks_) dacks.push_back(&d);
    std::sort(dacks.begin(), dacks.end(),
              [](const DeferredAck* a, const DeferredAck* b) {
                return std::tie(a->kind, a->dst, a->key, a->ts, a->scope) <
                       std::tie(b->kind, b->dst, b->key, b->ts, b->scope);
              });
    f.put_u64(dacks.size());
    for (const auto* d : dacks) {
      f.put_u32(static_cast<std::uint32_t>(d->kind));
      f.put_u32(d->dst);
      f.put_u64(d->key);
      f.put_u64(d->ts.version);
      f.put_u32(d->ts.node);
    }
    f.put_u32(static_cast<std::uint32_t>(recovery_.buddy));
    f.put_bool(recovery_.fullcopy);
    f.put_u64(start_acks_.size());
    for (auto n : start_acks_) f.put_u32(n);
    f.put_u64(pp_list_.size());
    for (const auto& e : pp_list_) fingerprint_update_entry(f, e);
    f.put_u64(recovery_persists_);
    f.put_u64(replays_pending_.size());
    for (const auto& id : replays_pending_) {
      f.put_u64(id.first);
      f.put_u64(id.second.version);
      f.put_u32(id.second.node);
    }
    f.put_u64(pending_catchup_.size());
    for (const auto& [n, pc] : pending_catchup_) {
      f.put_u32(n);
      f.put_u64(pc.barrier_epoch);
      f.put_u64(pc.list.size());
      for (const auto& e : pc.list) fingerprint_update_entry(f, e);
    }
    f.put_u64(read_waiters_.size());
    for (const auto& [k, reqs] : read_waiters_) {
      f.put_u64(k);
      f.put_u64(reqs.size());
      for (auto r : reqs) f.put_u64(r);
    }
    f.put_u64(gdp_on_persist_.size());
    for (const auto& id : gdp_on_persist_) {
      f.put_u64(id.first);
      f.put_u64(id.second.version);
      f.put_u32(id.second.node);
    }
  }

 private:
  struct RecoverySession {
    NodeId buddy = kNoNode;
    bool fullcopy = false;
    bool fallback = false;
    bool resp_received = false;
    SimTime reconf_time = 0;
    SimTime start_sent = 0;
    SimTime start_acked = 0;
    SimTime catchup_sent = 0;
    SimTime resp_time = 0;
    std::uint64_t buffer_entries = 0;
    std::uint64_t buffer_bytes = 0;
    std::uint64_t rejected = 0;
    std::uint64_t replayed = 0;
    std::uint64_t next_chunk = 0;
    std::uint64_t chunk_total = 0;
    bool chunk_in_flight = false;
  };

  struct PendingCatchup {
    std::vector<UpdateEntry> list;
    bool fullcopy = false;
    Epoch barrier_epoch = 0;  // writes initiated before this epoch must settle
  };

  // ------------------------------------------------------------- utilities --

  bool serving_clients() const {
    return phase_ == RecoveryPhase::FullyOnline && view_.is_live(cfg_.id) &&
           !view_.cluster_paused;
  }

  std::set<NodeId> live_followers() const {
    std::set<NodeId> out;
    for (auto n : view_.live) {
      if (n != cfg_.id) out.insert(n);
    }
    return out;
  }

  Message make_msg(MsgKind kind, NodeId dst) const {
    Message m;
    m.kind = kind;
    m.src = cfg_.id;
    m.dst = dst;
    m.epoch = view_.epoch;
    return m;
  }

  Message make_write_msg(MsgKind kind, NodeId dst, Key key, const Timestamp& ts,
                         ScopeId scope) const {
    Message m = make_msg(kind, dst);
    m.key = key;
    m.ts = ts;
    m.scope = scope;
    return m;
  }

  void set_mark(const WriteId& id, bool DurabilityMarks::* field) {
    marks_[id].*field = true;
  }

  void set_gdp(StepOutput& o, Key key, const Timestamp& ts) {
    if (log_.set_gdp_flag(key, ts)) {
      o.events.push_back({StepEvent::Kind::GdpSet, key, ts, cfg_.id, {}});
    }
  }

  void admit_missed(Key key, const Timestamp& ts) {
    for (auto& [node, buf] : missed_) {
      if (cfg_.mutations.missed_updates_keep_old &&
          buf.entries().count(key) > 0) {
        continue;
      }
      buf.record(key, ts);
    }
  }

  /// Buffer admission for a write that reached this node's global durability
  /// point (or global visibility under Event/Scope; Scope writes also admit
  /// at their scope durability point).
  void admit_at_gdp(Key key, const Timestamp& ts) { admit_missed(key, ts); }
  void admit_at_gvp(Key key, const Timestamp& ts) {
    if (cfg_.model == PersistencyModel::Event ||
        cfg_.model == PersistencyModel::Scope) {
      admit_missed(key, ts);
    }
  }

  void validate_record(StepOutput& o, Key key) {
    auto& rec = records_[key];
    rec.valid = true;
    if (auto it = read_waiters_.find(key); it != read_waiters_.end()) {
      for (auto req : it->second) {
        o.completions.push_back({req, OpStatus::Ok, rec.ts});
      }
      read_waiters_.erase(it);
    }
  }

  /// Stage a newer write into the volatile store; drops superseded pendings.
  void stage_record(StepOutput& o, Key key, const Timestamp& ts) {
    auto& rec = records_[key];
    assert(ts >= rec.ts);
    rec.ts = ts;
    rec.valid = false;
    for (auto it = follow_.lower_bound({key, Timestamp{}});
         it != follow_.end() && it->first.first == key;) {
      if (it->first.second < ts) {
        o.cancel_timers.push_back(
            TimerKey{TimerKind::AckVal, key, it->first.second, 0});
        it = follow_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void pay_deferred_acks(StepOutput& o, Key key) {
    for (auto it = deferred_acks_.begin(); it != deferred_acks_.end();) {
      if (it->key == key && log_.covers(key, it->ts)) {
        o.out.push_back(make_write_msg(it->kind, it->dst, it->key, it->ts,
                                       it->scope));
        it = deferred_acks_.erase(it);
      } else {
        ++it;
      }
    }
  }

  PersistRequest entry_persist(Key key, const Timestamp& ts, ScopeId scope,
                               bool background, bool recovery) const {
    PersistRequest r;
    r.key = key;
    r.ts = ts;
    r.scope = scope;
    r.background = background;
    r.recovery = recovery;
    return r;
  }

  // ------------------------------------------------------------ write path --

  void start_write(SimTime now, StepOutput& o, Key key, const Timestamp& ts,
                   ScopeId scope, RequestId req, bool replay) {
    auto& w = coord_[{key, ts}];
    w.scope = scope;
    w.initiated_epoch = view_.epoch;
    w.targeted = live_followers();
    w.replay = replay;
    w.request = req;
    w.started = now;
    set_mark({key, ts}, &DurabilityMarks::lvp);
    if (!replay) {
      stage_record(o, key, ts);
    }
    // Local visibility at the coordinator is withheld until CGVP.
    records_[key].valid = false;
    if (persist_on_inv(cfg_.model)) {
      w.needs_local_persist = true;
      if (log_.covers(key, ts)) {
        w.local_persist_done = true;  // replay of an already-durable write
      } else {
        o.persists.push_back(entry_persist(key, ts, scope, false, false));
      }
    } else if (cfg_.model == PersistencyModel::Event) {
      if (!log_.covers(key, ts)) {
        o.persists.push_back(entry_persist(key, ts, scope, true, false));
      }
    } else if (cfg_.model == PersistencyModel::Scope && scope != 0) {
      auto& sc = scopes_[scope];
      sc.writes[key] = ts;
    }
    for (auto f : w.targeted) {
      o.out.push_back(make_write_msg(MsgKind::INV, f, key, ts, scope));
    }
    if (!cfg_.mutations.no_inv_ack_retry) {
      o.set_timers.push_back(
          {TimerKey{TimerKind::InvAck, key, ts, scope}, cfg_.inv_ack_timeout});
    }
    evaluate_coord(now, o, {key, ts});
  }

  void handle_inv(SimTime now, StepOutput& o, const Message& m) {
    (void)now;
    Timestamp cur = record_ts(m.key);
    bool newer = m.ts > cur || cfg_.mutations.skip_ts_check_on_inv;
    if (newer && m.ts != cur) {
      if (cfg_.mutations.skip_ts_check_on_inv && m.ts < cur) {
        records_[m.key].ts = m.ts;  // seeded bug: last-writer-wins broken
        records_[m.key].valid = false;
      } else {
        stage_record(o, m.key, m.ts);
      }
      set_mark({m.key, m.ts}, &DurabilityMarks::lvp);
      auto& p = follow_[{m.key, m.ts}];
      p.coordinator = m.src;
      p.scope = m.scope;
      p.initiated_epoch = view_.epoch;
      p.await_val_c = true;
      p.await_val_p = cfg_.model == PersistencyModel::Strict;
      bool persisted_already = log_.covers(m.key, m.ts);
      switch (cfg_.model) {
        case PersistencyModel::Synch:
          if (persisted_already || cfg_.mutations.ack_before_persist) {
            p.persisted = persisted_already;
            p.sent_ack_c = true;
            o.out.push_back(
                make_write_msg(MsgKind::ACK, m.src, m.key, m.ts, m.scope));
          } else {
            p.ack_c_on_persist = true;
          }
          if (!persisted_already) {
            o.persists.push_back(
                entry_persist(m.key, m.ts, m.scope, false, false));
          }
          break;
        case PersistencyModel::Strict:
        case PersistencyModel::REnf:
          p.sent_ack_c = true;
          o.out.push_back(
              make_write_msg(MsgKind::ACK_C, m.src, m.key, m.ts, m.scope));
          if (persisted_already || cfg_.mutations.ack_before_persist) {
            p.persisted = persisted_already;
            o.out.push_back(
                make_write_msg(MsgKind::ACK_P, m.src, m.key, m.ts, m.scope));
          } else {
            p.ack_p_on_persist = true;
          }
          if (!persisted_already) {
            o.persists.push_back(
                entry_persist(m.key, m.ts, m.scope, false, false));
          }
          break;
        case PersistencyModel::Event:
          p.sent_ack_c = true;
          o.out.push_back(
              make_write_msg(MsgKind::ACK_C, m.src, m.key, m.ts, m.scope));
          if (!persisted_already) {
            o.persists.push_back(
                entry_persist(m.key, m.ts, m.scope, true, false));
          }
          break;
        case PersistencyModel::Scope:
          p.sent_ack_c = true;
          o.out.push_back(
              make_write_msg(MsgKind::ACK_C, m.src, m.key, m.ts, m.scope));
          break;
      }
      if (!cfg_.mutations.no_ack_val_retry) {
        o.set_timers.push_back({TimerKey{TimerKind::AckVal, m.key, m.ts, 0},
                                cfg_.ack_val_timeout});
      }
      return;
    }
    // Duplicate or obsolete INV: acknowledge without applying so the slower
    // coordinator can terminate. Durability-flavored ACKs wait until the
    // local NVM covers the timestamp.
    if (auto it = follow_.find({m.key, m.ts}); it != follow_.end()) {
      auto& p = it->second;
      p.coordinator = m.src;  // a takeover replay owns this write now
      if (p.sent_ack_c) {
        MsgKind k = cfg_.model == PersistencyModel::Synch ? MsgKind::ACK
                                                          : MsgKind::ACK_C;
        o.out.push_back(make_write_msg(k, m.src, m.key, m.ts, m.scope));
      }
      if (p.persisted && (cfg_.model == PersistencyModel::Strict ||
                          cfg_.model == PersistencyModel::REnf)) {
        o.out.push_back(
            make_write_msg(MsgKind::ACK_P, m.src, m.key, m.ts, m.scope));
      }
      return;
    }
    switch (cfg_.model) {
      case PersistencyModel::Synch:
        if (log_.covers(m.key, m.ts)) {
          o.out.push_back(
              make_write_msg(MsgKind::ACK, m.src, m.key, m.ts, m.scope));
        } else {
          deferred_acks_.push_back(
              {MsgKind::ACK, m.src, m.key, m.ts, m.scope});
        }
        break;
      case PersistencyModel::Strict:
      case PersistencyModel::REnf:
        o.out.push_back(
            make_write_msg(MsgKind::ACK_C, m.src, m.key, m.ts, m.scope));
        if (log_.covers(m.key, m.ts)) {
          o.out.push_back(
              make_write_msg(MsgKind::ACK_P, m.src, m.key, m.ts, m.scope));
        } else {
          deferred_acks_.push_back(
              {MsgKind::ACK_P, m.src, m.key, m.ts, m.scope});
        }
        break;
      case PersistencyModel::Event:
      case PersistencyModel::Scope:
        o.out.push_back(
            make_write_msg(MsgKind::ACK_C, m.src, m.key, m.ts, m.scope));
        break;
    }
  }

  void handle_ack(SimTime now, StepOutput& o, const Message& m) {
    auto it = coord_.find({m.key, m.ts});
    if (it == coord_.end()) {
      // Late ACK: if it names the record's current write, the follower missed
      // a VAL; re-send so its pending window can settle.
      if (record_ts(m.key) == m.ts) resend_vals(o, m.src, m.key, m.ts, m.scope);
      return;
    }
    auto& w = it->second;
    switch (m.kind) {
      case MsgKind::ACK: w.acked.insert(m.src); break;
      case MsgKind::ACK_C: w.acked_c.insert(m.src); break;
      case MsgKind::ACK_P: w.acked_p.insert(m.src); break;
      default: return;
    }
    evaluate_coord(now, o, it->first);
  }

  bool set_covers(const std::set<NodeId>& acked,
                  const std::set<NodeId>& required) const {
    std::size_t missing = 0;
    for (auto n : required) {
      if (acked.count(n) == 0) ++missing;
    }
    if (cfg_.mutations.val_on_partial_acks) return missing <= 1;
    return missing == 0;
  }

  std::set<NodeId> required_for(const CoordWrite& w) const {
    std::set<NodeId> req;
    for (auto n : w.targeted) {
      if (n != cfg_.id && view_.is_live(n)) req.insert(n);
    }
    return req;
  }

  void evaluate_coord(SimTime now, StepOutput& o, const WriteId& id) {
    auto it = coord_.find(id);
    if (it == coord_.end()) return;
    auto& w = it->second;
    auto req = required_for(w);
    const auto [key, ts] = id;
    bool all_c = set_covers(
        cfg_.model == PersistencyModel::Synch ? w.acked : w.acked_c, req);
    bool all_p = set_covers(w.acked_p, req);
    bool done = false;
    switch (cfg_.model) {
      case PersistencyModel::Synch: {
        // Completion and VAL both require every ACK plus the local persist.
        if (all_c && w.local_persist_done) {
          complete_write(now, o, id, w);
          if (!w.val_c_sent) {
            w.val_c_sent = true;
            set_mark(id, &DurabilityMarks::cgvp);
            set_mark(id, &DurabilityMarks::cgdp);
            if (record_ts(key) == ts) validate_record(o, key);
            set_gdp(o, key, ts);
            admit_at_gdp(key, ts);
            broadcast_val(o, MsgKind::VAL, key, ts, w.scope);
          }
          done = true;
        }
        break;
      }
      case PersistencyModel::Strict: {
        if (all_c && !w.val_c_sent) {
          w.val_c_sent = true;
          set_mark(id, &DurabilityMarks::cgvp);
          if (record_ts(key) == ts) validate_record(o, key);
          broadcast_val(o, MsgKind::VAL_C, key, ts, w.scope);
        }
        if (all_p && w.local_persist_done) {
          complete_write(now, o, id, w);
          if (!w.val_p_sent) {
            w.val_p_sent = true;
            set_mark(id, &DurabilityMarks::cgdp);
            set_gdp(o, key, ts);
            admit_at_gdp(key, ts);
            broadcast_val(o, MsgKind::VAL_P, key, ts, w.scope);
          }
        }
        done = w.val_c_sent && w.val_p_sent;
        break;
      }
      case PersistencyModel::REnf: {
        if (all_c) {
          set_mark(id, &DurabilityMarks::cgvp);
          complete_write(now, o, id, w);
        }
        // Reads unblock only when the write is persisted everywhere, so the
        // single VAL waits for both ACK flavors.
        if (all_c && all_p && w.local_persist_done && !w.val_c_sent) {
          w.val_c_sent = true;
          set_mark(id, &DurabilityMarks::cgdp);
          if (record_ts(key) == ts) validate_record(o, key);
          set_gdp(o, key, ts);
          admit_at_gdp(key, ts);
          broadcast_val(o, MsgKind::VAL, key, ts, w.scope);
        }
        done = w.val_c_sent;
        break;
      }
      case PersistencyModel::Event:
      case PersistencyModel::Scope: {
        if (all_c) {
          complete_write(now, o, id, w);
          if (!w.val_c_sent) {
            w.val_c_sent = true;
            set_mark(id, &DurabilityMarks::cgvp);
            if (record_ts(key) == ts) validate_record(o, key);
            admit_at_gvp(key, ts);
            broadcast_val(o, MsgKind::VAL_C, key, ts, w.scope);
          }
          done = true;
        }
        break;
      }
    }
    if (done) {
      o.cancel_timers.push_back(TimerKey{TimerKind::InvAck, key, ts, w.scope});
      bool was_replay = w.replay;
      coord_.erase(it);
      if (was_replay && replays_pending_.erase(id) > 0) {
        maybe_finish_recovery(now, o);
      }
    }
  }

  void complete_write(SimTime now, StepOutput& o, const WriteId& id,
                      CoordWrite& w) {
    (void)now;
    if (w.completed) return;
    w.completed = true;
    if (!w.replay && w.request != 0) {
      assert(phase_ == RecoveryPhase::FullyOnline);
      o.completions.push_back({w.request, OpStatus::Ok, id.second});
    }
  }

  void broadcast_val(StepOutput& o, MsgKind kind, Key key, const Timestamp& ts,
                     ScopeId scope) {
    for (auto f : live_followers()) {
      o.out.push_back(make_write_msg(kind, f, key, ts, scope));
    }
  }

  void resend_vals(StepOutput& o, NodeId dst, Key key, const Timestamp& ts,
                   ScopeId scope) {
    switch (cfg_.model) {
      case PersistencyModel::Synch:
      case PersistencyModel::REnf:
        o.out.push_back(make_write_msg(MsgKind::VAL, dst, key, ts, scope));
        break;
      case PersistencyModel::Strict:
        o.out.push_back(make_write_msg(MsgKind::VAL_C, dst, key, ts, scope));
        o.out.push_back(make_write_msg(MsgKind::VAL_P, dst, key, ts, scope));
        break;
      case PersistencyModel::Event:
      case PersistencyModel::Scope:
        o.out.push_back(make_write_msg(MsgKind::VAL_C, dst, key, ts, scope));
        break;
    }
  }

  void handle_val(SimTime now, StepOutput& o, const Message& m) {
    (void)now;
    Timestamp cur = record_ts(m.key);
    if (m.ts < cur) return;  // obsolete validation
    WriteId id{m.key, m.ts};
    if (m.ts > cur) {
      // The INV never arrived here (this node was not in the epoch when the
      // write started, or the INV was reordered away). The payload is
      // reconstructible from (key, ts), so adopt the write.
      stage_record(o, m.key, m.ts);
      set_mark(id, &DurabilityMarks::lvp);
      bool want_persist = !log_.covers(m.key, m.ts) &&
                          (persist_on_inv(cfg_.model) ||
                           cfg_.model == PersistencyModel::Event);
      if (want_persist) {
        bool bg = cfg_.model == PersistencyModel::Event;
        o.persists.push_back(entry_persist(m.key, m.ts, m.scope, bg, false));
        if (durability_val(m.kind) && !cfg_.mutations.skip_gdp_on_val) {
          gdp_on_persist_.insert(id);
        }
      } else if (durability_val(m.kind) && !cfg_.mutations.skip_gdp_on_val) {
        set_gdp(o, m.key, m.ts);
      }
      if (m.kind == MsgKind::VAL_P) {
        // Durability confirmed but visibility still pending: behave like a
        // follower that just applied the INV so the VAL_C round can settle.
        auto& p = follow_[id];
        p.coordinator = m.src;
        p.scope = m.scope;
        p.initiated_epoch = view_.epoch;
        p.await_val_c = true;
        p.await_val_p = false;
        p.sent_ack_c = true;
        o.out.push_back(
            make_write_msg(MsgKind::ACK_C, m.src, m.key, m.ts, m.scope));
        if (want_persist) {
          p.ack_p_on_persist = true;
        } else {
          p.persisted = log_.covers(m.key, m.ts);
        }
        if (!cfg_.mutations.no_ack_val_retry) {
          o.set_timers.push_back({TimerKey{TimerKind::AckVal, m.key, m.ts, 0},
                                  cfg_.ack_val_timeout});
        }
      }
    }
    auto fit = follow_.find(id);
    bool had_pending = fit != follow_.end();
    if (m.kind == MsgKind::VAL || m.kind == MsgKind::VAL_C) {
      set_mark(id, &DurabilityMarks::fgvp);
      validate_record(o, m.key);
      if (had_pending) fit->second.await_val_c = false;
      admit_at_gvp(m.key, m.ts);
    }
    if (durability_val(m.kind)) {
      set_mark(id, &DurabilityMarks::fgdp);
      if (!cfg_.mutations.skip_gdp_on_val) set_gdp(o, m.key, m.ts);
      if (had_pending) fit->second.await_val_p = false;
      if (has_write_durability_points(cfg_.model)) admit_at_gdp(m.key, m.ts);
    }
    if (had_pending && !fit->second.await_val_c && !fit->second.await_val_p) {
      follow_.erase(fit);
      o.cancel_timers.push_back(TimerKey{TimerKind::AckVal, m.key, m.ts, 0});
    }
  }

  bool durability_val(MsgKind k) const {
    if (k == MsgKind::VAL_P) return true;
    if (k == MsgKind::VAL) {
      return cfg_.model == PersistencyModel::Synch ||
             cfg_.model == PersistencyModel::REnf;
    }
    return false;
  }

  // ------------------------------------------------------------ scope path --

  void issue_scope_flush(StepOutput& o, ScopeId scope, ScopeState& sc) {
    if (sc.flush_issued) return;
    sc.flush_issued = true;
    for (const auto& [key, ts] : sc.writes) {
      // A superseded write's durability obligation is already discharged by
      // the newer durable version; otherwise flush the write's own value.
      if (log_.covers(key, ts)) continue;
      ++sc.flush_pending;
      o.persists.push_back(entry_persist(key, ts, scope, false, false));
    }
  }

  void broadcast_persist_sc(StepOutput& o, ScopeId scope,
                            const ScopeState& sc) {
    for (auto f : live_followers()) {
      Message m = make_msg(MsgKind::PERSIST_SC, f);
      m.scope = scope;
      for (const auto& [key, ts] : sc.writes) {
        m.entries.push_back(UpdateEntry{key, ts});
      }
      o.out.push_back(std::move(m));
    }
  }

  void evaluate_scope(SimTime now, StepOutput& o, ScopeId scope) {
    (void)now;
    auto it = scopes_.find(scope);
    if (it == scopes_.end()) return;
    auto& sc = it->second;
    if (sc.phase != ScopeState::Phase::Persisting) return;
    std::set<NodeId> req;
    for (auto n : sc.targeted) {
      if (view_.is_live(n)) req.insert(n);
    }
    if (!set_covers(sc.acked_p_sc, req) || sc.flush_pending > 0) return;
    sc.phase = ScopeState::Phase::Done;
    if (!sc.completed) {
      sc.completed = true;
      if (sc.request != 0) {
        o.completions.push_back({sc.request, OpStatus::Ok, Timestamp{}});
      }
    }
    o.cancel_timers.push_back(TimerKey{TimerKind::InvAck, 0, Timestamp{}, scope});
    for (const auto& [key, ts] : sc.writes) {
      set_mark({key, ts}, &DurabilityMarks::cgdp);
      set_gdp(o, key, ts);
      admit_at_gdp(key, ts);
    }
    for (auto f : live_followers()) {
      Message m = make_msg(MsgKind::VAL_P_SC, f);
      m.scope = scope;
      for (const auto& [key, ts] : sc.writes) {
        m.entries.push_back(UpdateEntry{key, ts});
      }
      o.out.push_back(std::move(m));
    }
  }

  void handle_persist_sc(SimTime now, StepOutput& o, const Message& m) {
    (void)now;
    auto [it, inserted] = follow_scopes_.try_emplace(m.scope);
    auto& fs = it->second;
    if (!inserted) {
      if (fs.acked) {
        Message a = make_msg(MsgKind::ACK_P_SC, m.src);
        a.scope = m.scope;
        o.out.push_back(std::move(a));
      }
      return;  // mid-flush duplicate; ACK follows when the flush drains
    }
    fs.coordinator = m.src;
    fs.entries = m.entries;
    for (const auto& e : m.entries) {
      // A scope write whose INV was reordered behind the PERSIST is applied
      // here; a superseded one is discharged by the newer durable version.
      if (e.ts > record_ts(e.key)) {
        stage_record(o, e.key, e.ts);
        auto& p = follow_[{e.key, e.ts}];
        p.coordinator = m.src;
        p.scope = m.scope;
        p.initiated_epoch = view_.epoch;
        p.sent_ack_c = true;
        o.out.push_back(
            make_write_msg(MsgKind::ACK_C, m.src, e.key, e.ts, m.scope));
        if (!cfg_.mutations.no_ack_val_retry) {
          o.set_timers.push_back({TimerKey{TimerKind::AckVal, e.key, e.ts, 0},
                                  cfg_.ack_val_timeout});
        }
      }
      if (!log_.covers(e.key, e.ts)) {
        ++fs.flush_pending;
        o.persists.push_back(entry_persist(e.key, e.ts, m.scope, false,
                                           false));
      }
    }
    if (fs.flush_pending == 0) follower_scope_ack(o, m.scope);
  }

  void follower_scope_ack(StepOutput& o, ScopeId scope) {
    auto it = follow_scopes_.find(scope);
    if (it == follow_scopes_.end() || it->second.acked) return;
    it->second.acked = true;
    Message m = make_msg(MsgKind::ACK_P_SC, it->second.coordinator);
    m.scope = scope;
    o.out.push_back(std::move(m));
    if (!cfg_.mutations.no_ack_val_retry) {
      o.set_timers.push_back({TimerKey{TimerKind::AckVal, 0, Timestamp{}, scope},
                              cfg_.ack_val_timeout});
    }
  }

  void handle_ack_p_sc(SimTime now, StepOutput& o, const Message& m) {
    auto it = scopes_.find(m.scope);
    if (it == scopes_.end()) return;
    auto& sc = it->second;
    if (sc.phase == ScopeState::Phase::Done) {
      Message v = make_msg(MsgKind::VAL_P_SC, m.src);
      v.scope = m.scope;
      for (const auto& [key, ts] : sc.writes) {
        v.entries.push_back(UpdateEntry{key, ts});
      }
      o.out.push_back(std::move(v));
      return;
    }
    sc.acked_p_sc.insert(m.src);
    evaluate_scope(now, o, m.scope);
  }

  void handle_val_p_sc(SimTime now, StepOutput& o, const Message& m) {
    (void)now;
    for (const auto& e : m.entries) {
      set_mark({e.key, e.ts}, &DurabilityMarks::fgdp);
      if (!cfg_.mutations.skip_gdp_on_val) set_gdp(o, e.key, e.ts);
      admit_at_gdp(e.key, e.ts);
    }
    if (auto it = follow_scopes_.find(m.scope); it != follow_scopes_.end()) {
      follow_scopes_.erase(it);
      o.cancel_timers.push_back(
          TimerKey{TimerKind::AckVal, 0, Timestamp{}, m.scope});
    }
  }

  // ---------------------------------------------------------------- timers --

  void fire_inv_ack(SimTime now, StepOutput& o, const TimerKey& t) {
    if (t.scope != 0 && t.key == 0) {  // PERSIST_SC round
      auto it = scopes_.find(t.scope);
      if (it == scopes_.end() ||
          it->second.phase != ScopeState::Phase::Persisting) {
        return;
      }
      it->second.targeted = live_followers();
      broadcast_persist_sc(o, t.scope, it->second);
      o.set_timers.push_back({t, cfg_.inv_ack_timeout});
      return;
    }
    auto it = coord_.find({t.key, t.ts});
    if (it == coord_.end()) return;  // stale timer after completion
    auto& w = it->second;
    // Rebroadcast to every follower (not just the silent ones) with the
    // original timestamp; duplicates are obsolete at the receivers.
    w.targeted = live_followers();
    for (auto f : w.targeted) {
      o.out.push_back(make_write_msg(MsgKind::INV, f, t.key, t.ts, w.scope));
    }
    o.set_timers.push_back({t, cfg_.inv_ack_timeout});
    evaluate_coord(now, o, it->first);
  }

  void fire_ack_val(SimTime now, StepOutput& o, const TimerKey& t) {
    (void)now;
    if (t.scope != 0 && t.key == 0) {  // awaiting VAL_P_SC
      auto it = follow_scopes_.find(t.scope);
      if (it == follow_scopes_.end() || !it->second.acked) return;
      Message m = make_msg(MsgKind::ACK_P_SC, it->second.coordinator);
      m.scope = t.scope;
      o.out.push_back(std::move(m));
      o.set_timers.push_back({t, cfg_.ack_val_timeout});
      return;
    }
    auto it = follow_.find({t.key, t.ts});
    if (it == follow_.end()) return;
    auto& p = it->second;
    if (!view_.is_live(p.coordinator)) {
      // Coordinator left the membership; the takeover path owns this write.
      o.set_timers.push_back({t, cfg_.ack_val_timeout});
      return;
    }
    if (p.sent_ack_c && p.await_val_c) {
      MsgKind k = cfg_.model == PersistencyModel::Synch ? MsgKind::ACK
                                                        : MsgKind::ACK_C;
      o.out.push_back(make_write_msg(k, p.coordinator, t.key, t.ts, p.scope));
    }
    if (p.persisted && p.await_val_p) {
      o.out.push_back(
          make_write_msg(MsgKind::ACK_P, p.coordinator, t.key, t.ts, p.scope));
    }
    o.set_timers.push_back({t, cfg_.ack_val_timeout});
  }

  void fire_takeover(SimTime now, StepOutput& o, const TimerKey& t) {
    auto it = follow_.find({t.key, t.ts});
    if (it == follow_.end()) return;  // VAL arrived meanwhile
    auto& p = it->second;
    if (view_.is_live(p.coordinator)) return;
    if (record_ts(t.key) > t.ts) return;  // superseded
    // Take over as coordinator and replay with the original timestamp.
    ScopeId scope = p.scope;
    o.cancel_timers.push_back(TimerKey{TimerKind::AckVal, t.key, t.ts, 0});
    follow_.erase(it);
    start_write(now, o, t.key, t.ts, scope, 0, /*replay=*/true);
  }

  // -------------------------------------------------------------- recovery --

  void reset_recovery_session() {
    recovery_ = RecoverySession{};
    start_acks_.clear();
    pp_list_.clear();
    recovery_persists_ = 0;
    replays_pending_.clear();
    recovery_apply_started_ = false;
  }

  void handle_reconfig(SimTime now, StepOutput& o, const MembershipView& v) {
    if (v.epoch <= view_.epoch) return;
    MembershipView old = view_;
    view_ = v;
    if (!v.is_live(cfg_.id)) {
      // Removed from the membership (e.g., a disconnect misdiagnosed as a
      // crash); stop serving until re-added and recovered.
      phase_ = RecoveryPhase::Down;
      return;
    }
    if (phase_ == RecoveryPhase::Down ||
        (v.is_recovering(cfg_.id) && phase_ == RecoveryPhase::FullyOnline)) {
      begin_recovery(now, o);
      return;
    }
    if (v.is_recovering(cfg_.id) && phase_ != RecoveryPhase::FullyOnline) {
      // A membership change mid-recovery (buddy or another node failed):
      // redo from Step 1 with the new membership.
      begin_recovery(now, o);
      return;
    }
    // A live node observing removals: open Missed_updates buffers and take
    // over incomplete writes from the removed nodes.
    std::vector<NodeId> removed;
    for (auto n : old.live) {
      if (!v.is_live(n)) removed.push_back(n);
    }
    for (auto n : removed) {
      missed_.try_emplace(
          n, MissedUpdatesBuffer(cfg_.missed_updates_capacity,
                                 cfg_.entry_bytes()));
      takeover_incomplete_writes(now, o, n);
    }
    // Rebroadcast unfinished coordinated rounds into the new membership and
    // re-evaluate (a removed node may have been the only missing ACK).
    std::vector<WriteId> pending_ids;
    for (const auto& [id, w] : coord_) pending_ids.push_back(id);
    for (const auto& id : pending_ids) {
      auto it = coord_.find(id);
      if (it == coord_.end()) continue;
      if (!cfg_.mutations.no_takeover && !removed.empty()) {
        it->second.targeted = live_followers();
        for (auto f : it->second.targeted) {
          o.out.push_back(make_write_msg(MsgKind::INV, f, id.first, id.second,
                                         it->second.scope));
        }
      }
      evaluate_coord(now, o, id);
    }
    std::vector<ScopeId> pending_scopes;
    for (const auto& [sid, sc] : scopes_) {
      if (sc.phase == ScopeState::Phase::Persisting) pending_scopes.push_back(sid);
    }
    for (auto sid : pending_scopes) evaluate_scope(now, o, sid);
    // Drop follower scope flushes whose coordinator is gone; the writes stay
    // durable locally and a later recovery resolves their gdp dilemma.
    for (auto it = follow_scopes_.begin(); it != follow_scopes_.end();) {
      if (!view_.is_live(it->second.coordinator)) {
        o.cancel_timers.push_back(
            TimerKey{TimerKind::AckVal, 0, Timestamp{}, it->first});
        it = follow_scopes_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void takeover_incomplete_writes(SimTime now, StepOutput& o, NodeId removed) {
    (void)now;
    if (cfg_.mutations.no_takeover) return;
    std::size_t rank = 0;
    for (auto n : view_.live) {
      if (n == cfg_.id) break;
      ++rank;
    }
    for (const auto& [id, p] : follow_) {
      if (p.coordinator != removed || !p.await_val_c) continue;
      o.set_timers.push_back(
          {TimerKey{TimerKind::Takeover, id.first, id.second, 0},
           static_cast<SimTime>(rank + 1) * cfg_.takeover_stagger});
    }
  }

  void begin_recovery(SimTime now, StepOutput& o) {
    bool was_down = phase_ == RecoveryPhase::Down;
    reset_recovery_session();
    recovery_.reconf_time = now;
    // Volatile state restarts from the durable log; a disconnect survivor is
    // treated the same way.
    records_.clear();
    coord_.clear();
    follow_.clear();
    scopes_.clear();
    follow_scopes_.clear();
    missed_.clear();
    deferred_acks_.clear();
    read_waiters_.clear();
    pending_catchup_.clear();
    fullcopy_cursor_.clear();
    chunk_entries_.clear();
    if (was_down) marks_.clear();
    for (const auto& [key, ts] : log_.fold()) {
      records_[key] = RecordEntry{ts, true};
    }
    phase_ = RecoveryPhase::ShadowReplica;
    o.events.push_back({StepEvent::Kind::ShadowEntered, 0, {}, cfg_.id, {}});
    pp_list_ = compile_partially_persisted(log_, cfg_.model);
    recovery_.start_sent = now;
    phase_ = RecoveryPhase::AwaitStartAcks;
    for (auto n : view_.live) {
      if (n != cfg_.id) o.out.push_back(make_msg(MsgKind::RECOV_START, n));
    }
    o.set_timers.push_back({TimerKey{TimerKind::RecovRetry, 0, {}, 0},
                            cfg_.recov_retry_timeout});
    maybe_send_catchup(now, o);  // degenerate single-node membership
  }

  void handle_recov_start(SimTime now, StepOutput& o, const Message& m) {
    (void)now;
    o.out.push_back(make_msg(MsgKind::RECOV_START_ACK, m.src));
  }

  void handle_recov_start_ack(SimTime now, StepOutput& o, const Message& m) {
    if (phase_ != RecoveryPhase::AwaitStartAcks) return;
    start_acks_.insert(m.src);
    maybe_send_catchup(now, o);
  }

  void maybe_send_catchup(SimTime now, StepOutput& o) {
    if (phase_ != RecoveryPhase::AwaitStartAcks) return;
    for (auto n : view_.live) {
      if (n != cfg_.id && start_acks_.count(n) == 0) return;
    }
    recovery_.start_acked = now;
    phase_ = RecoveryPhase::AwaitCatchup;
    recovery_.buddy = select_buddy(view_, cfg_.id);
    recovery_.catchup_sent = now;
    if (recovery_.buddy == kNoNode) {
      // Degenerate membership: nothing to catch up from.
      recovery_.resp_time = now;
      recovery_apply_started_ = true;
      phase_ = RecoveryPhase::Applying;
      maybe_finish_recovery(now, o);
      return;
    }
    send_catchup_req(o);
  }

  void send_catchup_req(StepOutput& o) {
    Message m = make_msg(MsgKind::CATCHUP_REQ, recovery_.buddy);
    m.flag = recovery_.fullcopy;
    m.chunk_index = recovery_.next_chunk;
    if (!recovery_.fullcopy) m.entries = pp_list_;
    o.out.push_back(std::move(m));
  }

  void handle_catchup_req(SimTime now, StepOutput& o, const Message& m) {
    if (m.flag) {
      serve_fullcopy_chunk(o, m.src, m.chunk_index);
      return;
    }
    auto& pc = pending_catchup_[m.src];
    pc.list = m.entries;
    pc.fullcopy = false;
    pc.barrier_epoch = view_.epoch;
    flush_pending_catchup(now, o);
  }

  /// The incremental CATCHUP_RESP waits until every write that was already in
  /// flight before the re-add reconfiguration has settled here; otherwise a
  /// VAL landing after the response would admit a buffer entry the recovering
  /// node can never learn about.
  bool old_writes_settled(Epoch barrier) const {
    for (const auto& [id, p] : follow_) {
      if (p.initiated_epoch < barrier) return false;
    }
    for (const auto& [id, w] : coord_) {
      if (w.initiated_epoch < barrier) return false;
    }
    for (const auto& [sid, sc] : scopes_) {
      if (sc.phase == ScopeState::Phase::Persisting &&
          sc.initiated_epoch < barrier) {
        return false;
      }
    }
    return true;
  }

  void flush_pending_catchup(SimTime now, StepOutput& o) {
    (void)now;
    for (auto it = pending_catchup_.begin(); it != pending_catchup_.end();) {
      if (!old_writes_settled(it->second.barrier_epoch)) {
        ++it;
        continue;
      }
      NodeId dst = it->first;
      Message resp = make_msg(MsgKind::CATCHUP_RESP, dst);
      auto bit = missed_.find(dst);
      if (bit != missed_.end() && bit->second.overflowed()) {
        resp.flag = true;  // fall back to full copy
      } else {
        std::vector<UpdateEntry> extras;
        resp.entries = buddy_check(it->second.list, dst, &extras);
        if (bit != missed_.end()) resp.buffer = bit->second.snapshot();
        for (const auto& e : extras) resp.buffer.push_back(e);
        std::sort(resp.buffer.begin(), resp.buffer.end());
      }
      o.out.push_back(std::move(resp));
      it = pending_catchup_.erase(it);
    }
  }

  void handle_catchup_resp(SimTime now, StepOutput& o, const Message& m) {
    if (phase_ != RecoveryPhase::AwaitCatchup &&
        phase_ != RecoveryPhase::Applying) {
      return;
    }
    if (m.src != recovery_.buddy) return;
    if (recovery_.fullcopy || m.chunk_total > 0) {
      handle_fullcopy_chunk(now, o, m);
      return;
    }
    if (recovery_.resp_received) return;
    recovery_.resp_received = true;
    recovery_.resp_time = now;
    if (m.flag) {
      // Buddy's buffer overflowed during the outage.
      recovery_.fullcopy = true;
      recovery_.fallback = true;
      recovery_.next_chunk = 0;
      recovery_.resp_received = false;
      send_catchup_req(o);
      return;
    }
    phase_ = RecoveryPhase::Applying;
    recovery_apply_started_ = true;
    recovery_.buffer_entries = m.buffer.size();
    recovery_.buffer_bytes = m.buffer.size() * cfg_.entry_bytes();
    for (const auto& e : m.buffer) apply_recovery_entry(o, e.key, e.ts);
    for (const auto& e : m.entries) {
      if (e.committed_mark) {
        // Confirmed globally committed; settle the gdp dilemma.
        if (has_write_durability_points(cfg_.model)) set_gdp(o, e.key, e.ts);
        continue;
      }
      if (record_ts(e.key) > e.ts) continue;  // superseded while shadowing
      // Never committed anywhere else: replay it as coordinator with the
      // original timestamp so every replica converges to it.
      ++recovery_.replayed;
      replays_pending_.insert({e.key, e.ts});
      Timestamp ts = e.ts;
      if (auto cit = coord_.find({e.key, ts}); cit == coord_.end()) {
        start_write(now, o, e.key, ts, 0, 0, /*replay=*/true);
      }
    }
    maybe_finish_recovery(now, o);
  }

  void apply_recovery_entry(StepOutput& o, Key key, const Timestamp& ts) {
    if (ts <= record_ts(key)) {
      ++recovery_.rejected;  // obsolete via ShadowReplica traffic
      return;
    }
    stage_record(o, key, ts);
    validate_record(o, key);
    if (!log_.covers(key, ts)) {
      bool bg = cfg_.model == PersistencyModel::Event;
      if (!bg) ++recovery_persists_;
      o.persists.push_back(entry_persist(key, ts, 0, bg, !bg));
    }
  }

  void maybe_finish_recovery(SimTime now, StepOutput& o) {
    if (phase_ != RecoveryPhase::Applying) return;
    if (!recovery_apply_started_) return;
    if (recovery_persists_ > 0 || !replays_pending_.empty()) return;
    phase_ = RecoveryPhase::FullyOnline;
    o.cancel_timers.push_back(TimerKey{TimerKind::RecovRetry, 0, {}, 0});
    for (auto n : view_.live) {
      if (n != cfg_.id) o.out.push_back(make_msg(MsgKind::RECOV_END, n));
    }
    o.out.push_back(make_msg(MsgKind::RECOV_END, cfg_.cm_node));
    RecoveryReport r;
    r.node = cfg_.id;
    r.incremental = !recovery_.fullcopy;
    r.fallback_fullcopy = recovery_.fallback;
    r.start_to_ack = recovery_.start_acked - recovery_.start_sent;
    r.catchup_to_resp = recovery_.resp_time - recovery_.catchup_sent;
    r.apply_to_end = now - recovery_.resp_time;
    r.total = now - recovery_.reconf_time;
    r.buffer_entries = recovery_.buffer_entries;
    r.buffer_bytes = recovery_.buffer_bytes;
    r.entries_rejected = recovery_.rejected;
    r.entries_replayed = recovery_.replayed;
    o.recovery_reports.push_back(r);
    o.events.push_back({StepEvent::Kind::FullyOnline, 0, {}, cfg_.id, {}});
  }

  void handle_recov_end(SimTime now, StepOutput& o, const Message& m) {
    (void)now;
    (void)o;
    missed_.erase(m.src);
    pending_catchup_.erase(m.src);
    fullcopy_cursor_.erase(m.src);
  }

  void fire_recov_retry(SimTime now, StepOutput& o) {
    switch (phase_) {
      case RecoveryPhase::AwaitStartAcks:
        for (auto n : view_.live) {
          if (n != cfg_.id && start_acks_.count(n) == 0) {
            o.out.push_back(make_msg(MsgKind::RECOV_START, n));
          }
        }
        break;
      case RecoveryPhase::AwaitCatchup:
        send_catchup_req(o);
        break;
      case RecoveryPhase::Applying:
        if (recovery_.fullcopy && !recovery_.chunk_in_flight) {
          send_catchup_req(o);
        }
        break;
      default:
        return;
    }
    (void)now;
    o.set_timers.push_back({TimerKey{TimerKind::RecovRetry, 0, {}, 0},
                            cfg_.recov_retry_timeout});
  }

  // -------------------------------------------------------------- fullcopy --

  std::uint64_t fullcopy_chunks() const {
    std::uint64_t total = cfg_.fullcopy_total_bytes;
    if (total == 0) total = records_.size() * cfg_.entry_bytes();
    if (total == 0) return 1;
    return (total + cfg_.fullcopy_chunk_bytes - 1) / cfg_.fullcopy_chunk_bytes;
  }

  void serve_fullcopy_chunk(StepOutput& o, NodeId dst, std::uint64_t index) {
    auto [it, inserted] = fullcopy_cursor_.try_emplace(dst);
    if (inserted) {
      for (const auto& [key, rec] : records_) it->second.push_back(key);
    }
    const auto& keys = it->second;
    std::uint64_t total = fullcopy_chunks();
    if (index >= total) index = total - 1;
    Message m = make_msg(MsgKind::CATCHUP_RESP, dst);
    m.flag = true;
    m.chunk_index = index;
    m.chunk_total = total;
    std::uint64_t lo = keys.size() * index / total;
    std::uint64_t hi = keys.size() * (index + 1) / total;
    for (std::uint64_t i = lo; i < hi; ++i) {
      Key k = keys[i];
      m.entries.push_back(UpdateEntry{k, record_ts(k)});
    }
    o.out.push_back(std::move(m));
    if (index + 1 == total) fullcopy_cursor_.erase(dst);
  }

  void handle_fullcopy_chunk(SimTime now, StepOutput& o, const Message& m) {
    if (!recovery_.fullcopy) return;
    if (m.chunk_index != recovery_.next_chunk) return;  // duplicate
    if (recovery_.chunk_in_flight) return;              // retry raced a reply
    recovery_.chunk_in_flight = true;
    if (phase_ == RecoveryPhase::AwaitCatchup) {
      recovery_.resp_time = now;
      phase_ = RecoveryPhase::Applying;
    }
    recovery_.chunk_total = m.chunk_total;
    recovery_.buffer_entries += m.entries.size();
    for (const auto& e : m.entries) {
      if (e.ts <= record_ts(e.key)) {
        ++recovery_.rejected;
        continue;
      }
      stage_record(o, e.key, e.ts);
      validate_record(o, e.key);
      chunk_entries_[m.chunk_index].push_back(e);
    }
    // One bulk persist models the chunk landing in persistent memory; the
    // contained entries join the log when it completes.
    PersistRequest r;
    r.size_bytes = cfg_.fullcopy_chunk_bytes;
    r.recovery = true;
    ++recovery_persists_;
    o.persists.push_back(r);
  }

  void handle_chunk_persisted(SimTime now, StepOutput& o,
                              const PersistRequest&) {
    auto it = chunk_entries_.find(recovery_.next_chunk);
    if (it != chunk_entries_.end()) {
      for (const auto& e : it->second) log_.append(e.key, e.ts, 0);
      chunk_entries_.erase(it);
    }
    if (recovery_persists_ > 0) --recovery_persists_;
    recovery_.chunk_in_flight = false;
    ++recovery_.next_chunk;
    if (recovery_.next_chunk < recovery_.chunk_total) {
      send_catchup_req(o);
      return;
    }
    recovery_apply_started_ = true;
    maybe_finish_recovery(now, o);
  }

 public:
  /// Deterministic buddy assignment: for each recovering node in ascending id
  /// order, the next live non-recovering node in ring order not yet taken.
  static NodeId select_buddy(const MembershipView& v, NodeId recovering) {
    std::set<NodeId> taken;
    for (auto r : v.recovering) {
      NodeId pick = kNoNode;
      std::size_t n = v.live.size();
      std::size_t start = 0;
      while (start < n && v.live[start] != r) ++start;
      if (start == n) start = 0;
      for (std::size_t i = 1; i <= n; ++i) {
        NodeId cand = v.live[(start + i) % n];
        if (cand == r || v.is_recovering(cand) || taken.count(cand)) continue;
        pick = cand;
        break;
      }
      if (r == recovering) return pick;
      if (pick != kNoNode) taken.insert(pick);
    }
    // Not listed as recovering (direct calls): plain ring order.
    std::size_t n = v.live.size();
    std::size_t start = 0;
    while (start < n && v.live[start] != recovering) ++start;
    if (start == n) start = 0;
    for (std::size_t i = 1; i <= n; ++i) {
      NodeId cand = v.live[(start + i) % n];
      if (cand != recovering && !v.is_recovering(cand)) return cand;
    }
    return kNoNode;
  }

 private:
  ReplicaConfig cfg_;
  MembershipView view_;
  RecoveryPhase phase_ = RecoveryPhase::FullyOnline;

  std::map<Key, RecordEntry> records_;
  NvmLog log_;
  std::map<WriteId, CoordWrite> coord_;
  std::map<WriteId, FollowerPending> follow_;
  std::map<ScopeId, ScopeState> scopes_;
  std::map<ScopeId, FollowerScope> follow_scopes_;
  std::map<NodeId, MissedUpdatesBuffer> missed_;
  std::vector<DeferredAck> deferred_acks_;
  std::map<WriteId, DurabilityMarks> marks_;
  std::map<Key, std::vector<RequestId>> read_waiters_;
  std::set<WriteId> gdp_on_persist_;
  std::vector<PersistRequest> bg_queue_;

  RecoverySession recovery_;
  std::set<NodeId> start_acks_;
  std::vector<UpdateEntry> pp_list_;
  std::uint64_t recovery_persists_ = 0;
  std::set<WriteId> replays_pending_;
  bool recovery_apply_started_ = false;

  std::map<NodeId, PendingCatchup> pending_catchup_;
  std::map<NodeId, std::vector<Key>> fullcopy_cursor_;
  std::map<std::uint64_t, std::vector<UpdateEntry>> chunk_entries_;
};

}  // namespace replsim
