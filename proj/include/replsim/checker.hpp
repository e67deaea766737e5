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
#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/membership.hpp"
#include "replsim/message.hpp"
#include "replsim/replica.hpp"
#include "replsim/statedump.hpp"

namespace replsim {

struct CheckerConfig {
  std::uint32_t nodes = 3;
  std::uint64_t keys = 1;
  std::uint32_t writers = 2;
  std::uint32_t writes_per_writer = 1;
  PersistencyModel model = PersistencyModel::Synch;
  std::uint32_t crash_budget = 1;
  std::uint32_t drop_budget = 1;
  bool with_recovery = true;
  std::uint64_t state_cap = 10000000;
  std::uint32_t workers = 1;
  Mutations mutations;
  bool track_graph = true;  // parent pointers + edges (traces, livelock pass)
  bool stop_on_violation = true;
  void (*progress)(std::uint32_t depth, std::uint64_t states,
                   std::uint64_t frontier) = nullptr;
};

/// One explorable transition.
struct CheckerAction {
  enum class Kind : std::uint8_t {
    Deliver,
    Drop,
    PersistDone,
    TimerFire,
    IssueOp,
    Detect,
    DeclareReady,
    ResendReconfig,
    Crash,
  };
  Kind kind = Kind::Deliver;
  Message msg;      // Deliver / Drop
  NodeId node = 0;  // PersistDone / TimerFire / Detect / DeclareReady / Crash
  TimerKey timer;   // TimerFire
  std::uint32_t writer = 0;  // IssueOp

  std::string describe() const {
    switch (kind) {
      case Kind::Deliver:
        return "deliver " + std::string(to_string(msg.kind)) + " " +
               std::to_string(msg.src) + "->" + std::to_string(msg.dst) +
               " k=" + std::to_string(msg.key) + " v=" +
               std::to_string(msg.ts.version) + "," +
               std::to_string(msg.ts.node);
      case Kind::Drop:
        return "drop " + std::string(to_string(msg.kind)) + " " +
               std::to_string(msg.src) + "->" + std::to_string(msg.dst);
      case Kind::PersistDone: return "persist node " + std::to_string(node);
      case Kind::TimerFire:
        return "timer " + std::string(to_string(timer.kind)) + " node " +
               std::to_string(node) + " k=" + std::to_string(timer.key);
      case Kind::IssueOp: return "issue writer " + std::to_string(writer);
      case Kind::Detect: return "detect node " + std::to_string(node);
      case Kind::DeclareReady: return "ready node " + std::to_string(node);
      case Kind::ResendReconfig:
        return "reconfig resend node " + std::to_string(node);
      case Kind::Crash: return "crash node " + std::to_string(node);
    }
    return "?";
  }
};

/// Explicit global state: every replica, the CM, the in-flight message set,
/// armed timers, per-node persist FIFOs, fault budgets and script positions.
/// The network is a set: retransmitting an identical message is a no-op,
/// which keeps the space finite (the exploration granularity is one step
/// function invocation, coarser than statement-level interleaving).
struct GlobalState {
  std::vector<Replica> replicas;
  CmNode cm;
  std::vector<Message> in_flight;                    // sorted, deduped
  std::set<std::pair<NodeId, TimerKey>> timers;      // armed set
  std::vector<std::vector<PersistRequest>> persist_q;
  std::vector<bool> crashed;
  std::vector<std::uint8_t> issued;     // per writer
  std::vector<std::uint8_t> completed;  // per writer
  std::vector<bool> outstanding;        // per writer
  std::vector<bool> persist_issued;     // per writer (Scope)
  std::vector<bool> persist_done_flag;  // per writer (Scope)
  std::uint32_t crashes_left = 0;
  std::uint32_t drops_left = 0;
  std::vector<bool> ready_used;  // per node
  std::uint32_t total_completions = 0;

  std::uint64_t fingerprint() const {
    Fingerprint f;
    for (const auto& r : replicas) r.fingerprint(f);
    cm.fingerprint(f);
    f.put_u64(in_flight.size());
    for (const auto& m : in_flight) fingerprint_message(f, m);
    f.put_u64(timers.size());
    for (const auto& [n, t] : timers) {
      f.put_u32(n);
      f.put_u32(static_cast<std::uint32_t>(t.kind));
      f.put_u64(t.key);
      f.put_u64(t.ts.version);
      f.put_u32(t.ts.node);
      f.put_u64(t.scope);
    }
    for (const auto& q : persist_q) {
      f.put_u64(q.size());
      for (const auto& p : q) {
        f.put_u64(p.key);
        f.put_u64(p.ts.version);
        f.put_u32(p.ts.node);
        f.put_u64(p.scope);
        f.put_bool(p.background);
        f.put_bool(p.recovery);
      }
    }
    for (bool b : crashed) f.put_bool(b);
    for (auto v : issued) f.put_u64(v);
    for (auto v : completed) f.put_u64(v);
    for (bool b : outstanding) f.put_bool(b);
    for (bool b : persist_issued) f.put_bool(b);
    for (bool b : persist_done_flag) f.put_bool(b);
    f.put_u32(crashes_left);
    f.put_u32(drops_left);
    for (bool b : ready_used) f.put_bool(b);
    f.put_u32(total_completions);
    return f.value();
  }
};

struct CheckerViolation {
  std::string check;
  std::string detail;
  std::uint64_t state_fp = 0;

  bool operator<(const CheckerViolation& o) const {
    return check < o.check || (check == o.check && detail < o.detail);
  }
};

struct CheckerReport {
  std::uint64_t states = 0;
  std::uint64_t transitions = 0;
  std::uint32_t diameter = 0;
  bool complete = true;  // false if the state cap was hit
  std::set<std::string> violated_checks;
  std::vector<CheckerViolation> violations;  // capped examples
  std::vector<CheckerAction> counterexample;

  bool ok() const { return violated_checks.empty(); }
};

/// Breadth-first exhaustive explorer over the same step functions the
/// simulator drives. Visited-set dedup uses 64-bit fingerprints (collision
/// probability ~1e-6 at the 10M-state cap).
class Checker {
 public:
  explicit Checker(const CheckerConfig& cfg) : cfg_(cfg) {}

  GlobalState initial_state() const {
    GlobalState s;
    MembershipView v;
    v.epoch = 1;
    for (NodeId n = 0; n < cfg_.nodes; ++n) v.live.push_back(n);
    NodeId cm_id = cfg_.nodes;
    for (NodeId n = 0; n < cfg_.nodes; ++n) {
      ReplicaConfig rc;
      rc.id = n;
      rc.cm_node = cm_id;
      rc.model = cfg_.model;
      rc.missed_updates_capacity = UINT64_MAX;
      rc.seed = 1;
      rc.mutations = cfg_.mutations;
      s.replicas.emplace_back(rc, v);
    }
    CmConfig cc;
    cc.id = cm_id;
    for (NodeId n = 0; n < cfg_.nodes; ++n) cc.data_nodes.push_back(n);
    s.cm = CmNode(cc, v, 0);
    s.persist_q.resize(cfg_.nodes);
    s.crashed.assign(cfg_.nodes, false);
    s.issued.assign(cfg_.writers, 0);
    s.completed.assign(cfg_.writers, 0);
    s.outstanding.assign(cfg_.writers, false);
    s.persist_issued.assign(cfg_.writers, false);
    s.persist_done_flag.assign(cfg_.writers, false);
    s.crashes_left = cfg_.crash_budget;
    s.drops_left = cfg_.drop_budget;
    s.ready_used.assign(cfg_.nodes, false);
    return s;
  }

  // ------------------------------------------------------------ semantics --

  bool scripts_done_or_waived(const GlobalState& s) const {
    for (std::uint32_t w = 0; w < cfg_.writers; ++w) {
      if (s.crashed[w]) continue;  // a crashed writer's client gave up
      if (s.replicas[w].phase() != RecoveryPhase::FullyOnline) continue;
      if (s.issued[w] < cfg_.writes_per_writer) return false;
      if (s.outstanding[w]) return false;
      if (cfg_.model == PersistencyModel::Scope &&
          (!s.persist_issued[w] || !s.persist_done_flag[w])) {
        return false;
      }
    }
    return true;
  }

  /// Settled: nothing in flight anywhere and every live node fully online
  /// with only valid records. Quiescence checks run here.
  bool settled(const GlobalState& s) const {
    if (!s.in_flight.empty()) return false;
    for (const auto& q : s.persist_q) {
      if (!q.empty()) return false;
    }
    if (!scripts_done_or_waived(s)) return false;
    for (NodeId n = 0; n < cfg_.nodes; ++n) {
      if (s.crashed[n]) continue;
      if (!s.cm.view().is_live(n)) return false;  // removed, never recovered
      if (s.replicas[n].phase() != RecoveryPhase::FullyOnline) return false;
      for (const auto& [key, rec] : s.replicas[n].store()) {
        if (!rec.valid) return false;
      }
    }
    return true;
  }

  std::vector<CheckerAction> enabled_system_actions(
      const GlobalState& s) const {
    std::vector<CheckerAction> out;
    for (const auto& m : s.in_flight) {
      CheckerAction a;
      a.kind = CheckerAction::Kind::Deliver;
      a.msg = m;
      out.push_back(std::move(a));
    }
    for (NodeId n = 0; n < cfg_.nodes; ++n) {
      if (!s.persist_q[n].empty() && !s.crashed[n]) {
        CheckerAction a;
        a.kind = CheckerAction::Kind::PersistDone;
        a.node = n;
        out.push_back(a);
      }
    }
    for (const auto& [n, t] : s.timers) {
      if (s.crashed[n]) continue;
      if (!retry_relevant(s, n, t)) continue;
      CheckerAction a;
      a.kind = CheckerAction::Kind::TimerFire;
      a.node = n;
      a.timer = t;
      out.push_back(a);
    }
    for (std::uint32_t w = 0; w < cfg_.writers; ++w) {
      if (s.crashed[w] || s.outstanding[w]) continue;
      if (s.replicas[w].phase() != RecoveryPhase::FullyOnline) continue;
      if (!s.cm.view().is_live(w) || s.cm.view().cluster_paused) continue;
      bool more_writes = s.issued[w] < cfg_.writes_per_writer;
      bool scope_persist = cfg_.model == PersistencyModel::Scope &&
                           !more_writes && !s.persist_issued[w];
      if (more_writes || scope_persist) {
        CheckerAction a;
        a.kind = CheckerAction::Kind::IssueOp;
        a.writer = w;
        out.push_back(a);
      }
    }
    for (NodeId n = 0; n < cfg_.nodes; ++n) {
      if (s.crashed[n] && s.cm.view().is_live(n)) {
        CheckerAction a;
        a.kind = CheckerAction::Kind::Detect;
        a.node = n;
        out.push_back(a);
      }
      if (cfg_.with_recovery && s.crashed[n] && !s.cm.view().is_live(n) &&
          !s.ready_used[n] && s.cm.absent().count(n) > 0) {
        CheckerAction a;
        a.kind = CheckerAction::Kind::DeclareReady;
        a.node = n;
        out.push_back(a);
      }
      if (!s.crashed[n] && s.cm.view().is_live(n) &&
          s.replicas[n].view().epoch < s.cm.view().epoch) {
        bool in_flight = false;
        for (const auto& m : s.in_flight) {
          if (m.kind == MsgKind::RECONFIG && m.dst == n &&
              m.epoch >= s.cm.view().epoch) {
            in_flight = true;
            break;
          }
        }
        if (!in_flight) {
          CheckerAction a;
          a.kind = CheckerAction::Kind::ResendReconfig;
          a.node = n;
          out.push_back(a);
        }
      }
    }
    return out;
  }

  /// A retry timer is explored only when the exchange it guards is stuck in
  /// the strong sense: no message for it is in flight and no queued persist
  /// will produce the awaited reply. Firing earlier only re-inserts messages
  /// equal to ones still circulating, which multiplies interleavings without
  /// adding behaviors; after a drop consumed the last copy, the gate opens
  /// and the retransmission restores liveness. Duplicate-delivery handling
  /// is still reached (drop an ACK: the rebroadcast INV arrives at a node
  /// that already applied it).
  bool retry_relevant(const GlobalState& s, NodeId n, const TimerKey& t) const {
    if (t.kind == TimerKind::Takeover || t.kind == TimerKind::Heartbeat) {
      return true;
    }
    if (t.kind == TimerKind::RecovRetry) {
      for (const auto& m : s.in_flight) {
        if (is_recovery_kind(m.kind) && (m.src == n || m.dst == n)) {
          return false;
        }
      }
      return true;
    }
    bool scope_round = t.key == 0 && t.scope != 0;  // PERSIST_SC exchange
    for (const auto& m : s.in_flight) {
      if (scope_round) {
        if (m.scope == t.scope &&
            (m.kind == MsgKind::PERSIST_SC || m.kind == MsgKind::ACK_P_SC ||
             m.kind == MsgKind::VAL_P_SC)) {
          return false;
        }
      } else if (m.key == t.key && m.ts == t.ts &&
                 !is_recovery_kind(m.kind) && !is_membership_kind(m.kind)) {
        return false;
      }
    }
    for (NodeId q = 0; q < cfg_.nodes; ++q) {
      if (s.crashed[q]) continue;
      for (const auto& p : s.persist_q[q]) {
        if (scope_round ? p.scope == t.scope : p.key == t.key) return false;
      }
    }
    return true;
  }

  std::vector<CheckerAction> enabled_fault_actions(
      const GlobalState& s) const {
    std::vector<CheckerAction> out;
    if (s.crashes_left > 0) {
      for (NodeId n = 0; n < cfg_.nodes; ++n) {
        if (!s.crashed[n]) {
          CheckerAction a;
          a.kind = CheckerAction::Kind::Crash;
          a.node = n;
          out.push_back(a);
        }
      }
    }
    if (s.drops_left > 0) {
      for (const auto& m : s.in_flight) {
        CheckerAction a;
        a.kind = CheckerAction::Kind::Drop;
        a.msg = m;
        out.push_back(std::move(a));
      }
    }
    return out;
  }

  /// Apply one action. Returns false if the action is not applicable in
  /// this state (used by trace re-execution and minimization).
  bool apply(GlobalState& s, const CheckerAction& a,
             std::vector<CheckerViolation>* out_violations) const {
    switch (a.kind) {
      case CheckerAction::Kind::Deliver: {
        auto it = std::find(s.in_flight.begin(), s.in_flight.end(), a.msg);
        if (it == s.in_flight.end()) return false;
        Message m = *it;
        s.in_flight.erase(it);
        if (m.dst == cfg_.nodes) {  // the CM node
          absorb(s, m.dst, s.cm.deliver(0, m), out_violations);
          return true;
        }
        if (s.crashed[m.dst]) return true;  // vanishes at a dead node
        StepOutput o = s.replicas[m.dst].deliver(0, m);
        check_val_emissions(s, m.dst, o, out_violations);
        absorb(s, m.dst, std::move(o), out_violations);
        return true;
      }
      case CheckerAction::Kind::Drop: {
        auto it = std::find(s.in_flight.begin(), s.in_flight.end(), a.msg);
        if (it == s.in_flight.end() || s.drops_left == 0) return false;
        s.in_flight.erase(it);
        --s.drops_left;
        return true;
      }
      case CheckerAction::Kind::PersistDone: {
        if (s.persist_q[a.node].empty() || s.crashed[a.node]) return false;
        PersistRequest p = s.persist_q[a.node].front();
        s.persist_q[a.node].erase(s.persist_q[a.node].begin());
        StepOutput o = s.replicas[a.node].persist_done(0, p);
        check_val_emissions(s, a.node, o, out_violations);
        absorb(s, a.node, std::move(o), out_violations);
        return true;
      }
      case CheckerAction::Kind::TimerFire: {
        auto key = std::make_pair(a.node, a.timer);
        if (s.timers.count(key) == 0 || s.crashed[a.node]) return false;
        s.timers.erase(key);
        StepOutput o = s.replicas[a.node].timer_fire(0, a.timer);
        check_val_emissions(s, a.node, o, out_violations);
        absorb(s, a.node, std::move(o), out_violations);
        return true;
      }
      case CheckerAction::Kind::IssueOp: {
        std::uint32_t w = a.writer;
        if (w >= cfg_.writers || s.crashed[w] || s.outstanding[w]) return false;
        if (s.replicas[w].phase() != RecoveryPhase::FullyOnline) return false;
        StepOutput o;
        RequestId req = (static_cast<RequestId>(w) << 16) | (s.issued[w] + 1);
        if (s.issued[w] < cfg_.writes_per_writer) {
          Key key = s.issued[w] % cfg_.keys;
          ScopeId scope = cfg_.model == PersistencyModel::Scope
                              ? (static_cast<ScopeId>(w) + 1)
                              : 0;
          o = s.replicas[w].client_write(0, req, key, scope);
          ++s.issued[w];
        } else if (cfg_.model == PersistencyModel::Scope &&
                   !s.persist_issued[w]) {
          o = s.replicas[w].client_persist(0, req,
                                           static_cast<ScopeId>(w) + 1);
          s.persist_issued[w] = true;
        } else {
          return false;
        }
        s.outstanding[w] = true;
        check_val_emissions(s, w, o, out_violations);
        absorb(s, w, std::move(o), out_violations);
        return true;
      }
      case CheckerAction::Kind::Detect: {
        if (!s.crashed[a.node] || !s.cm.view().is_live(a.node)) return false;
        absorb(s, cfg_.nodes, s.cm.force_detect(0, a.node), out_violations);
        return true;
      }
      case CheckerAction::Kind::DeclareReady: {
        if (!s.crashed[a.node] || s.cm.view().is_live(a.node) ||
            s.ready_used[a.node]) {
          return false;
        }
        s.ready_used[a.node] = true;
        s.crashed[a.node] = false;
        absorb(s, cfg_.nodes, s.cm.declare_ready(0, {a.node}), out_violations);
        return true;
      }
      case CheckerAction::Kind::ResendReconfig: {
        if (s.crashed[a.node] || !s.cm.view().is_live(a.node)) return false;
        if (s.replicas[a.node].view().epoch >= s.cm.view().epoch) return false;
        Message m;
        m.kind = MsgKind::RECONFIG;
        m.src = cfg_.nodes;
        m.dst = a.node;
        m.epoch = s.cm.view().epoch;
        m.view = s.cm.view();
        insert_message(s, std::move(m));
        return true;
      }
      case CheckerAction::Kind::Crash: {
        if (s.crashes_left == 0 || s.crashed[a.node]) return false;
        --s.crashes_left;
        s.crashed[a.node] = true;
        s.replicas[a.node].crash();
        s.persist_q[a.node].clear();  // device writes in flight are lost
        for (auto it = s.timers.begin(); it != s.timers.end();) {
          if (it->first == a.node) {
            it = s.timers.erase(it);
          } else {
            ++it;
          }
        }
        return true;
      }
    }
    return false;
  }

  // -------------------------------------------------------------- checks --

  /// §-style checks at VAL emission: when a coordinator sends a consistency
  /// (resp. persistency) VAL for a record, every fully-online replica's
  /// volatile (resp. NVM) timestamp for the key must be >= the VAL's.
  void check_val_emissions(const GlobalState& s, NodeId sender,
                           const StepOutput& o,
                           std::vector<CheckerViolation>* v) const {
    if (v == nullptr) return;
    for (const auto& m : o.out) {
      bool consistency = m.kind == MsgKind::VAL || m.kind == MsgKind::VAL_C;
      bool persistency =
          m.kind == MsgKind::VAL_P ||
          ((m.kind == MsgKind::VAL) &&
           (cfg_.model == PersistencyModel::Synch ||
            cfg_.model == PersistencyModel::REnf));
      if (m.kind == MsgKind::VAL_P_SC) {
        for (const auto& e : m.entries) {
          check_nvm_coverage(s, sender, e.key, e.ts, "3b", v);
        }
        continue;
      }
      if (!consistency && !persistency) continue;
      if (consistency) {
        for (NodeId n = 0; n < cfg_.nodes; ++n) {
          if (!participates(s, n)) continue;
          if (s.replicas[n].record_ts(m.key) < m.ts) {
            v->push_back({"2b",
                          "volatile ts behind VAL at node " +
                              std::to_string(n) + " key " +
                              std::to_string(m.key)});
            break;
          }
        }
      }
      if (persistency) check_nvm_coverage(s, sender, m.key, m.ts, "3b", v);
    }
  }

  bool participates(const GlobalState& s, NodeId n) const {
    if (s.crashed[n]) return false;
    if (!s.cm.view().is_live(n)) return false;
    return s.replicas[n].phase() == RecoveryPhase::FullyOnline;
  }

  void check_nvm_coverage(const GlobalState& s, NodeId sender, Key key,
                          const Timestamp& ts, const char* check,
                          std::vector<CheckerViolation>* v) const {
    (void)sender;
    for (NodeId n = 0; n < cfg_.nodes; ++n) {
      if (!participates(s, n)) continue;
      if (!s.replicas[n].nvm_log().covers(key, ts)) {
        v->push_back({check, "NVM behind persistency VAL at node " +
                                 std::to_string(n) + " key " +
                                 std::to_string(key)});
        return;
      }
    }
  }

  /// Quiescence checks at settled states: volatile and durable timestamp
  /// agreement and recovery completeness.
  void check_settled(const GlobalState& s,
                     std::vector<CheckerViolation>* v) const {
    std::vector<NodeId> online;
    for (NodeId n = 0; n < cfg_.nodes; ++n) {
      if (participates(s, n)) online.push_back(n);
    }
    for (std::size_t i = 1; i < online.size(); ++i) {
      if (volatile_state(s.replicas[online[0]]) !=
          volatile_state(s.replicas[online[i]])) {
        v->push_back({"2a", "volatile states differ at quiescence (nodes " +
                                std::to_string(online[0]) + "," +
                                std::to_string(online[i]) + ")"});
        break;
      }
    }
    bool check_durable = cfg_.model != PersistencyModel::Scope ||
                         s.crashes_left == cfg_.crash_budget;
    if (check_durable) {
      for (std::size_t i = 1; i < online.size(); ++i) {
        if (durable_state(s.replicas[online[0]]) !=
            durable_state(s.replicas[online[i]])) {
          v->push_back({"3a", "durable states differ at quiescence (nodes " +
                                  std::to_string(online[0]) + "," +
                                  std::to_string(online[i]) + ")"});
          break;
        }
      }
    }
    if (cfg_.with_recovery) {
      for (NodeId n = 0; n < cfg_.nodes; ++n) {
        if (s.ready_used[n] && participates(s, n) && !online.empty()) {
          if (volatile_state(s.replicas[n]) !=
              volatile_state(s.replicas[online[0]])) {
            v->push_back({"4", "recovered node " + std::to_string(n) +
                                   " differs after recovery"});
          }
        }
      }
    }
  }

  // ------------------------------------------------------------- explore --

  CheckerReport explore() const {
    CheckerReport report;
    GlobalState init = initial_state();
    std::uint64_t init_fp = init.fingerprint();

    std::unordered_set<std::uint64_t> visited;
    visited.insert(init_fp);
    struct Edge {
      std::uint64_t parent;
      CheckerAction action;
    };
    std::unordered_map<std::uint64_t, Edge> parents;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> edges;
    std::vector<GlobalState> frontier;
    frontier.push_back(std::move(init));
    std::unordered_set<std::uint64_t> settled_fps;

    std::mutex mu;
    std::atomic<bool> capped{false};
    std::uint64_t transitions = 0;
    std::map<std::string, CheckerViolation> first_violations;

    std::uint32_t depth = 0;
    while (!frontier.empty() && !capped.load()) {
      std::vector<GlobalState> next;
      std::uint32_t workers = std::max<std::uint32_t>(1, cfg_.workers);
      std::vector<std::thread> pool;
      std::atomic<std::size_t> cursor{0};
      auto work = [&]() {
        std::vector<GlobalState> local_next;
        std::vector<CheckerViolation> local_viol;
        std::vector<std::pair<std::uint64_t, std::uint64_t>> local_edges;
        std::vector<std::pair<std::uint64_t, Edge>> local_parents;
        std::vector<std::uint64_t> local_settled;
        std::uint64_t local_transitions = 0;
        while (true) {
          std::size_t i = cursor.fetch_add(1);
          if (i >= frontier.size() || capped.load()) break;
          const GlobalState& cur = frontier[i];
          std::uint64_t cur_fp = cur.fingerprint();
          auto sys = enabled_system_actions(cur);
          auto faults = enabled_fault_actions(cur);
          bool is_settled = settled(cur);
          if (is_settled) {
            local_settled.push_back(cur_fp);
            check_settled(cur, &local_viol);
            for (auto& lv : local_viol) {
              if (lv.state_fp == 0) lv.state_fp = cur_fp;
            }
          } else if (sys.empty()) {
            local_viol.push_back(
                {"deadlock", "no enabled action before completion", cur_fp});
          }
          std::vector<CheckerAction> all = sys;
          all.insert(all.end(), faults.begin(), faults.end());
          for (const auto& a : all) {
            GlobalState nxt = cur;
            std::vector<CheckerViolation> v;
            if (!apply(nxt, a, &v)) continue;
            ++local_transitions;
            std::uint64_t fp = nxt.fingerprint();
            for (auto& lv : v) {
              if (lv.state_fp == 0) lv.state_fp = fp;
              local_viol.push_back(lv);
            }
            bool fresh = false;
            {
              std::lock_guard<std::mutex> g(mu);
              if (cfg_.track_graph) local_edges.push_back({cur_fp, fp});
              if (visited.size() >= cfg_.state_cap) {
                capped.store(true);
              } else if (visited.insert(fp).second) {
                fresh = true;
                if (cfg_.track_graph) {
                  local_parents.push_back({fp, Edge{cur_fp, a}});
                }
              }
            }
            if (fresh) local_next.push_back(std::move(nxt));
          }
        }
        std::lock_guard<std::mutex> g(mu);
        for (auto& s : local_next) next.push_back(std::move(s));
        for (auto& v : local_viol) {
          first_violations.try_emplace(v.check + "|" + v.detail, v);
        }
        for (auto& e : local_edges) edges.push_back(e);
        for (auto& p : local_parents) parents.try_emplace(p.first, p.second);
        for (auto fp : local_settled) settled_fps.insert(fp);
        transitions += local_transitions;
      };
      if (workers == 1) {
        work();
      } else {
        for (std::uint32_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
      }
      if (!next.empty()) ++depth;
      frontier = std::move(next);
      if (cfg_.progress != nullptr) {
        cfg_.progress(depth, visited.size(), frontier.size());
      }
      if (cfg_.stop_on_violation && !first_violations.empty()) break;
    }

    report.states = visited.size();
    report.transitions = transitions;
    report.diameter = depth;
    report.complete = !capped.load();

    // Livelock approximation: from every reachable state some settled state
    // must be reachable (progress can always eventually be made).
    if (cfg_.track_graph && report.complete && !visited.empty()) {
      std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> rev;
      for (const auto& [a, b] : edges) rev[b].push_back(a);
      std::unordered_set<std::uint64_t> can_reach;
      std::vector<std::uint64_t> stack(settled_fps.begin(), settled_fps.end());
      for (auto fp : stack) can_reach.insert(fp);
      while (!stack.empty()) {
        std::uint64_t fp = stack.back();
        stack.pop_back();
        auto it = rev.find(fp);
        if (it == rev.end()) continue;
        for (auto p : it->second) {
          if (can_reach.insert(p).second) stack.push_back(p);
        }
      }
      for (auto fp : visited) {
        if (can_reach.count(fp) == 0) {
          first_violations.try_emplace(
              "livelock|no settled state reachable",
              CheckerViolation{"livelock", "no settled state reachable", fp});
          break;
        }
      }
    }

    for (auto& [k, v] : first_violations) {
      report.violated_checks.insert(v.check);
      if (report.violations.size() < 16) report.violations.push_back(v);
    }
    if (!report.violations.empty() && cfg_.track_graph) {
      report.counterexample =
          reconstruct_trace(parents, report.violations.front().state_fp);
    }
    return report;
  }

  /// Re-execute an action sequence from the initial state. Returns the
  /// violations triggered along the way, or nullopt if some action was not
  /// applicable (used by minimization).
  std::optional<std::vector<CheckerViolation>> execute(
      const std::vector<CheckerAction>& actions,
      GlobalState* out_final = nullptr) const {
    GlobalState s = initial_state();
    std::vector<CheckerViolation> v;
    for (const auto& a : actions) {
      if (!apply(s, a, &v)) return std::nullopt;
    }
    if (settled(s)) check_settled(s, &v);
    if (out_final != nullptr) *out_final = std::move(s);
    return v;
  }

  /// Greedy action-removal minimization: drop actions while the sequence
  /// still triggers a violation of the same check.
  std::vector<CheckerAction> minimize_counterexample(
      std::vector<CheckerAction> trace, const std::string& check) const {
    auto violates = [&](const std::vector<CheckerAction>& t) {
      auto v = execute(t);
      if (!v.has_value()) return false;
      for (const auto& x : *v) {
        if (x.check == check) return true;
      }
      return false;
    };
    if (!violates(trace)) return trace;
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t i = 0; i < trace.size(); ++i) {
        std::vector<CheckerAction> candidate;
        candidate.reserve(trace.size() - 1);
        for (std::size_t j = 0; j < trace.size(); ++j) {
          if (j != i) candidate.push_back(trace[j]);
        }
        if (violates(candidate)) {
          trace = std::move(candidate);
          changed = true;
          break;
        }
      }
    }
    return trace;
  }

 private:
  void insert_message(GlobalState& s, Message&& m) const {
    auto it = std::lower_bound(
        s.in_flight.begin(), s.in_flight.end(), m,
        [](const Message& a, const Message& b) { return message_less(a, b); });
    while (it != s.in_flight.end() && !message_less(m, *it) &&
           !message_less(*it, m)) {
      if (*it == m) return;  // the network is a set; duplicates are no-ops
      ++it;
    }
    s.in_flight.insert(it, std::move(m));
  }

  void absorb(GlobalState& s, NodeId node, StepOutput&& o,
              std::vector<CheckerViolation>* v) const {
    for (auto& m : o.out) insert_message(s, std::move(m));
    for (const auto& t : o.set_timers) {
      if (node < cfg_.nodes) s.timers.insert({node, t.timer});
    }
    for (const auto& t : o.cancel_timers) {
      if (node < cfg_.nodes) s.timers.erase({node, t});
    }
    for (auto& p : o.persists) {
      if (node < cfg_.nodes) s.persist_q[node].push_back(std::move(p));
    }
    for (const auto& c : o.completions) {
      std::uint32_t w = static_cast<std::uint32_t>(c.request >> 16);
      if (w < cfg_.writers && s.outstanding[w]) {
        s.outstanding[w] = false;
        if (c.status == OpStatus::Ok) {
          ++s.total_completions;
          bool was_persist = cfg_.model == PersistencyModel::Scope &&
                             s.persist_issued[w] &&
                             s.issued[w] >= cfg_.writes_per_writer &&
                             (c.request & 0xffff) > cfg_.writes_per_writer;
          if (was_persist) {
            s.persist_done_flag[w] = true;
          } else {
            ++s.completed[w];
          }
        } else if (c.status == OpStatus::Rejected) {
          // Issue action re-enables; the op retries.
          if ((c.request & 0xffff) <= cfg_.writes_per_writer) {
            --s.issued[w];
          } else {
            s.persist_issued[w] = false;
          }
        }
      }
    }
    for (const auto& ev : o.events) {
      if (ev.kind == StepEvent::Kind::GdpSet && v != nullptr) {
        check_nvm_coverage(s, node, ev.key, ev.ts, "gdp", v);
      }
    }
  }

  CheckerConfig cfg_;

 public:
  // Trace reconstruction uses the parent map captured during explore().
  template <typename ParentMap>
  std::vector<CheckerAction> reconstruct_trace(const ParentMap& parents,
                                               std::uint64_t fp) const {
    std::vector<CheckerAction> actions;
    std::uint64_t init_fp = initial_state().fingerprint();
    std::uint64_t cur = fp;
    std::unordered_set<std::uint64_t> seen;
    while (cur != init_fp) {
      auto it = parents.find(cur);
      if (it == parents.end() || !seen.insert(cur).second) break;
      actions.push_back(it->second.action);
      cur = it->second.parent;
    }
    std::reverse(actions.begin(), actions.end());
    return actions;
  }
};

}  // namespace replsim
