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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/history.hpp"
#include "replsim/membership.hpp"
#include "replsim/metrics.hpp"
#include "replsim/netmodel.hpp"
#include "replsim/replica.hpp"
#include "replsim/scenario.hpp"
#include "replsim/scheduler.hpp"
#include "replsim/statedump.hpp"
#include "replsim/trace.hpp"
#include "replsim/workload.hpp"

namespace replsim {

struct SimOptions {
  bool record_trace = true;
  bool check_invariants = true;
  bool check_linearizability = true;
  Mutations mutations;  // seeded-bug builds for the mutation suite
};

struct SimResult {
  bool ok = true;
  std::vector<std::string> violations;
  ThroughputSeries throughput;
  std::vector<RecoveryCsvRow> recoveries;
  MessageAccounting accounting;
  std::string trace;
  std::string statedump;
  std::vector<HistoryOp> history;
  SimTime end_time = 0;
  std::uint64_t completed_ops = 0;      // within the horizon
  std::uint64_t issued_ops = 0;
  std::map<NodeId, std::vector<std::pair<SimTime, SimTime>>> efn_windows;
  std::vector<std::pair<SimTime, SimTime>> pause_windows;
  std::uint64_t max_missed_entries = 0;

  std::uint64_t trace_hash() const {
    Fingerprint f;
    f.put_bytes(trace.data(), trace.size());
    return f.value();
  }
};

/// Deterministic discrete-event run of one scenario. Single-threaded;
/// independent runs may execute in parallel.
class Simulation {
 public:
  Simulation(const Scenario& sc, std::uint64_t seed, SimOptions opt = {})
      : sc_(sc), opt_(opt) {
    sc_.seed = seed;
    net_ = NetworkModel(sc_.network, seed);
    cm_id_ = sc_.nodes;  // the CM runs on a dedicated extra node
    MembershipView initial;
    initial.epoch = 1;
    for (NodeId n = 0; n < sc_.nodes; ++n) initial.live.push_back(n);
    for (NodeId n = 0; n < sc_.nodes; ++n) {
      ReplicaConfig rc;
      rc.id = n;
      rc.cm_node = cm_id_;
      rc.model = sc_.model;
      rc.key_bytes = sc_.key_bytes;
      rc.value_bytes = sc_.value_bytes;
      rc.missed_updates_capacity = sc_.missed_updates_capacity;
      rc.seed = seed;
      rc.inv_ack_timeout = sc_.inv_ack_timeout;
      rc.ack_val_timeout = sc_.ack_val_timeout;
      rc.takeover_stagger = sc_.takeover_stagger;
      rc.recov_retry_timeout = sc_.recovery_retry_timeout;
      rc.fullcopy_chunk_bytes = sc_.chunk_bytes;
      rc.fullcopy_total_bytes = sc_.modeled_store_bytes;
      rc.mutations = opt_.mutations;
      replicas_.emplace_back(rc, initial);
      nvm_queues_.emplace_back(sc_.nvm);
      cpu_free_.push_back(0);
      crashed_.push_back(false);
    }
    CmConfig cc;
    cc.id = cm_id_;
    for (NodeId n = 0; n < sc_.nodes; ++n) cc.data_nodes.push_back(n);
    cc.heartbeat_period = sc_.heartbeat_period;
    cc.timeout_multiplier = sc_.heartbeat_timeout_multiplier;
    cm_ = CmNode(cc, initial, 0);
    path_ = sc_.active_fullcopy_path();
  }

  SimResult run() {
    SimTime horizon = sc_.horizon;
    SimTime hard_stop = horizon + grace();
    result_.throughput = ThroughputSeries(sc_.throughput_window);
    if (opt_.record_trace) {
      TraceRecord meta;
      meta.type = TraceRecord::Type::Meta;
      meta.scenario = sc_.name;
      meta.seed = sc_.seed;
      meta.model = sc_.model;
      meta.nodes = sc_.nodes;
      meta.key_bytes = sc_.key_bytes;
      meta.value_bytes = sc_.value_bytes;
      trace_line(meta);
    }
    absorb(cm_id_, cm_.start(0), 0);
    schedule_faults();
    start_clients();

    SimTime last_time = 0;
    std::uint64_t same_time_events = 0;
    while (!queue_.empty()) {
      if (queue_.top().fire_time > hard_stop) break;
      SimEvent e = queue_.pop();
      now_ = e.fire_time;
      if (now_ == last_time) {
        if (++same_time_events > 2000000) {
          violation("livelock guard: simulated time stopped advancing");
          break;
        }
      } else {
        same_time_events = 0;
        last_time = now_;
      }
      dispatch(e);
      if (fatal_) break;
    }
    finalize(horizon);
    return std::move(result_);
  }

  const Replica& replica(NodeId n) const { return replicas_[n]; }
  const CmNode& cm() const { return cm_; }

 private:
  // ------------------------------------------------------------- plumbing --

  SimTime grace() const {
    SimTime g = 500_ms;
    g = std::max(g, 4 * sc_.client_timeout);
    g = std::max(g, 8 * sc_.heartbeat_period);
    return g;
  }

  void violation(const std::string& v) {
    result_.ok = false;
    result_.violations.push_back(v);
  }

  void trace_line(const TraceRecord& r) {
    if (!opt_.record_trace) return;
    result_.trace += encode_trace_record(r);
    result_.trace += '\n';
  }

  std::uint64_t msg_size(const Message& m) const {
    return message_size_bytes(m, sc_.key_bytes, sc_.value_bytes,
                              sc_.chunk_bytes);
  }

  bool node_up(NodeId n) const {
    if (n == cm_id_) return cm_alive_;
    return n < replicas_.size() && !crashed_[n];
  }

  // -------------------------------------------------------------- sending --

  void send_all(std::vector<Message>&& msgs) {
    for (auto& m : msgs) send(std::move(m));
  }

  void send(Message m) {
    ++result_.accounting.sent;
    std::uint64_t size = msg_size(m);
    bool chunk = m.kind == MsgKind::CATCHUP_RESP && m.chunk_total > 0;
    SimTime send_at = now_;
    if (chunk) {
      // Recoverer-side read stage of the transfer path.
      send_at += path_.chunk_read_time(static_cast<double>(sc_.chunk_bytes));
    }
    SimTime latency = 0;
    if (!net_.route(m, send_at, chunk ? 0 : size, &latency)) {
      ++result_.accounting.dropped_model;
      return;
    }
    if (chunk) {
      latency += bytes_time(static_cast<double>(sc_.chunk_bytes),
                            path_.net_bandwidth);
    }
    SimEvent e;
    e.kind = SimEvent::Kind::Deliver;
    e.fire_time = send_at + latency;
    e.node = m.dst;
    e.size = size;
    e.msg = std::move(m);
    queue_.push(std::move(e));
  }

  void absorb(NodeId node, StepOutput&& o, SimTime at) {
    for (auto& m : o.out) send(std::move(m));
    for (const auto& t : o.set_timers) {
      std::uint64_t gen = ++timer_seq_;
      timer_armed_[{node, t.timer}] = gen;
      SimEvent e;
      e.kind = SimEvent::Kind::TimerFire;
      e.fire_time = at + t.delay;
      e.node = node;
      e.timer = t.timer;
      e.timer_gen = gen;
      queue_.push(std::move(e));
    }
    for (const auto& t : o.cancel_timers) {
      timer_armed_.erase({node, t});
    }
    for (auto& p : o.persists) {
      SimEvent e;
      e.kind = SimEvent::Kind::PersistDone;
      e.node = node;
      if (p.size_bytes > 0) {
        // Full-copy chunk: write stage of the transfer path.
        e.fire_time =
            at + path_.chunk_write_time(static_cast<double>(p.size_bytes));
      } else {
        double bytes = static_cast<double>(sc_.key_bytes) + sc_.value_bytes + 16;
        e.fire_time = nvm_queues_[node].completion_time(at, bytes);
      }
      e.persist = std::move(p);
      queue_.push(std::move(e));
    }
    for (const auto& c : o.completions) handle_completion(node, c);
    for (const auto& ev : o.events) handle_event(node, ev);
    for (const auto& r : o.recovery_reports) record_recovery(node, r);
  }

  // ------------------------------------------------------------- dispatch --

  void dispatch(const SimEvent& e) {
    switch (e.kind) {
      case SimEvent::Kind::Deliver: deliver(e); break;
      case SimEvent::Kind::TimerFire: timer_fire(e); break;
      case SimEvent::Kind::PersistDone: persist_done(e); break;
      case SimEvent::Kind::ClientOp: client_issue(e.payload); break;
      case SimEvent::Kind::FaultAction: apply_fault(fault_script_[e.payload]); break;
      case SimEvent::Kind::ScenarioAction: scenario_action(e); break;
    }
  }

  void deliver(const SimEvent& e) {
    const Message& m = e.msg;
    if (!node_up(m.dst)) {
      ++result_.accounting.dropped_crashed;
      return;
    }
    // Receive-side processing cost serializes on the node's CPU.
    if (sc_.network.per_message_cpu > 0 && m.dst != cm_id_) {
      SimTime start = std::max(now_, cpu_free_[m.dst]);
      if (start > now_) {
        SimEvent again = e;
        again.fire_time = start;
        queue_.push(std::move(again));
        return;
      }
      cpu_free_[m.dst] = now_ + sc_.network.per_message_cpu;
    }
    ++result_.accounting.delivered;
    TraceRecord r;
    r.type = TraceRecord::Type::Deliver;
    r.sim_time_ns = now_;
    r.msg = m;
    r.size_bytes = e.size;
    trace_line(r);
    if (m.dst == cm_id_) {
      Epoch before = cm_.view().epoch;
      absorb(cm_id_, cm_.deliver(now_, m), now_);
      after_cm_step(before);
      return;
    }
    absorb(m.dst, replicas_[m.dst].deliver(now_, m), now_);
  }

  void timer_fire(const SimEvent& e) {
    auto it = timer_armed_.find({e.node, e.timer});
    if (it == timer_armed_.end() || it->second != e.timer_gen) return;  // stale
    timer_armed_.erase(it);
    if (!node_up(e.node)) return;
    TraceRecord r;
    r.type = TraceRecord::Type::Timer;
    r.sim_time_ns = now_;
    r.node = e.node;
    r.timer = e.timer;
    trace_line(r);
    if (e.node == cm_id_) {
      Epoch before = cm_.view().epoch;
      absorb(cm_id_, cm_.timer_fire(now_, e.timer), now_);
      after_cm_step(before);
      return;
    }
    absorb(e.node, replicas_[e.node].timer_fire(now_, e.timer), now_);
  }

  void persist_done(const SimEvent& e) {
    if (!node_up(e.node)) return;
    TraceRecord r;
    r.type = TraceRecord::Type::Persist;
    r.sim_time_ns = now_;
    r.node = e.node;
    r.persist = e.persist;
    trace_line(r);
    absorb(e.node, replicas_[e.node].persist_done(now_, e.persist), now_);
  }

  // -------------------------------------------------------------- CM bits --

  void after_cm_step(Epoch before) {
    const auto& v = cm_.view();
    if (v.epoch == before) return;
    // Track EFN windows and pause windows off membership transitions.
    for (NodeId n = 0; n < sc_.nodes; ++n) {
      bool live = v.is_live(n);
      if (!live && !absent_since_.count(n)) {
        absent_since_[n] = now_;
      } else if (live && absent_since_.count(n)) {
        result_.efn_windows[n].push_back({absent_since_[n], now_});
        efn_of_next_recovery_[n] = now_ - absent_since_[n];
        absent_since_.erase(n);
      }
    }
    if (v.cluster_paused && !paused_) {
      paused_ = true;
      pause_started_ = now_;
    } else if (!v.cluster_paused && paused_) {
      paused_ = false;
      result_.pause_windows.push_back({pause_started_, now_});
    }
  }

  // -------------------------------------------------------------- clients --

  struct Client {
    WorkloadGenerator gen;
    std::uint32_t rr = 0;          // round-robin cursor over live nodes
    std::uint64_t issued = 0;
    bool in_flight = false;
    RequestId current = 0;
    std::uint64_t generation = 0;  // guards the timeout action
    ClientOp op;
    SimTime op_first_issue = 0;
    std::uint32_t attempts = 0;
    NodeId scope_pin = kNoNode;
    ScopeId pinned_scope = 0;
    SimTime next_paced = 0;
  };

  struct PendingRequest {
    std::uint32_t client = 0;
    bool is_write = false;
    bool is_persist = false;
    Key key = 0;
    SimTime invoke = 0;
  };

  void start_clients() {
    for (std::uint32_t c = 0; c < sc_.client_count; ++c) {
      Client cl;
      cl.gen = WorkloadGenerator(sc_, c);
      clients_.push_back(std::move(cl));
      schedule_client(c, 0);
    }
  }

  void schedule_client(std::uint32_t c, SimTime at) {
    SimEvent e;
    e.kind = SimEvent::Kind::ClientOp;
    e.fire_time = at;
    e.payload = c;
    queue_.push(std::move(e));
  }

  bool efn_active() const { return !absent_since_.empty(); }

  void client_issue(std::uint64_t ci) {
    auto& cl = clients_[ci];
    if (cl.in_flight) return;  // paced tick while previous op pending
    if (now_ >= sc_.horizon) return;
    if (sc_.ops_per_client > 0 && cl.issued >= sc_.ops_per_client) return;
    if (paused_) {
      schedule_client(static_cast<std::uint32_t>(ci), now_ + 1_ms);
      return;
    }
    if (cl.attempts == 0) {
      cl.op = cl.gen.next(efn_active(), &fresh_keys_);
      cl.op_first_issue = now_;
      ++cl.issued;
      ++result_.issued_ops;
      if (sc_.op_interval > 0) {
        cl.next_paced = now_ + sc_.op_interval;
        schedule_client(static_cast<std::uint32_t>(ci), cl.next_paced);
      }
    }
    NodeId target = pick_target(cl);
    RequestId req = ++next_request_;
    pending_[req] = {static_cast<std::uint32_t>(ci),
                     cl.op.kind == OpKind::Write,
                     cl.op.kind == OpKind::PersistScope, cl.op.key, now_};
    cl.in_flight = true;
    cl.current = req;
    ++cl.generation;
    TraceRecord r;
    r.type = TraceRecord::Type::ClientOp;
    r.sim_time_ns = now_;
    r.node = target;
    r.key = cl.op.key;
    r.scope = cl.op.scope;
    r.request = req;
    r.op = cl.op.kind == OpKind::Read
               ? "read"
               : (cl.op.kind == OpKind::Write ? "write" : "persist");
    trace_line(r);
    StepOutput o;
    if (!node_up(target)) {
      o.completions.push_back({req, OpStatus::Rejected, {}});
    } else {
      switch (cl.op.kind) {
        case OpKind::Read:
          o = replicas_[target].client_read(now_, req, cl.op.key);
          break;
        case OpKind::Write:
          o = replicas_[target].client_write(now_, req, cl.op.key, cl.op.scope);
          break;
        case OpKind::PersistScope:
          o = replicas_[target].client_persist(now_, req, cl.op.scope);
          break;
      }
    }
    // Stalled reads and slow writes: client timeout, retry at the next node.
    SimEvent t;
    t.kind = SimEvent::Kind::ScenarioAction;
    t.fire_time = now_ + sc_.client_timeout;
    t.payload = (static_cast<std::uint64_t>(ci) << 32) | (cl.generation & 0xffffffff);
    t.node = kNoNode;
    queue_.push(std::move(t));
    absorb(target, std::move(o), now_);
  }

  NodeId pick_target(Client& cl) {
    const auto& live = cm_.view().live;
    if (cl.op.kind != OpKind::Read && sc_.model == PersistencyModel::Scope &&
        cl.op.scope != 0) {
      if (cl.pinned_scope != cl.op.scope || cl.scope_pin == kNoNode ||
          !cm_.view().is_live(cl.scope_pin)) {
        cl.pinned_scope = cl.op.scope;
        cl.scope_pin = live.empty() ? 0 : live[cl.rr++ % live.size()];
      }
      return cl.scope_pin;
    }
    if (live.empty()) return 0;
    return live[cl.rr++ % live.size()];
  }

  void handle_completion(NodeId node, const ClientCompletion& c) {
    auto it = pending_.find(c.request);
    if (it == pending_.end()) return;
    PendingRequest pr = it->second;
    pending_.erase(it);
    auto& cl = clients_[pr.client];
    bool current = cl.current == c.request;
    if (c.status == OpStatus::Ok) {
      if (!pr.is_persist &&
          result_.history.size() < sc_.history_cap) {
        result_.history.push_back(
            {pr.is_write, pr.key, c.ts, pr.invoke, now_});
      }
      if (now_ <= sc_.horizon) {
        result_.throughput.record_completion(now_);
        ++result_.completed_ops;
      }
      if (opt_.check_invariants && pr.is_write) {
        check_write_completion(node, pr, c);
      }
      if (current) {
        cl.in_flight = false;
        cl.attempts = 0;
        ++cl.generation;
        if (sc_.op_interval == 0) {
          schedule_client(pr.client, now_);
        } else if (cl.next_paced <= now_) {
          schedule_client(pr.client, now_);
        }
      }
      return;
    }
    if (!current) return;
    // Rejected: retry at the next node; after a full rotation, back off.
    ++cl.generation;
    cl.in_flight = false;
    ++cl.attempts;
    if (cl.attempts >= std::max<std::size_t>(1, cm_.view().live.size() + 1)) {
      cl.attempts = 1;
      schedule_client(pr.client, now_ + sc_.client_timeout);
    } else {
      schedule_client(pr.client, now_);
    }
  }

  void client_timeout(std::uint64_t payload) {
    std::uint32_t ci = static_cast<std::uint32_t>(payload >> 32);
    std::uint64_t gen = payload & 0xffffffff;
    auto& cl = clients_[ci];
    if (!cl.in_flight || (cl.generation & 0xffffffff) != gen) return;
    // Give up on this attempt and reissue at the next node.
    cl.in_flight = false;
    ++cl.generation;
    ++cl.attempts;
    client_issue(ci);
  }

  void scenario_action(const SimEvent& e) {
    if (e.node == kNoNode) {
      client_timeout(e.payload);
      return;
    }
    if (e.node == cm_id_ && e.payload == kCmRelaunch) {
      relaunch_cm();
      return;
    }
  }

  // --------------------------------------------------------------- faults --

  void schedule_faults() {
    // declare_ready actions at the same instant merge into one reconfiguration.
    std::map<SimTime, std::vector<std::size_t>> ready_groups;
    for (std::size_t i = 0; i < sc_.faults.size(); ++i) {
      const auto& f = sc_.faults[i];
      if (f.kind == FaultAction::Kind::DeclareReady) {
        ready_groups[f.at].push_back(i);
        continue;
      }
      fault_script_.push_back(f);
      SimEvent e;
      e.kind = SimEvent::Kind::FaultAction;
      e.fire_time = f.at;
      e.payload = fault_script_.size() - 1;
      queue_.push(std::move(e));
    }
    for (const auto& [at, idxs] : ready_groups) {
      FaultAction merged = sc_.faults[idxs[0]];
      merged.count = 0;
      for (auto i : idxs) {
        ready_nodes_[at].push_back(sc_.faults[i].node);
      }
      fault_script_.push_back(merged);
      SimEvent e;
      e.kind = SimEvent::Kind::FaultAction;
      e.fire_time = at;
      e.payload = fault_script_.size() - 1;
      queue_.push(std::move(e));
    }
  }

  void apply_fault(const FaultAction& f) {
    TraceRecord r;
    r.type = TraceRecord::Type::Fault;
    r.sim_time_ns = now_;
    r.node = f.node;
    switch (f.kind) {
      case FaultAction::Kind::Crash:
        r.op = "crash";
        trace_line(r);
        if (crashed_[f.node]) {
          throw ScenarioError("crash of an already-crashed node " +
                              std::to_string(f.node));
        }
        crashed_[f.node] = true;
        replicas_[f.node].crash();
        nvm_queues_[f.node].reset();
        break;
      case FaultAction::Kind::DeclareReady: {
        r.op = "declare_ready";
        trace_line(r);
        auto nodes = ready_nodes_[f.at];
        for (auto n : nodes) crashed_[n] = false;
        if (cm_alive_) {
          Epoch before = cm_.view().epoch;
          absorb(cm_id_, cm_.declare_ready(now_, nodes), now_);
          after_cm_step(before);
        }
        break;
      }
      case FaultAction::Kind::Disconnect:
        r.op = "disconnect";
        trace_line(r);
        net_.add_disconnect({f.node, f.from, f.to});
        break;
      case FaultAction::Kind::DropNext:
        r.op = "drop_next";
        trace_line(r);
        net_.add_drop_next(f.src, f.dst, f.count);
        break;
      case FaultAction::Kind::Delay:
        r.op = "delay";
        trace_line(r);
        net_.add_delay({f.src, f.dst, f.extra, f.from, f.to});
        break;
      case FaultAction::Kind::CrashCm: {
        r.node = cm_id_;
        r.op = "crash_cm";
        trace_line(r);
        cm_alive_ = false;
        SimEvent e;
        e.kind = SimEvent::Kind::ScenarioAction;
        e.fire_time = now_ + sc_.cm_failover_delay;
        e.node = cm_id_;
        e.payload = kCmRelaunch;
        queue_.push(std::move(e));
        break;
      }
    }
  }

  void relaunch_cm() {
    // The supervisory service hands the new instance the latest membership
    // any live node knows, plus the recovery roster it observed.
    MembershipView learned;
    for (NodeId n = 0; n < sc_.nodes; ++n) {
      if (!crashed_[n] && replicas_[n].view().epoch > learned.epoch) {
        learned = replicas_[n].view();
      }
    }
    if (learned.epoch == 0) learned = cm_.view();
    std::set<NodeId> recovering, absent;
    for (NodeId n = 0; n < sc_.nodes; ++n) {
      if (crashed_[n] || !learned.is_live(n)) {
        absent.insert(n);
      } else if (replicas_[n].phase() != RecoveryPhase::FullyOnline) {
        recovering.insert(n);
      }
    }
    CmConfig cc = cm_.config();
    cm_ = CmNode::relaunch(cc, learned, recovering, absent, now_);
    cm_alive_ = true;
    absorb(cm_id_, cm_.start(now_), now_);
  }

  // ------------------------------------------------------ invariant hooks --

  void handle_event(NodeId node, const StepEvent& ev) {
    switch (ev.kind) {
      case StepEvent::Kind::GdpSet:
        if (opt_.check_invariants) check_gdp(node, ev.key, ev.ts);
        break;
      case StepEvent::Kind::StaleEpochDrop:
        ++result_.accounting.dropped_stale;
        break;
      case StepEvent::Kind::ScenarioFault:
        violation("scenario fault: " + ev.detail);
        fatal_ = true;
        break;
      default:
        break;
    }
  }

  /// gdp_flag set at `node` => every fully-online live node's NVM covers ts.
  void check_gdp(NodeId node, Key key, const Timestamp& ts) {
    const auto& v = cm_.view();
    for (auto n : v.live) {
      if (n == node || v.is_recovering(n) || crashed_[n]) continue;
      if (replicas_[n].phase() != RecoveryPhase::FullyOnline) continue;
      if (!replicas_[n].nvm_log().covers(key, ts)) {
        violation("gdp invariant: node " + std::to_string(node) +
                  " flagged k=" + std::to_string(key) + " v=" +
                  std::to_string(ts.version) + " not durable at node " +
                  std::to_string(n));
        return;
      }
    }
  }

  /// Per-model completion condition, checked when the client response leaves.
  void check_write_completion(NodeId node, const PendingRequest& pr,
                              const ClientCompletion& c) {
    (void)node;
    if (sc_.model != PersistencyModel::Synch &&
        sc_.model != PersistencyModel::Strict) {
      return;
    }
    const auto& v = cm_.view();
    for (auto n : v.live) {
      if (crashed_[n] || v.is_recovering(n)) continue;
      if (replicas_[n].phase() != RecoveryPhase::FullyOnline) continue;
      if (!replicas_[n].nvm_log().covers(pr.key, c.ts)) {
        violation("completion durability: write k=" + std::to_string(pr.key) +
                  " v=" + std::to_string(c.ts.version) +
                  " completed without NVM coverage at node " +
                  std::to_string(n));
        return;
      }
    }
  }

  void record_recovery(NodeId node, const RecoveryReport& rep) {
    RecoveryCsvRow row;
    row.scenario = sc_.name;
    row.model = sc_.model;
    row.incremental = rep.incremental;
    row.fallback = rep.fallback_fullcopy;
    row.efn_duration_s =
        static_cast<double>(efn_of_next_recovery_[node]) / 1e9;
    row.report = rep;
    result_.recoveries.push_back(row);
    result_.max_missed_entries =
        std::max(result_.max_missed_entries, rep.buffer_entries);
  }

  // ---------------------------------------------------------------- final --

  void finalize(SimTime horizon) {
    result_.throughput.finish(horizon);
    result_.end_time = now_;
    while (!queue_.empty()) {
      SimEvent e = queue_.pop();
      if (e.kind == SimEvent::Kind::Deliver) {
        ++result_.accounting.in_flight_at_end;
      }
    }
    for (const auto& r : replicas_) {
      for (const auto& [n, buf] : r.missed_buffers()) {
        result_.max_missed_entries =
            std::max(result_.max_missed_entries, buf.size());
      }
    }
    if (opt_.check_invariants && !fatal_) final_checks();
    std::string dump;
    for (const auto& r : replicas_) dump += state_dump(r);
    result_.statedump = std::move(dump);
  }

  void final_checks() {
    // Convergence across live fully-online nodes.
    std::vector<NodeId> online;
    for (NodeId n = 0; n < sc_.nodes; ++n) {
      if (!crashed_[n] && cm_.view().is_live(n) &&
          replicas_[n].phase() == RecoveryPhase::FullyOnline) {
        online.push_back(n);
      }
    }
    for (std::size_t i = 1; i < online.size(); ++i) {
      std::string why;
      if (!volatile_states_equal(replicas_[online[0]], replicas_[online[i]],
                                 &why)) {
        violation("convergence: nodes " + std::to_string(online[0]) + " and " +
                  std::to_string(online[i]) + " differ (" + why + ")");
      }
    }
    bool had_crash = false;
    for (const auto& f : sc_.faults) {
      if (f.kind == FaultAction::Kind::Crash) had_crash = true;
    }
    bool durable_expected =
        sc_.model != PersistencyModel::Scope || !had_crash;
    if (durable_expected) {
      for (std::size_t i = 1; i < online.size(); ++i) {
        if (!durable_states_equal(replicas_[online[0]], replicas_[online[i]])) {
          violation("durable convergence: nodes " +
                    std::to_string(online[0]) + " and " +
                    std::to_string(online[i]) + " differ");
        }
      }
    }
    // No completed write lost: its timestamp is <= the final timestamp of the
    // key at every live node.
    for (const auto& h : result_.history) {
      if (!h.is_write) continue;
      for (auto n : online) {
        if (replicas_[n].record_ts(h.key) < h.ts) {
          violation("lost update: write k=" + std::to_string(h.key) + " v=" +
                    std::to_string(h.ts.version) + " missing at node " +
                    std::to_string(n));
          break;
        }
      }
    }
    // Writes initiated between a crash and the removal reconfiguration must
    // not complete inside that window.
    for (const auto& f : sc_.faults) {
      if (f.kind != FaultAction::Kind::Crash) continue;
      auto it = result_.efn_windows.find(f.node);
      if (it == result_.efn_windows.end()) continue;
      for (const auto& [removed_at, readded_at] : it->second) {
        (void)readded_at;
        for (const auto& h : result_.history) {
          if (h.is_write && h.invoke >= f.at && h.complete <= removed_at) {
            violation("write completed between failure and reconfiguration");
          }
        }
      }
    }
    if (opt_.check_linearizability &&
        result_.history.size() < sc_.history_cap) {
      auto v = check_linearizability(result_.history);
      for (const auto& x : v) {
        violation("linearizability k=" + std::to_string(x.key) + ": " +
                  x.reason);
      }
    }
    if (!result_.accounting.conserved()) {
      violation("message conservation failed");
    }
  }

  static constexpr std::uint64_t kCmRelaunch = ~0ull;

  Scenario sc_;
  SimOptions opt_;
  SimTime now_ = 0;
  bool fatal_ = false;

  std::vector<Replica> replicas_;
  std::vector<NvmQueue> nvm_queues_;
  std::vector<SimTime> cpu_free_;
  std::vector<bool> crashed_;
  CmNode cm_;
  NodeId cm_id_ = 0;
  bool cm_alive_ = true;

  NetworkModel net_;
  FullcopyPath path_;
  EventQueue queue_;
  std::map<std::pair<NodeId, TimerKey>, std::uint64_t> timer_armed_;
  std::uint64_t timer_seq_ = 0;

  std::vector<Client> clients_;
  std::map<RequestId, PendingRequest> pending_;
  RequestId next_request_ = 0;
  std::uint64_t fresh_keys_ = 0;

  std::vector<FaultAction> fault_script_;
  std::map<SimTime, std::vector<NodeId>> ready_nodes_;

  std::map<NodeId, SimTime> absent_since_;
  std::map<NodeId, SimTime> efn_of_next_recovery_;
  bool paused_ = false;
  SimTime pause_started_ = 0;

  SimResult result_;
};

}  // namespace replsim
