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
#include <set>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/step.hpp"
#include "replsim/timestamp.hpp"

namespace replsim {

struct CmConfig {
  NodeId id = 5;
  std::vector<NodeId> data_nodes;  // ascending
  SimTime heartbeat_period = 4_ms;
  int timeout_multiplier = 3;
};

/// Configuration Manager: heartbeat failure detection, epoch reconfiguration,
/// and concurrent-failure orchestration. Runs on its own dedicated node.
class CmNode {
 public:
  CmNode() = default;
  CmNode(const CmConfig& cfg, const MembershipView& initial, SimTime now)
      : cfg_(cfg), view_(initial) {
    for (auto n : cfg_.data_nodes) last_ack_[n] = now;
  }

  const MembershipView& view() const { return view_; }
  const CmConfig& config() const { return cfg_; }
  bool paused() const { return view_.cluster_paused; }
  const std::set<NodeId>& absent() const { return absent_; }
  const std::set<NodeId>& recovering() const { return recovering_; }

  /// Arm the periodic heartbeat; the sim calls this once at start.
  StepOutput start(SimTime) {
    StepOutput o;
    o.set_timers.push_back(
        {TimerKey{TimerKind::Heartbeat, 0, {}, 0}, cfg_.heartbeat_period});
    return o;
  }

  StepOutput deliver(SimTime now, const Message& m) {
    StepOutput o;
    switch (m.kind) {
      case MsgKind::HEARTBEAT_ACK:
        last_ack_[m.src] = now;
        node_epoch_[m.src] = m.epoch;
        break;
      case MsgKind::RECOV_END:
        recovering_.erase(m.src);
        if (view_.cluster_paused) unpause(o);
        break;
      default:
        break;
    }
    return o;
  }

  StepOutput timer_fire(SimTime now, const TimerKey& t) {
    StepOutput o;
    if (t.kind != TimerKind::Heartbeat) return o;
    for (auto n : view_.live) {
      o.out.push_back(heartbeat(n));
      // Reliable RECONFIG: re-send to nodes that still report an old epoch.
      auto it = node_epoch_.find(n);
      if (it == node_epoch_.end() || it->second < view_.epoch) {
        o.out.push_back(reconfig_msg(n));
      }
    }
    SimTime timeout = cfg_.heartbeat_period * cfg_.timeout_multiplier;
    std::vector<NodeId> dead;
    for (auto n : view_.live) {
      auto it = last_ack_.find(n);
      if (it != last_ack_.end() && now - it->second > timeout) {
        dead.push_back(n);
      }
    }
    for (auto n : dead) remove_node(now, o, n);
    o.set_timers.push_back(
        {TimerKey{TimerKind::Heartbeat, 0, {}, 0}, cfg_.heartbeat_period});
    return o;
  }

  /// Checker action: detection without the heartbeat machinery.
  StepOutput force_detect(SimTime now, NodeId n) {
    StepOutput o;
    if (view_.is_live(n)) remove_node(now, o, n);
    return o;
  }

  /// Scenario action: one or more replacement nodes are ready to recover.
  StepOutput declare_ready(SimTime now, const std::vector<NodeId>& nodes) {
    StepOutput o;
    bool any = false;
    for (auto n : nodes) {
      if (absent_.erase(n) > 0) {
        insert_sorted(view_.live, n);
        recovering_.insert(n);
        last_ack_[n] = now;
        any = true;
      }
    }
    if (!any) return o;
    bump_epoch(o);
    return o;
  }

  /// Abstract failover: a relaunched CM resumes from the last epoch any live
  /// node knows, with recovery status reconstructed by the supervisor.
  static CmNode relaunch(const CmConfig& cfg, const MembershipView& learned,
                         const std::set<NodeId>& still_recovering,
                         const std::set<NodeId>& absent, SimTime now) {
    CmNode cm(cfg, learned, now);
    cm.recovering_ = still_recovering;
    cm.absent_ = absent;
    return cm;
  }

  void fingerprint(Fingerprint& f) const {
    f.put_u64(view_.epoch);
    for (auto n : view_.live) f.put_u32(n);
    for (auto n : view_.recovering) f.put_u32(n);
    f.put_bool(view_.cluster_paused);
    f.put_u64(absent_.size());
    for (auto n : absent_) f.put_u32(n);
    f.put_u64(recovering_.size());
    for (auto n : recovering_) f.put_u32(n);
  }

 private:
  static void insert_sorted(std::vector<NodeId>& v, NodeId n) {
    auto it = std::lower_bound(v.begin(), v.end(), n);
    if (it == v.end() || *it != n) v.insert(it, n);
  }

  Message heartbeat(NodeId dst) const {
    Message m;
    m.kind = MsgKind::HEARTBEAT;
    m.src = cfg_.id;
    m.dst = dst;
    m.epoch = view_.epoch;
    return m;
  }

  Message reconfig_msg(NodeId dst) const {
    Message m;
    m.kind = MsgKind::RECONFIG;
    m.src = cfg_.id;
    m.dst = dst;
    m.epoch = view_.epoch;
    m.view = view_;
    return m;
  }

  void bump_epoch(StepOutput& o) {
    ++view_.epoch;
    view_.recovering.assign(recovering_.begin(), recovering_.end());
    for (auto n : view_.live) o.out.push_back(reconfig_msg(n));
  }

  void remove_node(SimTime now, StepOutput& o, NodeId n) {
    (void)now;
    view_.live.erase(std::remove(view_.live.begin(), view_.live.end(), n),
                     view_.live.end());
    absent_.insert(n);
    // A failure while a recovery is still running: pause client admission
    // until the redone recovery completes. A finished recovery (RECOV_END
    // seen) means the system simply enters the next fewer-nodes period.
    recovering_.erase(n);
    if (!recovering_.empty()) view_.cluster_paused = true;
    if (absent_.size() > 2) {
      o.events.push_back({StepEvent::Kind::ScenarioFault, 0, {}, n,
                          "more than two concurrent absent nodes"});
      return;
    }
    bump_epoch(o);
  }

  void unpause(StepOutput& o) {
    if (!recovering_.empty()) return;  // another recovery still redoing
    view_.cluster_paused = false;
    bump_epoch(o);
  }

  CmConfig cfg_;
  MembershipView view_;
  std::map<NodeId, SimTime> last_ack_;
  std::map<NodeId, Epoch> node_epoch_;
  std::set<NodeId> absent_;
  std::set<NodeId> recovering_;
};

}  // namespace replsim
