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
#include <queue>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/step.hpp"

namespace replsim {

/// Discrete event. Events are processed in (fire_time, seq) order; seq is
/// assigned at insertion and strictly increases, so execution is a
/// deterministic function of the scenario and seed.
struct SimEvent {
  enum class Kind : std::uint8_t {
    Deliver,
    TimerFire,
    PersistDone,
    ClientOp,
    FaultAction,
    ScenarioAction,
  };

  SimTime fire_time = 0;
  std::uint64_t seq = 0;
  Kind kind = Kind::Deliver;
  NodeId node = kNoNode;

  Message msg;             // Deliver
  std::uint64_t size = 0;  // Deliver
  TimerKey timer;          // TimerFire
  std::uint64_t timer_gen = 0;
  PersistRequest persist;  // PersistDone
  std::uint64_t payload = 0;  // ClientOp: client index; Fault/Scenario: id
};

class EventQueue {
 public:
  void push(SimEvent e) {
    e.seq = ++seq_;
    heap_.push(std::move(e));
  }

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  const SimEvent& top() const { return heap_.top(); }

  SimEvent pop() {
    SimEvent e = heap_.top();
    heap_.pop();
    return e;
  }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.fire_time != b.fire_time) return a.fire_time > b.fire_time;
      return a.seq > b.seq;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  std::uint64_t seq_ = 0;
};

}  // namespace replsim
