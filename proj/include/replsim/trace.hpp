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

#include <optional>
#include <string>

#include <json.hpp>

#include "replsim/common.hpp"
#include "replsim/message.hpp"
#include "replsim/model.hpp"
#include "replsim/step.hpp"

namespace replsim {

/// One trace line. Message deliveries carry the full schema
/// (sim_time_ns, kind, src, dst, epoch, key, ts_version, ts_node, scope,
/// size_bytes); supplementary record types (timer fires, persist completions,
/// client ops, faults) reuse the same shape so a trace can be re-executed.
struct TraceRecord {
  enum class Type : std::uint8_t {
    Meta,        // run parameters, first line
    Deliver,     // message delivered to dst
    Timer,       // timer fired at dst
    Persist,     // persist completed at dst
    ClientOp,    // client op issued at dst
    Fault,       // fault action applied
  };

  Type type = Type::Deliver;
  SimTime sim_time_ns = 0;
  Message msg;                 // Deliver
  std::uint64_t size_bytes = 0;

  NodeId node = 0;             // Timer/Persist/ClientOp/Fault target
  TimerKey timer;              // Timer
  PersistRequest persist;      // Persist
  std::string op;              // ClientOp: read|write|persist; Fault: action
  Key key = 0;                 // ClientOp
  ScopeId scope = 0;           // ClientOp
  RequestId request = 0;       // ClientOp

  // Meta
  std::string scenario;
  std::uint64_t seed = 0;
  PersistencyModel model = PersistencyModel::Synch;
  std::uint32_t nodes = 0;
  std::uint32_t key_bytes = 0;
  std::uint32_t value_bytes = 0;
};

namespace detail {

inline nlohmann::json entries_json(const std::vector<UpdateEntry>& es) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : es) {
    a.push_back({e.key, e.ts.version, e.ts.node,
                 static_cast<std::uint64_t>(e.committed_mark)});
  }
  return a;
}

inline std::vector<UpdateEntry> entries_from_json(const nlohmann::json& a) {
  std::vector<UpdateEntry> out;
  for (const auto& e : a) {
    out.push_back(UpdateEntry{e[0].get<Key>(),
                              Timestamp{e[1].get<std::uint64_t>(),
                                        e[2].get<NodeId>()},
                              e[3].get<std::uint64_t>() != 0});
  }
  return out;
}

}  // namespace detail

inline std::string encode_trace_record(const TraceRecord& r) {
  nlohmann::json j;
  j["sim_time_ns"] = r.sim_time_ns;
  switch (r.type) {
    case TraceRecord::Type::Meta: {
      j["kind"] = "meta";
      j["scenario"] = r.scenario;
      j["seed"] = r.seed;
      j["model"] = std::string(to_string(r.model));
      j["nodes"] = r.nodes;
      j["key_bytes"] = r.key_bytes;
      j["value_bytes"] = r.value_bytes;
      j["src"] = 0;
      j["dst"] = 0;
      j["epoch"] = 0;
      j["key"] = 0;
      j["ts_version"] = 0;
      j["ts_node"] = 0;
      j["scope"] = 0;
      j["size_bytes"] = 0;
      return j.dump();
    }
    case TraceRecord::Type::Deliver: {
      const Message& m = r.msg;
      j["kind"] = std::string(to_string(m.kind));
      j["src"] = m.src;
      j["dst"] = m.dst;
      j["epoch"] = m.epoch;
      j["key"] = m.key;
      j["ts_version"] = m.ts.version;
      j["ts_node"] = m.ts.node;
      j["scope"] = m.scope;
      j["size_bytes"] = r.size_bytes;
      if (!m.entries.empty()) j["entries"] = detail::entries_json(m.entries);
      if (!m.buffer.empty()) j["buffer"] = detail::entries_json(m.buffer);
      if (m.kind == MsgKind::RECONFIG) {
        j["view_epoch"] = m.view.epoch;
        j["live"] = m.view.live;
        j["recovering"] = m.view.recovering;
        j["paused"] = m.view.cluster_paused;
      }
      if (m.flag) j["flag"] = true;
      if (m.chunk_total > 0) {
        j["chunk_index"] = m.chunk_index;
        j["chunk_total"] = m.chunk_total;
      }
      return j.dump();
    }
    case TraceRecord::Type::Timer: {
      j["kind"] = "timer";
      j["src"] = r.node;
      j["dst"] = r.node;
      j["epoch"] = 0;
      j["key"] = r.timer.key;
      j["ts_version"] = r.timer.ts.version;
      j["ts_node"] = r.timer.ts.node;
      j["scope"] = r.timer.scope;
      j["size_bytes"] = 0;
      j["timer_kind"] = std::string(to_string(r.timer.kind));
      return j.dump();
    }
    case TraceRecord::Type::Persist: {
      j["kind"] = "persist";
      j["src"] = r.node;
      j["dst"] = r.node;
      j["epoch"] = 0;
      j["key"] = r.persist.key;
      j["ts_version"] = r.persist.ts.version;
      j["ts_node"] = r.persist.ts.node;
      j["scope"] = r.persist.scope;
      j["size_bytes"] = r.persist.size_bytes;
      j["background"] = r.persist.background;
      j["recovery"] = r.persist.recovery;
      return j.dump();
    }
    case TraceRecord::Type::ClientOp: {
      j["kind"] = "client_" + r.op;
      j["src"] = r.node;
      j["dst"] = r.node;
      j["epoch"] = 0;
      j["key"] = r.key;
      j["ts_version"] = 0;
      j["ts_node"] = 0;
      j["scope"] = r.scope;
      j["size_bytes"] = 0;
      j["request"] = r.request;
      return j.dump();
    }
    case TraceRecord::Type::Fault: {
      j["kind"] = "fault";
      j["src"] = r.node;
      j["dst"] = r.node;
      j["epoch"] = 0;
      j["key"] = 0;
      j["ts_version"] = 0;
      j["ts_node"] = 0;
      j["scope"] = 0;
      j["size_bytes"] = 0;
      j["action"] = r.op;
      return j.dump();
    }
  }
  return j.dump();
}

inline TraceRecord decode_trace_record(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  TraceRecord r;
  r.sim_time_ns = j.at("sim_time_ns").get<SimTime>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "meta") {
    r.type = TraceRecord::Type::Meta;
    r.scenario = j.at("scenario").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.model = parse_model(j.at("model").get<std::string>())
                  .value_or(PersistencyModel::Synch);
    r.nodes = j.at("nodes").get<std::uint32_t>();
    r.key_bytes = j.at("key_bytes").get<std::uint32_t>();
    r.value_bytes = j.at("value_bytes").get<std::uint32_t>();
    return r;
  }
  if (kind == "timer") {
    r.type = TraceRecord::Type::Timer;
    r.node = j.at("dst").get<NodeId>();
    r.timer.key = j.at("key").get<Key>();
    r.timer.ts = Timestamp{j.at("ts_version").get<std::uint64_t>(),
                           j.at("ts_node").get<NodeId>()};
    r.timer.scope = j.at("scope").get<ScopeId>();
    std::string tk = j.at("timer_kind").get<std::string>();
    for (auto k : {TimerKind::InvAck, TimerKind::AckVal, TimerKind::Takeover,
                   TimerKind::RecovRetry, TimerKind::Heartbeat}) {
      if (tk == to_string(k)) r.timer.kind = k;
    }
    return r;
  }
  if (kind == "persist") {
    r.type = TraceRecord::Type::Persist;
    r.node = j.at("dst").get<NodeId>();
    r.persist.key = j.at("key").get<Key>();
    r.persist.ts = Timestamp{j.at("ts_version").get<std::uint64_t>(),
                             j.at("ts_node").get<NodeId>()};
    r.persist.scope = j.at("scope").get<ScopeId>();
    r.persist.size_bytes = j.at("size_bytes").get<std::uint64_t>();
    r.persist.background = j.value("background", false);
    r.persist.recovery = j.value("recovery", false);
    return r;
  }
  if (kind.rfind("client_", 0) == 0) {
    r.type = TraceRecord::Type::ClientOp;
    r.op = kind.substr(7);
    r.node = j.at("dst").get<NodeId>();
    r.key = j.at("key").get<Key>();
    r.scope = j.at("scope").get<ScopeId>();
    r.request = j.value("request", std::uint64_t{0});
    return r;
  }
  if (kind == "fault") {
    r.type = TraceRecord::Type::Fault;
    r.node = j.at("dst").get<NodeId>();
    r.op = j.at("action").get<std::string>();
    return r;
  }
  r.type = TraceRecord::Type::Deliver;
  Message& m = r.msg;
  m.kind = parse_msg_kind(kind).value_or(MsgKind::INV);
  m.src = j.at("src").get<NodeId>();
  m.dst = j.at("dst").get<NodeId>();
  m.epoch = j.at("epoch").get<Epoch>();
  m.key = j.at("key").get<Key>();
  m.ts = Timestamp{j.at("ts_version").get<std::uint64_t>(),
                   j.at("ts_node").get<NodeId>()};
  m.scope = j.at("scope").get<ScopeId>();
  r.size_bytes = j.at("size_bytes").get<std::uint64_t>();
  if (j.contains("entries")) m.entries = detail::entries_from_json(j["entries"]);
  if (j.contains("buffer")) m.buffer = detail::entries_from_json(j["buffer"]);
  if (j.contains("view_epoch")) {
    m.view.epoch = j["view_epoch"].get<Epoch>();
    m.view.live = j["live"].get<std::vector<NodeId>>();
    m.view.recovering = j["recovering"].get<std::vector<NodeId>>();
    m.view.cluster_paused = j["paused"].get<bool>();
  }
  m.flag = j.value("flag", false);
  if (j.contains("chunk_total")) {
    m.chunk_index = j["chunk_index"].get<std::uint64_t>();
    m.chunk_total = j["chunk_total"].get<std::uint64_t>();
  }
  return r;
}

}  // namespace replsim
