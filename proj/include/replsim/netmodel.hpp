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
#include <cmath>
#include <map>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/message.hpp"

namespace replsim {

struct NetworkParams {
  SimTime base_latency = 5_us;
  SimTime jitter = 0;            // uniform [0, jitter]
  double drop_probability = 0.0;
  double bandwidth = 4.6e9;      // bytes/s, serialization delay = size/bw
  SimTime per_message_cpu = 0;   // receive-side processing cost
};

struct NvmParams {
  SimTime write_latency = 1_us;
  double write_bandwidth = 2.3e9;
  SimTime read_latency = 300;
  double read_bandwidth = 6.6e9;
  double dram_copy_bandwidth = 10e9;
};

struct DisconnectWindow {
  NodeId node = kNoNode;
  SimTime from = 0;
  SimTime to = 0;
};

struct LinkDelay {
  NodeId src = kNoNode;
  NodeId dst = kNoNode;
  SimTime extra = 0;
  SimTime from = 0;
  SimTime to = 0;
};

inline SimTime bytes_time(double bytes, double bandwidth) {
  if (bandwidth <= 0) return 0;
  return static_cast<SimTime>(std::llround(bytes / bandwidth * 1e9));
}

/// Wire size accounting for the trace and the serialization delay.
inline std::uint64_t message_size_bytes(const Message& m,
                                        std::uint32_t key_bytes,
                                        std::uint32_t value_bytes,
                                        std::uint64_t chunk_bytes) {
  const std::uint64_t header = 48;
  const std::uint64_t entry = key_bytes + 16;
  const std::uint64_t full_entry = key_bytes + value_bytes + 16;
  switch (m.kind) {
    case MsgKind::INV:
    case MsgKind::VAL:
    case MsgKind::VAL_C:
    case MsgKind::VAL_P:
      return header + full_entry;
    case MsgKind::ACK:
    case MsgKind::ACK_C:
    case MsgKind::ACK_P:
    case MsgKind::ACK_P_SC:
      return header + entry;
    case MsgKind::PERSIST_SC:
    case MsgKind::VAL_P_SC:
      return header + m.entries.size() * entry;
    case MsgKind::RECOV_START:
    case MsgKind::RECOV_START_ACK:
    case MsgKind::RECOV_END:
    case MsgKind::HEARTBEAT:
    case MsgKind::HEARTBEAT_ACK:
      return header;
    case MsgKind::RECONFIG:
      return header + 8 * (m.view.live.size() + m.view.recovering.size());
    case MsgKind::CATCHUP_REQ:
      return header + m.entries.size() * entry;
    case MsgKind::CATCHUP_RESP:
      if (m.chunk_total > 0) return header + chunk_bytes;
      return header + m.entries.size() * entry +
             m.buffer.size() * full_entry;
  }
  return header;
}

/// Network timing and fault model. Every sent message is classified exactly
/// once: delivered, dropped by the model, or (later, at the receiver)
/// dropped as stale.
class NetworkModel {
 public:
  NetworkModel() = default;
  NetworkModel(const NetworkParams& p, std::uint64_t seed)
      : params_(p), rng_(seed, /*tag=*/0x6e657477) {}

  const NetworkParams& params() const { return params_; }

  void add_disconnect(const DisconnectWindow& w) { disconnects_.push_back(w); }
  void add_delay(const LinkDelay& d) { delays_.push_back(d); }
  void add_drop_next(NodeId src, NodeId dst, std::uint64_t count) {
    drop_next_[{src, dst}] += count;
  }

  bool disconnected(NodeId n, SimTime at) const {
    for (const auto& w : disconnects_) {
      if (w.node == n && at >= w.from && at < w.to) return true;
    }
    return false;
  }

  /// Decide fate and latency of a message sent at `at`. Returns false if the
  /// model drops it.
  bool route(const Message& m, SimTime at, std::uint64_t size,
             SimTime* latency) {
    if (disconnected(m.src, at) || disconnected(m.dst, at)) return false;
    if (auto it = drop_next_.find({m.src, m.dst});
        it != drop_next_.end() && it->second > 0) {
      --it->second;
      return false;
    }
    if (params_.drop_probability > 0 &&
        rng_.next_double() < params_.drop_probability) {
      return false;
    }
    SimTime l = params_.base_latency + rng_.next_jitter(params_.jitter) +
                bytes_time(static_cast<double>(size), params_.bandwidth);
    for (const auto& d : delays_) {
      if (d.src == m.src && d.dst == m.dst && at >= d.from && at < d.to) {
        l += d.extra;
      }
    }
    *latency = l;
    return true;
  }

 private:
  NetworkParams params_;
  Rng rng_;
  std::vector<DisconnectWindow> disconnects_;
  std::vector<LinkDelay> delays_;
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> drop_next_;
};

/// Per-node NVM write FIFO: completion fires latency + size/bandwidth after
/// the request, queued behind earlier requests.
class NvmQueue {
 public:
  NvmQueue() = default;
  explicit NvmQueue(const NvmParams& p) : params_(p) {}

  SimTime completion_time(SimTime request_time, double bytes) {
    SimTime start = std::max(request_time, busy_until_);
    SimTime done = start + params_.write_latency +
                   bytes_time(bytes, params_.write_bandwidth);
    busy_until_ = done;
    return done;
  }

  void reset() { busy_until_ = 0; }

 private:
  NvmParams params_;
  SimTime busy_until_ = 0;
};

/// Full-copy transfer stages (read at the recoverer, network, write at the
/// recovering node). Serial per chunk: the next chunk starts when the
/// previous one has fully landed, so the total is
///   size * (1/bw_read + 1/bw_net + 1/bw_write) + chunks * fixed_latencies.
struct FullcopyPath {
  double read_bandwidth = 0;   // 0 = stage absent
  double net_bandwidth = 0;
  double write_bandwidth = 0;
  SimTime stage_latency = 5_us;

  SimTime chunk_read_time(double bytes) const {
    return read_bandwidth > 0 ? stage_latency + bytes_time(bytes, read_bandwidth)
                              : 0;
  }
  SimTime chunk_write_time(double bytes) const {
    return write_bandwidth > 0
               ? stage_latency + bytes_time(bytes, write_bandwidth)
               : 0;
  }

  /// Closed-form oracle for a transfer of `total` bytes in `chunk`-byte
  /// chunks over base network latency `net_lat`.
  SimTime closed_form(double total, double chunk, SimTime net_lat) const {
    std::uint64_t n =
        static_cast<std::uint64_t>(std::ceil(total / chunk));
    if (n == 0) n = 1;
    SimTime per_chunk = chunk_read_time(chunk) + net_lat +
                        bytes_time(chunk, net_bandwidth) +
                        chunk_write_time(chunk);
    return static_cast<SimTime>(n) * per_chunk;
  }
};

}  // namespace replsim
