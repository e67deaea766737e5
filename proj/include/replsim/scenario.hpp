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

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/model.hpp"
#include "replsim/netmodel.hpp"

namespace replsim {

enum class KeyDistribution { Uniform, Zipfian };
enum class RecoveryMode { Incremental, Fullcopy };
enum class FullcopyPathKind { DramPm, PmOnly };

struct FaultAction {
  enum class Kind : std::uint8_t {
    Crash,
    DeclareReady,
    Disconnect,
    DropNext,
    Delay,
    CrashCm,
  };
  Kind kind = Kind::Crash;
  NodeId node = kNoNode;
  NodeId src = kNoNode, dst = kNoNode;
  SimTime at = 0;
  SimTime from = 0, to = 0;
  SimTime extra = 0;
  std::uint64_t count = 0;
};

struct Scenario {
  std::string name = "scenario";

  // [general]
  PersistencyModel model = PersistencyModel::Synch;
  std::uint32_t nodes = 5;  // data nodes; the CM runs on one extra node
  std::uint64_t seed = 1;
  SimTime horizon = 1_s;
  std::uint64_t key_count = 1000;
  std::uint32_t key_bytes = 16;
  std::uint32_t value_bytes = 128;
  bool distinct_keys_mode = false;
  std::uint64_t modeled_store_bytes = 0;

  // [workload]
  double read_fraction = 0.8;
  KeyDistribution distribution = KeyDistribution::Uniform;
  double zipf_theta = 0.99;
  std::uint32_t client_count = 5;
  SimTime op_interval = 0;  // 0 = closed loop (back-to-back)
  std::uint64_t ops_per_client = 0;  // 0 = until horizon
  std::uint32_t scope_size = 8;
  SimTime client_timeout = 10_ms;

  // [network]
  NetworkParams network;

  // [nvm]
  NvmParams nvm;

  // [membership]
  SimTime heartbeat_period = 4_ms;
  int heartbeat_timeout_multiplier = 3;
  SimTime inv_ack_timeout = 2_ms;
  SimTime ack_val_timeout = 2_ms;
  SimTime takeover_stagger = 100_us;
  SimTime recovery_retry_timeout = 2_ms;
  SimTime cm_failover_delay = 50_ms;

  // [recovery]
  RecoveryMode recovery_mode = RecoveryMode::Incremental;
  std::uint64_t missed_updates_capacity = 64ull << 20;
  std::uint64_t chunk_bytes = 64000000;
  FullcopyPathKind fullcopy_path = FullcopyPathKind::DramPm;
  FullcopyPath dram_pm;
  FullcopyPath pm_only;

  // [metrics]
  SimTime throughput_window = 100_ms;
  std::uint64_t history_cap = 200000;  // linearizability check disabled above

  // [faults]
  std::vector<FaultAction> faults;

  FullcopyPath active_fullcopy_path() const {
    return fullcopy_path == FullcopyPathKind::DramPm ? dram_pm : pm_only;
  }

  Scenario with_defaults_resolved() const {
    Scenario s = *this;
    if (s.dram_pm.read_bandwidth == 0) {
      s.dram_pm.read_bandwidth = s.nvm.read_bandwidth;
    }
    if (s.dram_pm.net_bandwidth == 0) s.dram_pm.net_bandwidth = s.network.bandwidth;
    if (s.dram_pm.write_bandwidth == 0) {
      // PM write behind a DRAM staging copy.
      s.dram_pm.write_bandwidth =
          1.0 / (1.0 / s.nvm.write_bandwidth + 1.0 / s.nvm.dram_copy_bandwidth);
    }
    if (s.pm_only.net_bandwidth == 0) s.pm_only.net_bandwidth = s.nvm.write_bandwidth;
    return s;
  }

  Scenario without_faults() const {
    Scenario s = *this;
    s.faults.clear();
    return s;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] inline void fail(const std::string& file, int line,
                              const std::string& what) {
  throw ScenarioError(file + ":" + std::to_string(line) + ": " + what);
}

/// Durations: integer or decimal number with ns/us/ms/s suffix.
inline std::optional<SimTime> parse_duration(const std::string& v) {
  double mult = 0;
  std::string num;
  if (v.size() > 2 && v.substr(v.size() - 2) == "ns") {
    mult = 1;
    num = v.substr(0, v.size() - 2);
  } else if (v.size() > 2 && v.substr(v.size() - 2) == "us") {
    mult = 1e3;
    num = v.substr(0, v.size() - 2);
  } else if (v.size() > 2 && v.substr(v.size() - 2) == "ms") {
    mult = 1e6;
    num = v.substr(0, v.size() - 2);
  } else if (v.size() > 1 && v.back() == 's') {
    mult = 1e9;
    num = v.substr(0, v.size() - 1);
  } else {
    return std::nullopt;
  }
  try {
    std::size_t pos = 0;
    double d = std::stod(num, &pos);
    if (pos != num.size()) return std::nullopt;
    return static_cast<SimTime>(d * mult);
  } catch (...) {
    return std::nullopt;
  }
}

/// Sizes: number with optional B/KB/MB/GB suffix (decimal units).
inline std::optional<std::uint64_t> parse_bytes(const std::string& v) {
  double mult = 1;
  std::string num = v;
  auto ends = [&](const char* suf) {
    std::size_t n = std::string(suf).size();
    return v.size() > n && v.substr(v.size() - n) == suf;
  };
  if (ends("GB")) {
    mult = 1e9;
    num = v.substr(0, v.size() - 2);
  } else if (ends("MB")) {
    mult = 1e6;
    num = v.substr(0, v.size() - 2);
  } else if (ends("KB")) {
    mult = 1e3;
    num = v.substr(0, v.size() - 2);
  } else if (ends("B")) {
    num = v.substr(0, v.size() - 1);
  }
  try {
    std::size_t pos = 0;
    double d = std::stod(num, &pos);
    if (pos != num.size() || d < 0) return std::nullopt;
    return static_cast<std::uint64_t>(d * mult);
  } catch (...) {
    return std::nullopt;
  }
}

inline std::optional<double> parse_double(const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) return std::nullopt;
    return d;
  } catch (...) {
    return std::nullopt;
  }
}

inline std::optional<std::uint64_t> parse_u64(const std::string& v) {
  auto d = parse_double(v);
  if (!d || *d < 0) return std::nullopt;
  return static_cast<std::uint64_t>(*d);
}

/// Fault lines use `field=value` tokens, e.g. `crash = node=3 at=100ms`.
inline std::map<std::string, std::string> parse_kv_tokens(
    const std::string& v) {
  std::map<std::string, std::string> out;
  std::istringstream is(v);
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) {
      out[tok] = "";
    } else {
      out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  return out;
}

}  // namespace detail

inline Scenario parse_scenario_text(const std::string& text,
                                    const std::string& filename) {
  using namespace detail;
  Scenario s;
  s.name = filename;
  auto slash = s.name.find_last_of('/');
  if (slash != std::string::npos) s.name = s.name.substr(slash + 1);
  auto dot = s.name.find_last_of('.');
  if (dot != std::string::npos) s.name = s.name.substr(0, dot);

  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  bool client_count_set = false;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(filename, lineno, "malformed section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(filename, lineno, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    auto dur = [&](SimTime& dst) {
      auto d = parse_duration(val);
      if (!d) fail(filename, lineno, "bad duration for " + key + ": " + val);
      dst = *d;
    };
    auto dbl = [&](double& dst) {
      auto d = parse_double(val);
      if (!d) fail(filename, lineno, "bad number for " + key + ": " + val);
      dst = *d;
    };
    auto u64 = [&](std::uint64_t& dst) {
      auto d = parse_u64(val);
      if (!d) fail(filename, lineno, "bad integer for " + key + ": " + val);
      dst = *d;
    };
    auto bytes = [&](std::uint64_t& dst) {
      auto d = parse_bytes(val);
      if (!d) fail(filename, lineno, "bad size for " + key + ": " + val);
      dst = *d;
    };
    auto boolean = [&](bool& dst) {
      if (val == "true" || val == "1") {
        dst = true;
      } else if (val == "false" || val == "0") {
        dst = false;
      } else {
        fail(filename, lineno, "bad boolean for " + key + ": " + val);
      }
    };

    if (section == "general") {
      if (key == "model") {
        auto m = parse_model(val);
        if (!m) fail(filename, lineno, "unknown model: " + val);
        s.model = *m;
      } else if (key == "nodes") {
        std::uint64_t n = 0;
        u64(n);
        if (n < 1 || n > 64) fail(filename, lineno, "nodes out of range");
        s.nodes = static_cast<std::uint32_t>(n);
      } else if (key == "seed") {
        u64(s.seed);
      } else if (key == "horizon") {
        dur(s.horizon);
      } else if (key == "key_count") {
        u64(s.key_count);
      } else if (key == "key_bytes") {
        std::uint64_t n = 0;
        u64(n);
        s.key_bytes = static_cast<std::uint32_t>(n);
      } else if (key == "value_bytes") {
        std::uint64_t n = 0;
        u64(n);
        s.value_bytes = static_cast<std::uint32_t>(n);
      } else if (key == "distinct_keys_mode") {
        boolean(s.distinct_keys_mode);
      } else if (key == "modeled_store_bytes") {
        bytes(s.modeled_store_bytes);
      } else {
        fail(filename, lineno, "unknown key in [general]: " + key);
      }
    } else if (section == "workload") {
      if (key == "read_fraction") {
        dbl(s.read_fraction);
        if (s.read_fraction < 0 || s.read_fraction > 1) {
          fail(filename, lineno, "read_fraction must be in [0,1]");
        }
      } else if (key == "distribution") {
        if (val == "uniform") {
          s.distribution = KeyDistribution::Uniform;
        } else if (val == "zipfian") {
          s.distribution = KeyDistribution::Zipfian;
        } else {
          fail(filename, lineno, "unknown distribution: " + val);
        }
      } else if (key == "zipf_theta") {
        dbl(s.zipf_theta);
      } else if (key == "client_count") {
        std::uint64_t n = 0;
        u64(n);
        s.client_count = static_cast<std::uint32_t>(n);
        client_count_set = true;
      } else if (key == "op_interval") {
        if (val == "0") {
          s.op_interval = 0;
        } else {
          dur(s.op_interval);
        }
      } else if (key == "ops_per_client") {
        u64(s.ops_per_client);
      } else if (key == "scope_size") {
        std::uint64_t n = 0;
        u64(n);
        if (n == 0) fail(filename, lineno, "scope_size must be positive");
        s.scope_size = static_cast<std::uint32_t>(n);
      } else if (key == "client_timeout") {
        dur(s.client_timeout);
      } else {
        fail(filename, lineno, "unknown key in [workload]: " + key);
      }
    } else if (section == "network") {
      if (key == "base_latency") {
        dur(s.network.base_latency);
      } else if (key == "jitter") {
        if (val == "0") {
          s.network.jitter = 0;
        } else {
          dur(s.network.jitter);
        }
      } else if (key == "drop_probability") {
        dbl(s.network.drop_probability);
      } else if (key == "bandwidth") {
        dbl(s.network.bandwidth);
      } else if (key == "per_message_cpu") {
        if (val == "0") {
          s.network.per_message_cpu = 0;
        } else {
          dur(s.network.per_message_cpu);
        }
      } else {
        fail(filename, lineno, "unknown key in [network]: " + key);
      }
    } else if (section == "nvm") {
      if (key == "write_latency") {
        dur(s.nvm.write_latency);
      } else if (key == "write_bandwidth") {
        dbl(s.nvm.write_bandwidth);
      } else if (key == "read_latency") {
        dur(s.nvm.read_latency);
      } else if (key == "read_bandwidth") {
        dbl(s.nvm.read_bandwidth);
      } else if (key == "dram_copy_bandwidth") {
        dbl(s.nvm.dram_copy_bandwidth);
      } else {
        fail(filename, lineno, "unknown key in [nvm]: " + key);
      }
    } else if (section == "membership") {
      if (key == "heartbeat_period") {
        dur(s.heartbeat_period);
      } else if (key == "heartbeat_timeout_multiplier") {
        std::uint64_t n = 0;
        u64(n);
        s.heartbeat_timeout_multiplier = static_cast<int>(n);
      } else if (key == "inv_ack_timeout") {
        dur(s.inv_ack_timeout);
      } else if (key == "ack_val_timeout") {
        dur(s.ack_val_timeout);
      } else if (key == "takeover_stagger") {
        dur(s.takeover_stagger);
      } else if (key == "recovery_retry_timeout") {
        dur(s.recovery_retry_timeout);
      } else if (key == "cm_failover_delay") {
        dur(s.cm_failover_delay);
      } else {
        fail(filename, lineno, "unknown key in [membership]: " + key);
      }
    } else if (section == "recovery") {
      if (key == "mode") {
        if (val == "incremental") {
          s.recovery_mode = RecoveryMode::Incremental;
        } else if (val == "fullcopy") {
          s.recovery_mode = RecoveryMode::Fullcopy;
        } else {
          fail(filename, lineno, "unknown recovery mode: " + val);
        }
      } else if (key == "missed_updates_capacity") {
        bytes(s.missed_updates_capacity);
      } else if (key == "chunk_size") {
        bytes(s.chunk_bytes);
      } else if (key == "fullcopy_path") {
        if (val == "dram_pm") {
          s.fullcopy_path = FullcopyPathKind::DramPm;
        } else if (val == "pm_only") {
          s.fullcopy_path = FullcopyPathKind::PmOnly;
        } else {
          fail(filename, lineno, "unknown fullcopy path: " + val);
        }
      } else if (key == "dram_pm_read_bandwidth") {
        dbl(s.dram_pm.read_bandwidth);
      } else if (key == "dram_pm_net_bandwidth") {
        dbl(s.dram_pm.net_bandwidth);
      } else if (key == "dram_pm_write_bandwidth") {
        dbl(s.dram_pm.write_bandwidth);
      } else if (key == "pm_only_bandwidth") {
        dbl(s.pm_only.net_bandwidth);
      } else if (key == "fullcopy_stage_latency") {
        dur(s.dram_pm.stage_latency);
        s.pm_only.stage_latency = s.dram_pm.stage_latency;
      } else {
        fail(filename, lineno, "unknown key in [recovery]: " + key);
      }
    } else if (section == "metrics") {
      if (key == "throughput_window") {
        dur(s.throughput_window);
      } else if (key == "history_cap") {
        u64(s.history_cap);
      } else {
        fail(filename, lineno, "unknown key in [metrics]: " + key);
      }
    } else if (section == "faults") {
      auto kv = parse_kv_tokens(val);
      auto need_node = [&]() -> NodeId {
        auto it = kv.find("node");
        if (it == kv.end()) fail(filename, lineno, key + " needs node=");
        auto n = parse_u64(it->second);
        if (!n) fail(filename, lineno, "bad node id");
        return static_cast<NodeId>(*n);
      };
      auto need_time = [&](const char* f) -> SimTime {
        auto it = kv.find(f);
        if (it == kv.end()) {
          fail(filename, lineno, key + " needs " + std::string(f) + "=");
        }
        auto d = parse_duration(it->second);
        if (!d) fail(filename, lineno, "bad duration: " + it->second);
        return *d;
      };
      FaultAction a;
      if (key == "crash") {
        a.kind = FaultAction::Kind::Crash;
        a.node = need_node();
        a.at = need_time("at");
      } else if (key == "declare_ready") {
        a.kind = FaultAction::Kind::DeclareReady;
        a.node = need_node();
        a.at = need_time("at");
      } else if (key == "disconnect") {
        a.kind = FaultAction::Kind::Disconnect;
        a.node = need_node();
        a.from = need_time("from");
        a.to = need_time("to");
        a.at = a.from;
      } else if (key == "drop_next") {
        a.kind = FaultAction::Kind::DropNext;
        auto src = parse_u64(kv.count("src") ? kv["src"] : "");
        auto dst = parse_u64(kv.count("dst") ? kv["dst"] : "");
        auto cnt = parse_u64(kv.count("count") ? kv["count"] : "1");
        if (!src || !dst || !cnt) fail(filename, lineno, "bad drop_next");
        a.src = static_cast<NodeId>(*src);
        a.dst = static_cast<NodeId>(*dst);
        a.count = *cnt;
        a.at =
            kv.count("at") ? need_time("at") : 0;
      } else if (key == "delay") {
        a.kind = FaultAction::Kind::Delay;
        auto src = parse_u64(kv.count("src") ? kv["src"] : "");
        auto dst = parse_u64(kv.count("dst") ? kv["dst"] : "");
        if (!src || !dst) fail(filename, lineno, "bad delay");
        a.src = static_cast<NodeId>(*src);
        a.dst = static_cast<NodeId>(*dst);
        auto ex = parse_duration(kv.count("extra") ? kv["extra"] : "");
        if (!ex) fail(filename, lineno, "delay needs extra=");
        a.extra = *ex;
        a.from = need_time("from");
        a.to = need_time("to");
        a.at = a.from;
      } else if (key == "crash_cm") {
        a.kind = FaultAction::Kind::CrashCm;
        a.at = need_time("at");
      } else {
        fail(filename, lineno, "unknown fault: " + key);
      }
      s.faults.push_back(a);
    } else if (section.empty()) {
      fail(filename, lineno, "key outside any section: " + key);
    } else {
      fail(filename, lineno, "unknown section: [" + section + "]");
    }
  }

  if (!client_count_set) s.client_count = s.nodes;
  for (const auto& f : s.faults) {
    if (f.at < 0 || f.at > s.horizon) {
      throw ScenarioError(filename + ": fault time outside scenario horizon");
    }
  }
  return s.with_defaults_resolved();
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ScenarioError(path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_scenario_text(ss.str(), path);
}

}  // namespace replsim
