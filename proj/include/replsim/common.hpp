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
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace replsim {

using NodeId = std::uint32_t;
using Key = std::uint64_t;
using ScopeId = std::uint64_t;  // 0 = no scope
using RequestId = std::uint64_t;
using Epoch = std::uint64_t;
using SimTime = std::int64_t;  // virtual nanoseconds

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

inline constexpr SimTime operator""_us(unsigned long long v) {
  return static_cast<SimTime>(v) * 1000;
}
inline constexpr SimTime operator""_ms(unsigned long long v) {
  return static_cast<SimTime>(v) * 1000000;
}
inline constexpr SimTime operator""_s(unsigned long long v) {
  return static_cast<SimTime>(v) * 1000000000;
}

/// splitmix64; used both as a PRF and as the per-run RNG stream generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

/// Deterministic RNG stream. Streams are decorrelated by (seed, tag).
class Rng {
 public:
  Rng() : state_(0x2545f4914f6cdd1dULL) {}
  Rng(std::uint64_t seed, std::uint64_t tag) : state_(mix64(seed, tag)) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  // [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, span]
  SimTime next_jitter(SimTime span) {
    if (span <= 0) return 0;
    return static_cast<SimTime>(next_below(static_cast<std::uint64_t>(span) + 1));
  }

 private:
  std::uint64_t state_;
};

/// FNV-1a over bytes, finalized through splitmix for avalanche.
class Fingerprint {
 public:
  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ = (h_ ^ ((v >> (i * 8)) & 0xff)) * 0x100000001b3ULL;
    }
  }
  void put_i64(std::int64_t v) { put_u64(static_cast<std::uint64_t>(v)); }
  void put_u32(std::uint32_t v) { put_u64(v); }
  void put_bool(bool v) { put_u64(v ? 1 : 0); }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ b[i]) * 0x100000001b3ULL;
  }
  std::uint64_t value() const {
    std::uint64_t s = h_;
    return splitmix64(s);
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

/// Value payloads are a pure function of the write identity; see value_hash().
inline std::uint64_t value_hash(Key key, std::uint64_t ts_version,
                                std::uint32_t ts_node, std::uint64_t salt,
                                std::uint32_t value_bytes) {
  Fingerprint f;
  f.put_u64(salt);
  f.put_u64(key);
  f.put_u64(ts_version);
  f.put_u32(ts_node);
  f.put_u32(value_bytes);
  return f.value();
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace replsim
