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

#include <cmath>
#include <cstdint>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/scenario.hpp"

namespace replsim {

/// Zipfian key sampler: p(rank i) proportional to 1/i^theta over key_count
/// ranks, drawn by inverse CDF over a precomputed cumulative table.
class ZipfianGenerator {
 public:
  ZipfianGenerator(std::uint64_t key_count, double theta) {
    cumulative_.reserve(key_count);
    double sum = 0;
    for (std::uint64_t i = 1; i <= key_count; ++i) {
      sum += 1.0 / std::pow(static_cast<double>(i), theta);
      cumulative_.push_back(sum);
    }
    total_ = sum;
  }

  Key sample(Rng& rng) const {
    double u = rng.next_double() * total_;
    std::size_t lo = 0, hi = cumulative_.size();
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (cumulative_[mid] < u) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    return lo < cumulative_.size() ? lo : cumulative_.size() - 1;
  }

  double mass(std::uint64_t rank) const {  // rank is 1-based
    double prev = rank >= 2 ? cumulative_[rank - 2] : 0.0;
    return (cumulative_[rank - 1] - prev) / total_;
  }

 private:
  std::vector<double> cumulative_;
  double total_ = 0;
};

enum class OpKind : std::uint8_t { Read, Write, PersistScope };

struct ClientOp {
  OpKind kind = OpKind::Read;
  Key key = 0;
  ScopeId scope = 0;
};

/// Deterministic per-client op stream. Ops are a pure function of
/// (scenario, seed, client, index); the execution timing never feeds back
/// into the stream, so paired runs replay identical workloads.
class WorkloadGenerator {
 public:
  WorkloadGenerator() = default;
  WorkloadGenerator(const Scenario& sc, std::uint32_t client)
      : scenario_(&sc),
        client_(client),
        rng_(sc.seed, mix64(0x776b6c64, client)),
        zipf_(sc.distribution == KeyDistribution::Zipfian
                  ? std::optional<ZipfianGenerator>(
                        ZipfianGenerator(sc.key_count, sc.zipf_theta))
                  : std::nullopt) {}

  /// Next op. `efn_active` selects distinct-keys mode behavior: every write
  /// during the fewer-nodes period targets a fresh key, emulating a much
  /// larger datastore.
  ClientOp next(bool efn_active, std::uint64_t* fresh_key_counter) {
    const Scenario& sc = *scenario_;
    ClientOp op;
    if (sc.model == PersistencyModel::Scope && writes_in_scope_ >= sc.scope_size) {
      writes_in_scope_ = 0;
      op.kind = OpKind::PersistScope;
      op.scope = current_scope_;
      current_scope_ = 0;
      return op;
    }
    bool is_read = rng_.next_double() < sc.read_fraction;
    if (is_read) {
      op.kind = OpKind::Read;
      op.key = sample_key();
      return op;
    }
    op.kind = OpKind::Write;
    if (sc.distinct_keys_mode && efn_active && fresh_key_counter != nullptr) {
      op.key = sc.key_count + (*fresh_key_counter)++;
    } else {
      op.key = sample_key();
    }
    if (sc.model == PersistencyModel::Scope) {
      if (current_scope_ == 0) {
        current_scope_ = (static_cast<ScopeId>(client_ + 1) << 32) |
                         ++scope_counter_;
      }
      op.scope = current_scope_;
      ++writes_in_scope_;
    }
    return op;
  }

 private:
  Key sample_key() {
    const Scenario& sc = *scenario_;
    if (zipf_.has_value()) return zipf_->sample(rng_);
    return rng_.next_below(sc.key_count);
  }

  const Scenario* scenario_ = nullptr;
  std::uint32_t client_ = 0;
  Rng rng_;
  std::optional<ZipfianGenerator> zipf_;
  ScopeId current_scope_ = 0;
  std::uint64_t scope_counter_ = 0;
  std::uint32_t writes_in_scope_ = 0;
};

}  // namespace replsim
