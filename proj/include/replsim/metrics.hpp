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

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include "replsim/common.hpp"
#include "replsim/model.hpp"
#include "replsim/step.hpp"

namespace replsim {

/// Completed-op throughput sampled on a fixed window of simulated time.
class ThroughputSeries {
 public:
  ThroughputSeries() = default;
  explicit ThroughputSeries(SimTime window) : window_(window) {}

  void record_completion(SimTime at) {
    roll_to(at);
    ++in_window_;
    ++total_;
  }

  void finish(SimTime end) { roll_to(end); }

  std::uint64_t total() const { return total_; }
  SimTime window() const { return window_; }

  struct Sample {
    SimTime at = 0;
    std::uint64_t completed = 0;
    double ops_per_s = 0;
  };
  const std::vector<Sample>& samples() const { return samples_; }

  std::string to_csv() const {
    std::string out = "timestamp_ns,completed_ops,throughput_ops_s\n";
    char buf[96];
    for (const auto& s : samples_) {
      std::snprintf(buf, sizeof(buf), "%" PRId64 ",%" PRIu64 ",%.3f\n", s.at,
                    s.completed, s.ops_per_s);
      out += buf;
    }
    return out;
  }

 private:
  void roll_to(SimTime at) {
    while (at >= window_end_) {
      double secs = static_cast<double>(window_) / 1e9;
      samples_.push_back(
          {window_end_, in_window_,
           secs > 0 ? static_cast<double>(in_window_) / secs : 0.0});
      in_window_ = 0;
      window_end_ += window_;
    }
  }

  SimTime window_ = 100_ms;
  SimTime window_end_ = 100_ms;
  std::uint64_t in_window_ = 0;
  std::uint64_t total_ = 0;
  std::vector<Sample> samples_;
};

struct RecoveryCsvRow {
  std::string scenario;
  PersistencyModel model = PersistencyModel::Synch;
  bool incremental = true;
  bool fallback = false;
  double efn_duration_s = 0;
  RecoveryReport report;
};

inline std::string recovery_csv_header() {
  return "scenario,model,mode,efn_duration_s,start_to_ack_ns,"
         "catchup_to_resp_ns,apply_to_end_ns,total_ns,buffer_entries,"
         "buffer_bytes,entries_rejected\n";
}

inline std::string recovery_csv_row(const RecoveryCsvRow& r) {
  char buf[512];
  const char* mode = r.incremental ? "incremental"
                     : (r.fallback ? "fullcopy_fallback" : "fullcopy");
  std::snprintf(buf, sizeof(buf),
                "%s,%s,%s,%.3f,%" PRId64 ",%" PRId64 ",%" PRId64 ",%" PRId64
                ",%" PRIu64 ",%" PRIu64 ",%" PRIu64 "\n",
                r.scenario.c_str(), std::string(to_string(r.model)).c_str(),
                mode, r.efn_duration_s, r.report.start_to_ack,
                r.report.catchup_to_resp, r.report.apply_to_end,
                r.report.total, r.report.buffer_entries, r.report.buffer_bytes,
                r.report.entries_rejected);
  return buf;
}

/// Message conservation accounting: every sent message is exactly one of
/// delivered, dropped by the network model, or dropped stale at the receiver.
struct MessageAccounting {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped_model = 0;
  std::uint64_t dropped_stale = 0;
  std::uint64_t dropped_crashed = 0;  // receiver was down
  std::uint64_t in_flight_at_end = 0;

  bool conserved() const {
    return sent == delivered + dropped_model + dropped_crashed +
                       in_flight_at_end &&
           dropped_stale <= delivered;
  }
};

}  // namespace replsim
