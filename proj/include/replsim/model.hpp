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

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "replsim/common.hpp"

namespace replsim {

/// Memory persistency model for a run. Consistency is always Linearizable.
enum class PersistencyModel { Synch, Strict, REnf, Event, Scope };

inline constexpr std::array<PersistencyModel, 5> kAllModels = {
    PersistencyModel::Synch, PersistencyModel::Strict, PersistencyModel::REnf,
    PersistencyModel::Event, PersistencyModel::Scope};

inline std::string_view to_string(PersistencyModel m) {
  switch (m) {
    case PersistencyModel::Synch: return "Synch";
    case PersistencyModel::Strict: return "Strict";
    case PersistencyModel::REnf: return "REnf";
    case PersistencyModel::Event: return "Event";
    case PersistencyModel::Scope: return "Scope";
  }
  return "?";
}

inline std::optional<PersistencyModel> parse_model(std::string_view s) {
  for (auto m : kAllModels) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

/// Whether the model splits consistency and persistency acknowledgments.
inline bool split_acks(PersistencyModel m) {
  return m != PersistencyModel::Synch;
}

/// Whether the model defines per-write durability points (gdp_flag semantics).
/// Event persists in the background with no durability points; Scope's
/// durability points belong to the PERSIST command, not the write.
inline bool has_write_durability_points(PersistencyModel m) {
  return m == PersistencyModel::Synch || m == PersistencyModel::Strict ||
         m == PersistencyModel::REnf;
}

/// Whether the INV path persists to the local NVM log (Table of per-model
/// point conditions: Synch/Strict/REnf persist on INV; Event persists in the
/// background; Scope defers to PERSIST_SC).
inline bool persist_on_inv(PersistencyModel m) {
  return m == PersistencyModel::Synch || m == PersistencyModel::Strict ||
         m == PersistencyModel::REnf;
}

}  // namespace replsim
