// Copyright 2026 The FedFetch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedfetch/rng.h"

namespace fedfetch {

using ClientId = std::int32_t;

/// Cohort presampled for one train round.
struct RoundPlan {
  std::int64_t train_round = 0;
  std::vector<ClientId> cohort;    // sampling order, no duplicates
  std::size_t target = 0;          // K
  std::vector<ClientId> replaced;  // members that joined as replacements
  bool degraded = false;           // fewer than ceil(K * OC) members

  bool contains(ClientId id) const;
};

/// ceil(K * OC), tolerant of representation error in OC.
std::size_t cohort_size(std::size_t k, double over_commit);

/// Uniform sample without replacement of ceil(K * OC) ids from `online`
/// (sorted ascending). Cohorts drawn from the same stream are nested in OC:
/// the larger cohort extends the smaller one.
RoundPlan presample(std::int64_t train_round, std::span<const ClientId> online,
                    std::size_t k, double over_commit, RngStream rng);

/// Replaces every member missing from `online` (sorted ascending) with a
/// uniform draw from online minus cohort, preserving the member's slot.
/// If the pool runs dry the member is dropped and the plan is flagged.
RoundPlan replace_offline(const RoundPlan& plan, std::span<const ClientId> online,
                          RngStream rng);

}  // namespace fedfetch
