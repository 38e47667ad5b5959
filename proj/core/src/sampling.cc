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

#include "fedfetch/sampling.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace fedfetch {

bool RoundPlan::contains(ClientId id) const {
  return std::find(cohort.begin(), cohort.end(), id) != cohort.end();
}

std::size_t cohort_size(std::size_t k, double over_commit) {
  if (!(over_commit >= 1.0)) throw std::invalid_argument("over-commit must be >= 1");
  return static_cast<std::size_t>(
      std::ceil(static_cast<double>(k) * over_commit - 1e-9));
}

RoundPlan presample(std::int64_t train_round, std::span<const ClientId> online,
                    std::size_t k, double over_commit, RngStream rng) {
  RoundPlan plan;
  plan.train_round = train_round;
  plan.target = k;
  const std::size_t want = cohort_size(k, over_commit);
  std::vector<ClientId> pool(online.begin(), online.end());
  const std::size_t take = std::min(want, pool.size());
  plan.degraded = take < want;
  // Partial Fisher-Yates: position i only depends on draws 0..i.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  plan.cohort = std::move(pool);
  return plan;
}

RoundPlan replace_offline(const RoundPlan& plan, std::span<const ClientId> online,
                          RngStream rng) {
  RoundPlan out = plan;
  auto is_online = [&](ClientId id) {
    return std::binary_search(online.begin(), online.end(), id);
  };
  if (std::all_of(plan.cohort.begin(), plan.cohort.end(), is_online)) return out;

  std::vector<ClientId> pool;
  for (ClientId id : online) {
    if (!plan.contains(id)) pool.push_back(id);
  }
  std::vector<ClientId> cohort;
  cohort.reserve(plan.cohort.size());
  for (ClientId id : plan.cohort) {
    if (is_online(id)) {
      cohort.push_back(id);
      continue;
    }
    if (pool.empty()) {
      out.degraded = true;
      continue;
    }
    const auto j = static_cast<std::size_t>(rng.uniform_int(pool.size()));
    const ClientId pick = pool[j];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    cohort.push_back(pick);
    out.replaced.push_back(pick);
  }
  out.cohort = std::move(cohort);
  return out;
}

}  // namespace fedfetch
