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

#include "fedfetch/scheduler.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace fedfetch {

DurationEstimator::DurationEstimator(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("DurationEstimator: alpha must be in (0, 1]");
  }
}

DurationEstimator DurationEstimator::update(double observed) const {
  if (!(observed > 0.0) || !std::isfinite(observed)) {
    throw std::invalid_argument("DurationEstimator: duration must be positive");
  }
  DurationEstimator next = *this;
  next.estimate_ = initialized_ ? alpha_ * observed + (1.0 - alpha_) * estimate_
                                : observed;
  next.initialized_ = true;
  return next;
}

SpanSizeFn span_sizes(const SizeProfiler& profiler) {
  return [&profiler](std::int64_t span) { return profiler.profiled_size(span); };
}

double est_fetch_time(double bandwidth, std::int64_t start_round,
                      std::int64_t train_round, double round_duration,
                      const SpanSizeFn& span_size, double base_model_size) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("est_fetch_time: bandwidth <= 0");
  if (start_round > train_round) {
    throw std::invalid_argument("est_fetch_time: start round after train round");
  }
  auto size_of = [&](std::int64_t span) { return span <= 0 ? 0.0 : span_size(span); };

  double pending = base_model_size;  // bytes still to download
  double budget = 0.0;               // spare prefetch time (s)
  std::int64_t synced = start_round; // model round held once `pending` lands
  for (std::int64_t j = start_round; j < train_round; ++j) {
    budget = std::max(0.0, budget + round_duration - pending / bandwidth);
    if (budget > 0.0) {
      pending = std::max(0.0, size_of(j - synced) - budget * bandwidth);
      synced = j;
    } else {
      pending = std::max(0.0, pending - round_duration * bandwidth);
    }
  }
  return (pending + size_of(train_round - synced)) / bandwidth;
}

std::size_t nearest_rank(double p, std::size_t n) {
  if (n == 0) return 0;
  const double raw = std::ceil(p * static_cast<double>(n) - 1e-9);
  return static_cast<std::size_t>(std::clamp(raw, 1.0, static_cast<double>(n)));
}

PrefetchSchedule schedule_prefetch(const ScheduleInputs& in, const SpanSizeFn& span_size,
                                   double base_model_size) {
  if (in.cohort.empty()) throw std::invalid_argument("schedule_prefetch: empty cohort");
  if (in.cohort.size() != in.bandwidths.size()) {
    throw std::invalid_argument("schedule_prefetch: bandwidth count mismatch");
  }
  if (in.presample_round > in.train_round) {
    throw std::invalid_argument("schedule_prefetch: presample round after train round");
  }
  const std::size_t n = in.cohort.size();
  const std::size_t rank = nearest_rank((1.0 + in.beta) / in.over_commit, n);

  PrefetchSchedule out;
  out.common_round = in.presample_round;
  std::vector<double> est(n);
  std::vector<double> sorted(n);
  for (std::int64_t t = in.presample_round; t <= in.train_round; ++t) {
    std::size_t fits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      est[i] = est_fetch_time(in.bandwidths[i], t, in.train_round, in.round_duration,
                              span_size, base_model_size);
      if (est[i] <= out.time_limit) ++fits;
    }
    const double limit_in_force = out.time_limit;
    if (fits == n) {
      out.common_round = t;
      sorted = est;
      std::sort(sorted.begin(), sorted.end());
      out.time_limit = sorted[rank - 1];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (est[i] <= limit_in_force) out.start[in.cohort[i]] = t;
    }
  }
  return out;
}

}  // namespace fedfetch
