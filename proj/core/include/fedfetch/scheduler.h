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

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>

#include "fedfetch/sampling.h"
#include "fedfetch/server_store.h"

namespace fedfetch {

/// Exponentially weighted moving average of round durations.
class DurationEstimator {
 public:
  static constexpr double kDefaultAlpha = 0.125;

  explicit DurationEstimator(double alpha = kDefaultAlpha);

  /// Folds in one observed round duration (seconds, > 0).
  DurationEstimator update(double observed) const;

  double alpha() const { return alpha_; }
  bool initialized() const { return initialized_; }
  /// Current estimate; 0 before the first observation.
  double estimate() const { return estimate_; }

 private:
  double alpha_;
  double estimate_ = 0.0;
  bool initialized_ = false;
};

/// Accumulated-update size as a function of the number of rounds covered.
using SpanSizeFn = std::function<double(std::int64_t)>;

SpanSizeFn span_sizes(const SizeProfiler& profiler);

/// Estimated train-phase download time (seconds) for a client that starts
/// prefetching at `start_round` and trains at `train_round`, by replaying
/// the prefetch process with a fixed per-round duration `round_duration`.
///
/// Budget carried into a round is spent first on what is still queued; any
/// surplus lets the client catch up to the newest update.
double est_fetch_time(double bandwidth, std::int64_t start_round,
                      std::int64_t train_round, double round_duration,
                      const SpanSizeFn& span_size, double base_model_size);

struct PrefetchSchedule {
  std::map<ClientId, std::int64_t> start;  // client -> first prefetch round
  std::int64_t common_round = 0;           // earliest round every client fits
  double time_limit = std::numeric_limits<double>::infinity();
};

struct ScheduleInputs {
  std::span<const ClientId> cohort;
  std::span<const double> bandwidths;  // bytes/s, parallel to cohort
  std::int64_t presample_round = 0;
  std::int64_t train_round = 0;
  double round_duration = 0.0;  // EWMA estimate, frozen for the call
  double beta = 0.0;
  double over_commit = 1.0;
};

/// Picks, for every presampled client, the latest prefetch start round whose
/// estimated train-phase fetch time stays under the current time limit.
///
/// The limit starts unbounded and is re-set to the (1+beta)/OC nearest-rank
/// percentile of the estimates each time the whole cohort fits.
PrefetchSchedule schedule_prefetch(const ScheduleInputs& in, const SpanSizeFn& span_size,
                                   double base_model_size);

/// 1-based nearest-rank index ceil(p * n), clamped to [1, n].
std::size_t nearest_rank(double p, std::size_t n);

}  // namespace fedfetch
