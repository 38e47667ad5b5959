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

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "fedfetch/scheduler.h"
#include "fedfetch/server_store.h"

namespace fedfetch {
namespace {

// Base model 1000 bytes; span k costs min(1000, 300 + 200 (k - 1)).
double sizes(std::int64_t k) {
  if (k <= 0) return 0.0;
  return std::min(1000.0, 300.0 + 200.0 * static_cast<double>(k - 1));
}

const SpanSizeFn kSizes = sizes;

TEST(DurationEstimatorTest, Examples) {
  DurationEstimator est;
  EXPECT_EQ(est.alpha(), 0.125);
  EXPECT_FALSE(est.initialized());
  EXPECT_EQ(est.estimate(), 0.0);
  est = est.update(60.0);
  EXPECT_TRUE(est.initialized());
  EXPECT_EQ(est.estimate(), 60.0);

  DurationEstimator fixed = DurationEstimator().update(100.0);
  EXPECT_EQ(fixed.update(100.0).estimate(), 100.0);
  EXPECT_EQ(fixed.update(200.0).estimate(), 112.5);
}

TEST(DurationEstimatorTest, IsAValue) {
  const DurationEstimator a = DurationEstimator(0.5).update(10.0);
  const DurationEstimator b = a.update(20.0);
  EXPECT_EQ(a.estimate(), 10.0);
  EXPECT_EQ(b.estimate(), 15.0);
}

TEST(DurationEstimatorTest, Errors) {
  EXPECT_THROW(DurationEstimator(0.0), std::invalid_argument);
  EXPECT_THROW(DurationEstimator(1.5), std::invalid_argument);
  EXPECT_NO_THROW(DurationEstimator(1.0));
  EXPECT_THROW(DurationEstimator().update(0.0), std::invalid_argument);
  EXPECT_THROW(DurationEstimator().update(-1.0), std::invalid_argument);
}

TEST(EstFetchTimeTest, NoPrefetchRoundsIsBaseOverBandwidth) {
  EXPECT_EQ(est_fetch_time(100.0, 5, 5, 10.0, kSizes, 1000.0), 10.0);
}

TEST(EstFetchTimeTest, HugeBandwidthLeavesOneSpan) {
  const double bw = 1e12;
  EXPECT_NEAR(est_fetch_time(bw, 4, 5, 10.0, kSizes, 1000.0), 300.0 / bw, 1e-18);
}

TEST(EstFetchTimeTest, HandSimulatedLoops) {
  // bw 100, D 10, t = t* - 2: round 0 budget 0, pending 0; round 1 budget 10,
  // catches up; fetch span 1 = 300 / 100.
  EXPECT_EQ(est_fetch_time(100.0, 0, 2, 10.0, kSizes, 1000.0), 3.0);
  // bw 200: base lands in round 0 with 5 s spare; fetch span 1 = 300 / 200.
  EXPECT_EQ(est_fetch_time(200.0, 0, 2, 10.0, kSizes, 1000.0), 1.5);
  // bw 50: never any spare time; pending 500 then 0; fetch span 2 = 500 / 50.
  EXPECT_EQ(est_fetch_time(50.0, 0, 2, 10.0, kSizes, 1000.0), 10.0);
  // bw 50 over three rounds: pending 500, 0, then round 2 has 10 s spare and
  // catches up to span 2 (500 - 500 = 0); fetch span 1 = 300 / 50.
  EXPECT_EQ(est_fetch_time(50.0, 0, 3, 10.0, kSizes, 1000.0), 6.0);
}

TEST(EstFetchTimeTest, Errors) {
  EXPECT_THROW(est_fetch_time(0.0, 0, 1, 10.0, kSizes, 1000.0), std::invalid_argument);
  EXPECT_THROW(est_fetch_time(10.0, 3, 2, 10.0, kSizes, 1000.0), std::invalid_argument);
}

TEST(EstFetchTimeTest, NonIncreasingInBandwidth) {
  for (std::int64_t start = 0; start <= 5; ++start) {
    double prev = std::numeric_limits<double>::infinity();
    for (double bw = 1.0; bw < 1e5; bw *= 1.3) {
      const double t = est_fetch_time(bw, start, 5, 10.0, kSizes, 1000.0);
      EXPECT_LE(t, prev) << "start " << start << " bw " << bw;
      prev = t;
    }
  }
}

TEST(EstFetchTimeTest, PrefetchHelpsClientsThatCanKeepUp) {
  // A client that drains the base within one round never does worse than
  // the plain base download.
  for (double bw : {100.0, 250.0, 1000.0}) {
    for (std::int64_t start = 0; start <= 5; ++start) {
      EXPECT_LE(est_fetch_time(bw, start, 5, 10.0, kSizes, 1000.0), 1000.0 / bw);
    }
  }
}

TEST(EstFetchTimeTest, WorksWithProfiler) {
  SizeProfiler profiler(CompressorConfig::quant(4), 1000, {10, 100});
  const double base = static_cast<double>(profiler.base_model_size());
  EXPECT_EQ(est_fetch_time(400.0, 3, 3, 20.0, span_sizes(profiler), base), 10.0);
  // One round: base lands with 10 s spare, span 1 (504 bytes) at 400 B/s.
  EXPECT_EQ(est_fetch_time(400.0, 2, 3, 20.0, span_sizes(profiler), base), 504.0 / 400.0);
}

TEST(NearestRankTest, Values) {
  EXPECT_EQ(nearest_rank(1.0, 6), 6u);
  EXPECT_EQ(nearest_rank(1.0 / 1.3, 39), 30u);
  EXPECT_EQ(nearest_rank(1.0 / 1.2, 6), 5u);
  EXPECT_EQ(nearest_rank(0.0, 6), 1u);
  EXPECT_EQ(nearest_rank(2.0, 6), 6u);
  EXPECT_EQ(nearest_rank(0.5, 0), 0u);
}

ScheduleInputs inputs(const std::vector<ClientId>& cohort, const std::vector<double>& bw,
                      std::int64_t ts, std::int64_t tstar, double d, double beta,
                      double oc) {
  ScheduleInputs in;
  in.cohort = cohort;
  in.bandwidths = bw;
  in.presample_round = ts;
  in.train_round = tstar;
  in.round_duration = d;
  in.beta = beta;
  in.over_commit = oc;
  return in;
}

TEST(SchedulePrefetchTest, HomogeneousCohortSharesOneStart) {
  const std::vector<ClientId> cohort{0, 1, 2, 3};
  const std::vector<double> bw(4, 1000.0);
  const PrefetchSchedule s =
      schedule_prefetch(inputs(cohort, bw, 0, 3, 10.0, 0.0, 1.0), kSizes, 1000.0);
  ASSERT_EQ(s.start.size(), 4u);
  // Ample bandwidth: every start before t* catches up to a span-1 fetch,
  // while starting at t* means the whole base. The latest start that meets
  // the limit is t* - 1.
  for (const auto& [id, p] : s.start) EXPECT_EQ(p, 2) << "client " << id;
  EXPECT_EQ(s.common_round, 2);
  EXPECT_EQ(s.time_limit, 0.3);
}

TEST(SchedulePrefetchTest, StragglerStartsAtPresampleRound) {
  const std::vector<ClientId> cohort{10, 11, 12, 13, 14, 15};
  const std::vector<double> bw{500.0, 400.0, 300.0, 200.0, 100.0, 1e-3};
  const PrefetchSchedule s =
      schedule_prefetch(inputs(cohort, bw, 2, 6, 10.0, 0.0, 1.3), kSizes, 1000.0);
  EXPECT_EQ(s.start.at(15), 2);
  for (ClientId id : cohort) {
    EXPECT_GE(s.start.at(id), 2);
    EXPECT_LE(s.start.at(id), 6);
    if (id != 15) EXPECT_GE(s.start.at(id), s.start.at(15));
  }
}

TEST(SchedulePrefetchTest, FasterClientsStartLater) {
  // Two fast, three typical, one straggler; limit is the 5th of 6 estimates.
  const SpanSizeFn size = [](std::int64_t k) {
    return std::min(100.0, 30.0 * static_cast<double>(k));
  };
  const std::vector<ClientId> cohort{0, 1, 2, 3, 4, 5};
  const std::vector<double> bw{100.0, 100.0, 20.0, 20.0, 20.0, 2.0};
  const PrefetchSchedule s =
      schedule_prefetch(inputs(cohort, bw, 1, 4, 10.0, 0.0, 1.2), size, 100.0);
  const std::vector<std::int64_t> expect{4, 4, 3, 3, 3, 1};
  for (ClientId id : cohort) {
    EXPECT_EQ(s.start.at(id), expect[static_cast<std::size_t>(id)]) << "client " << id;
  }
}

TEST(SchedulePrefetchTest, TotalAndDeterministic) {
  const std::vector<ClientId> cohort{3, 1, 4, 5, 9, 2, 6};
  const std::vector<double> bw{5.0, 50.0, 500.0, 0.5, 120.0, 33.0, 75.0};
  const auto in = inputs(cohort, bw, 0, 4, 12.0, 0.0, 1.3);
  const PrefetchSchedule a = schedule_prefetch(in, kSizes, 1000.0);
  const PrefetchSchedule b = schedule_prefetch(in, kSizes, 1000.0);
  EXPECT_EQ(a.start, b.start);
  EXPECT_EQ(a.common_round, b.common_round);
  EXPECT_EQ(a.time_limit, b.time_limit);
  ASSERT_EQ(a.start.size(), cohort.size());
  for (const auto& [id, p] : a.start) {
    EXPECT_GE(p, 0);
    EXPECT_LE(p, 4);
  }
  EXPECT_GE(a.common_round, 0);
  EXPECT_LE(a.common_round, 4);
  EXPECT_GT(a.time_limit, 0.0);
}

TEST(SchedulePrefetchTest, StartIsLastRoundMeetingLimitInForce) {
  // Replays the loop and checks each start against the limit that was in
  // force when it was assigned.
  const std::vector<ClientId> cohort{0, 1, 2, 3, 4, 5, 6, 7};
  const std::vector<double> bw{3.0, 30.0, 60.0, 90.0, 150.0, 400.0, 1000.0, 7.0};
  const std::int64_t ts = 1, tstar = 5;
  const double d = 8.0, oc = 1.3;
  const PrefetchSchedule s =
      schedule_prefetch(inputs(cohort, bw, ts, tstar, d, 0.0, oc), kSizes, 1000.0);

  double limit = std::numeric_limits<double>::infinity();
  std::vector<std::int64_t> expect(cohort.size(), -1);
  for (std::int64_t t = ts; t <= tstar; ++t) {
    std::vector<double> est;
    for (double b : bw) est.push_back(est_fetch_time(b, t, tstar, d, kSizes, 1000.0));
    const double in_force = limit;
    if (std::all_of(est.begin(), est.end(), [&](double e) { return e <= in_force; })) {
      std::vector<double> sorted = est;
      std::sort(sorted.begin(), sorted.end());
      limit = sorted[nearest_rank(1.0 / oc, est.size()) - 1];
    }
    for (std::size_t i = 0; i < est.size(); ++i) {
      if (est[i] <= in_force) expect[i] = t;
    }
  }
  for (ClientId id : cohort) {
    EXPECT_EQ(s.start.at(id), expect[static_cast<std::size_t>(id)]) << "client " << id;
  }
}

TEST(SchedulePrefetchTest, BetaAtBoundaryUsesMaxEstimate) {
  const std::vector<ClientId> cohort{0, 1, 2, 3};
  const std::vector<double> bw{2.0, 50.0, 100.0, 400.0};
  const auto in = inputs(cohort, bw, 0, 3, 10.0, 0.3, 1.3);
  const PrefetchSchedule s = schedule_prefetch(in, kSizes, 1000.0);
  // With rank n every client fits on every iteration, so all advance to t*
  // or the last round whose estimate is no worse than the slowest.
  std::vector<double> at_common;
  for (double b : bw) {
    at_common.push_back(est_fetch_time(b, s.common_round, 3, 10.0, kSizes, 1000.0));
  }
  EXPECT_EQ(s.time_limit, *std::max_element(at_common.begin(), at_common.end()));
  const PrefetchSchedule s0 =
      schedule_prefetch(inputs(cohort, bw, 0, 3, 10.0, 0.0, 1.3), kSizes, 1000.0);
  for (ClientId id : cohort) EXPECT_GE(s.start.at(id), s0.start.at(id));
}

TEST(SchedulePrefetchTest, PresampleEqualsTrainRound) {
  const std::vector<ClientId> cohort{0, 1};
  const std::vector<double> bw{10.0, 20.0};
  const PrefetchSchedule s =
      schedule_prefetch(inputs(cohort, bw, 7, 7, 10.0, 0.0, 1.0), kSizes, 1000.0);
  EXPECT_EQ(s.start.at(0), 7);
  EXPECT_EQ(s.start.at(1), 7);
  EXPECT_EQ(s.common_round, 7);
}

TEST(SchedulePrefetchTest, Errors) {
  const std::vector<ClientId> none;
  const std::vector<double> no_bw;
  EXPECT_THROW(schedule_prefetch(inputs(none, no_bw, 0, 1, 1.0, 0.0, 1.0), kSizes, 1.0),
               std::invalid_argument);
  const std::vector<ClientId> two{0, 1};
  const std::vector<double> one{1.0};
  EXPECT_THROW(schedule_prefetch(inputs(two, one, 0, 1, 1.0, 0.0, 1.0), kSizes, 1.0),
               std::invalid_argument);
  const std::vector<double> bw{1.0, 2.0};
  EXPECT_THROW(schedule_prefetch(inputs(two, bw, 3, 1, 1.0, 0.0, 1.0), kSizes, 1.0),
               std::invalid_argument);
}

}  // namespace
}  // namespace fedfetch
