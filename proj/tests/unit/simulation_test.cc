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
#include <memory>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "fedfetch/simulation.h"

namespace fedfetch {
namespace {

std::shared_ptr<const SynthTask> small_task(std::size_t clients, std::uint64_t seed = 1) {
  SynthTaskParams p;
  p.clients = clients;
  p.classes = 3;
  p.features = 9;  // dim 30
  p.samples_per_client = 20;
  p.test_samples = 60;
  p.seed = seed;
  return std::make_shared<const SynthTask>(gen_synth_task(p));
}

std::vector<ClientProfile> profiles(std::size_t n, double bw_dl, double bw_ul,
                                    double compute) {
  std::vector<ClientProfile> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({static_cast<ClientId>(i), bw_dl, bw_ul, compute, 1.0});
  }
  return out;
}

std::vector<ClientProfile> mixed_profiles(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<ClientProfile> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double bw = 20.0 * std::exp(1.5 * rng.normal());
    out.push_back({static_cast<ClientId>(i), bw, bw / 4.0, 5.0 * std::exp(0.5 * rng.normal()),
                   1.0});
  }
  return out;
}

SimConfig base_config() {
  SimConfig c;
  c.k = 5;
  c.over_commit = 1.3;
  c.prefetch_rounds = 3;
  c.downlink = CompressorConfig::topk(0.2);
  c.uplink = CompressorConfig::topk(0.2);
  c.train.local_steps = 2;
  c.train.batch_size = 10;
  c.eval_every = 0;
  c.seed = 5;
  return c;
}

ServerStore make_store(std::size_t dim, CompressorConfig dl = CompressorConfig::topk(0.2)) {
  return ServerStore(ParamVector(dim, 0.5), {1, dim}, dl, 10, 1);
}

void commit_random(ServerStore& store, std::uint64_t seed) {
  RngStream rng(seed);
  ParamVector d(store.dim());
  for (std::size_t i = 0; i < d.dim(); ++i) d[i] = rng.normal();
  store.commit_round(d, rng);
}

TEST(SimConfigTest, Validation) {
  SimConfig c = base_config();
  EXPECT_NO_THROW(c.validate(10));
  c.k = 11;
  EXPECT_THROW(c.validate(10), std::invalid_argument);
  c = base_config();
  c.over_commit = 0.9;
  EXPECT_THROW(c.validate(10), std::invalid_argument);
  c = base_config();
  c.beta = 0.4;  // 1 + beta > OC
  EXPECT_THROW(c.validate(10), std::invalid_argument);
  c = base_config();
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(10), std::invalid_argument);
  c = base_config();
  c.prefetch_rounds = -1;
  EXPECT_THROW(c.validate(10), std::invalid_argument);
  c = base_config();
  c.uplink = CompressorConfig::quant(40);
  EXPECT_THROW(c.validate(10), std::invalid_argument);
}

TEST(SimConfigTest, Horizon) {
  SimConfig c = base_config();
  EXPECT_EQ(c.horizon(), 3);
  c.scheduler = SchedulerMode::kNone;
  EXPECT_EQ(c.horizon(), 0);
  c.scheduler = SchedulerMode::kFixed;
  c.fixed_window = 5;
  EXPECT_EQ(c.horizon(), 5);
  c.fixed_window = 1;
  EXPECT_EQ(c.horizon(), 3);
}

TEST(SimConfigTest, ParseNames) {
  for (auto m : {SchedulerMode::kFedFetch, SchedulerMode::kFixed, SchedulerMode::kNone}) {
    EXPECT_EQ(parse_scheduler_mode(to_string(m)), m);
  }
  for (auto m : {AvailabilityMode::kFull, AvailabilityMode::kTrace,
                 AvailabilityMode::kTraceReplace}) {
    EXPECT_EQ(parse_availability_mode(to_string(m)), m);
  }
  for (auto w : {Weighting::kUniform, Weighting::kSamples}) {
    EXPECT_EQ(parse_weighting(to_string(w)), w);
  }
  EXPECT_THROW(parse_scheduler_mode("eager"), std::invalid_argument);
  EXPECT_THROW(parse_availability_mode("sometimes"), std::invalid_argument);
  EXPECT_THROW(parse_weighting("loss"), std::invalid_argument);
}

TEST(ClientStateTest, TargetAndPrefetchWindow) {
  ClientState c;
  EXPECT_FALSE(c.has_state());
  EXPECT_FALSE(c.target().has_value());
  c.synced = 4;
  EXPECT_EQ(c.target(), 4);
  c.queue.push_back({false, 0, {4, 6}, 100, 40});
  EXPECT_EQ(c.target(), 7);
  EXPECT_EQ(c.queued_bytes(), 40u);
  c.assignments[9] = 6;
  EXPECT_FALSE(c.prefetching_at(5));
  EXPECT_TRUE(c.prefetching_at(6));
  EXPECT_TRUE(c.prefetching_at(8));
  EXPECT_FALSE(c.prefetching_at(9));
  c.reset();
  EXPECT_FALSE(c.has_state());
  EXPECT_EQ(c.assignments.size(), 1u);  // assignments survive a reset
}

TEST(AdvancePrefetchTest, AmpleBudgetCatchesUp) {
  ServerStore store = make_store(100);
  commit_random(store, 1);
  commit_random(store, 2);
  ClientState c;
  const std::uint64_t moved = advance_prefetch(c, 1000.0, 1000.0, store);
  EXPECT_TRUE(c.queue.empty());
  EXPECT_EQ(c.synced, store.current_round());
  EXPECT_EQ(moved, 400u);  // dense model of the newest round
  EXPECT_EQ(advance_prefetch(c, 1000.0, 1000.0, store), 0u);

  commit_random(store, 3);
  const std::uint64_t delta = wire_size(store.peek_range(3, 3));
  EXPECT_EQ(advance_prefetch(c, 1000.0, 1000.0, store), delta);
  EXPECT_EQ(c.synced, 4);
}

TEST(AdvancePrefetchTest, HalfBaseDrainsProportionally) {
  ServerStore store = make_store(100);
  ClientState c;
  const std::uint64_t moved = advance_prefetch(c, 2.0, 100.0, store);  // 200 of 400 bytes
  EXPECT_EQ(moved, 200u);
  ASSERT_EQ(c.queue.size(), 1u);
  EXPECT_TRUE(c.queue.front().is_base);
  EXPECT_EQ(c.queue.front().remaining, 200u);
  EXPECT_FALSE(c.synced.has_value());
  EXPECT_EQ(c.phase, ClientPhase::kPrefetching);
  // The partial item carries over and lands on the next call.
  EXPECT_EQ(advance_prefetch(c, 2.0, 100.0, store), 200u);
  EXPECT_EQ(c.synced, 1);
}

TEST(AdvancePrefetchTest, ZeroBudgetMovesNothing) {
  ServerStore store = make_store(100);
  ClientState c;
  EXPECT_EQ(advance_prefetch(c, 0.0, 100.0, store), 0u);
  EXPECT_TRUE(c.queue.empty());
  EXPECT_THROW(advance_prefetch(c, 1.0, 0.0, store), std::invalid_argument);
  EXPECT_THROW(advance_prefetch(c, -1.0, 10.0, store), std::invalid_argument);
}

TEST(AdvancePrefetchTest, PrefetchThenTrainPattern) {
  // Base model of round 1 in round 1, the round-1 delta in round 2, and the
  // round-2 delta at training in round 3. Bandwidth is chosen so each
  // download fits in its round.
  ServerStore store = make_store(100);
  ClientState c;
  EXPECT_EQ(advance_prefetch(c, 4.0, 100.0, store), 400u);
  EXPECT_EQ(c.synced, 1);
  commit_random(store, 1);

  const std::uint64_t d11 = wire_size(store.peek_range(1, 1));
  EXPECT_EQ(advance_prefetch(c, 4.0, 100.0, store), d11);
  EXPECT_EQ(c.synced, 2);
  commit_random(store, 2);

  const std::uint64_t d22 = wire_size(store.peek_range(2, 2));
  EXPECT_EQ(train_phase_fetch(c, store), d22);
  EXPECT_EQ(c.synced, 3);
  EXPECT_EQ(c.phase, ClientPhase::kTraining);
}

TEST(AdvancePrefetchTest, QueuedModelMatchesServer) {
  ServerStore store = make_store(50, CompressorConfig::quant(4));
  ClientState c;
  ParamVector local = store.model(1);
  for (int r = 0; r < 5; ++r) {
    const auto before = c.target();
    advance_prefetch(c, 1e6, 1.0, store);
    // Reconstruct the local model from what was downloaded.
    if (before) {
      local = axpy(local, 1.0, decompress(store.peek_range(*before, store.current_round() - 1)));
    }
    ASSERT_EQ(c.synced, store.current_round());
    const ParamVector& server = store.model(store.current_round());
    for (std::size_t i = 0; i < server.dim(); ++i) EXPECT_NEAR(local[i], server[i], 1e-12);
    commit_random(store, 10 + r);
  }
}

TEST(TrainPhaseFetchTest, FullyPrefetchedFetchesNothing) {
  ServerStore store = make_store(100);
  commit_random(store, 1);
  ClientState c;
  c.synced = store.current_round();
  EXPECT_EQ(train_phase_fetch(c, store), 0u);
}

TEST(TrainPhaseFetchTest, NoStateFetchesDenseModel) {
  ServerStore store = make_store(100);
  commit_random(store, 1);
  ClientState c;
  EXPECT_EQ(train_phase_fetch(c, store), 400u);
  EXPECT_EQ(c.synced, 2);
}

TEST(TrainPhaseFetchTest, PendingItemPlusNewRound) {
  ServerStore store = make_store(100);
  commit_random(store, 1);
  commit_random(store, 2);
  ClientState c;
  c.synced = 1;
  advance_prefetch(c, 1.0, 30.0, store);  // 30 bytes of delta 1..2
  ASSERT_EQ(c.queue.size(), 1u);
  const std::uint64_t remaining = c.queue.front().remaining;
  EXPECT_EQ(remaining, wire_size(store.peek_range(1, 2)) - 30u);
  commit_random(store, 3);
  const std::uint64_t span1 = wire_size(store.peek_range(3, 3));
  EXPECT_EQ(train_phase_fetch(c, store), remaining + span1);
  EXPECT_TRUE(c.queue.empty());
  EXPECT_EQ(c.synced, 4);
}

TEST(FinalizeMetricsTest, SumsRounds) {
  EXPECT_THROW(finalize_metrics({}), std::invalid_argument);
  RoundReport r;
  r.round = 1;
  r.duration = 6.0;
  r.fetch_time = 1.0;
  r.compute_time = 2.0;
  r.upload_time = 3.0;
  r.fetch_bytes = 10;
  r.prefetch_bytes = 20;
  r.upload_bytes = 30;
  r.accuracy = 0.5;
  const std::vector<RoundReport> one{r};
  const Metrics m = finalize_metrics(one);
  EXPECT_EQ(m.total_time, 6.0);
  EXPECT_EQ(m.fetch_time, 1.0);
  EXPECT_EQ(m.fetch_volume, 10u);
  EXPECT_EQ(m.prefetch_volume, 20u);
  EXPECT_EQ(m.upload_volume, 30u);
  EXPECT_EQ(m.total_volume, 60u);
  EXPECT_EQ(m.rounds, 1);
  EXPECT_EQ(m.accuracy, (std::vector<double>{0.5}));
}

TEST(SimulationTest, ConstructorChecks) {
  auto task = small_task(4);
  EXPECT_THROW(Simulation(base_config(), nullptr, profiles(4, 1, 1, 1)), std::invalid_argument);
  EXPECT_THROW(Simulation(base_config(), task, profiles(3, 1, 1, 1)), std::invalid_argument);
  EXPECT_THROW(Simulation(base_config(), task, profiles(4, 0, 1, 1)), std::invalid_argument);
  SimConfig c = base_config();
  c.k = 3;
  EXPECT_NO_THROW(Simulation(c, task, profiles(4, 1, 1, 1)));
}

TEST(SimulationTest, SingleClientClosedForm) {
  auto task = small_task(1);
  SimConfig c = base_config();
  c.k = 1;
  c.over_commit = 1.0;
  c.prefetch_rounds = 0;
  c.downlink = CompressorConfig::identity();
  c.uplink = CompressorConfig::identity();
  Simulation sim(c, task, profiles(1, 40.0, 10.0, 7.0));
  const double dim = static_cast<double>(task->model_dim());
  for (int i = 0; i < 3; ++i) {
    const RoundReport r = sim.run_round();
    EXPECT_EQ(r.duration, 4.0 * dim / 40.0 + 7.0 + 4.0 * dim / 10.0);
    EXPECT_EQ(r.fetch_bytes, 4u * task->model_dim());
    EXPECT_EQ(r.prefetch_bytes, 0u);
  }
}

TEST(SimulationTest, ComputeTimeIsTheMaximum) {
  auto task = small_task(2);
  SimConfig c = base_config();
  c.k = 2;
  c.over_commit = 1.0;
  auto p = profiles(2, 100.0, 100.0, 3.0);
  p[1].compute = 6.0;
  Simulation sim(c, task, p);
  const RoundReport r = sim.run_round();
  EXPECT_EQ(r.compute_time, 6.0);
  EXPECT_EQ(r.aggregated.size(), 2u);
}

TEST(SimulationTest, OverCommitDiscardsSlowest) {
  auto task = small_task(60);
  SimConfig c = base_config();
  c.k = 30;
  c.over_commit = 1.3;
  auto p = mixed_profiles(60, 3);
  Simulation sim(c, task, p);
  for (int i = 0; i < 4; ++i) {
    const RoundReport r = sim.run_round();
    ASSERT_EQ(r.participants.size(), 39u);
    ASSERT_EQ(r.aggregated.size(), 30u);
    ASSERT_EQ(r.dropped.size(), 9u);
    EXPECT_FALSE(r.short_round);
    double max_compute = 0.0;
    for (ClientId id : r.aggregated) {
      EXPECT_FALSE(std::binary_search(r.dropped.begin(), r.dropped.end(), id));
      max_compute = std::max(max_compute, p[static_cast<std::size_t>(id)].compute);
    }
    EXPECT_EQ(r.compute_time, max_compute);
  }
}

TEST(SimulationTest, DurationDecomposesAndLedgerBalances) {
  auto task = small_task(30);
  SimConfig c = base_config();
  Simulation sim(c, task, mixed_profiles(30, 4));
  std::vector<RoundReport> history;
  double clock = 0.0;
  for (int i = 0; i < 15; ++i) {
    history.push_back(sim.run_round());
    const RoundReport& r = history.back();
    EXPECT_EQ(r.duration, r.fetch_time + r.compute_time + r.upload_time);
    EXPECT_EQ(r.start_time, clock);
    EXPECT_EQ(r.round, i + 1);
    clock += r.duration;
  }
  EXPECT_EQ(sim.wall_clock(), clock);
  const Metrics m = finalize_metrics(history);
  std::uint64_t volume = 0;
  double tt = 0.0;
  for (const RoundReport& r : history) {
    volume += r.fetch_bytes + r.prefetch_bytes + r.upload_bytes;
    tt += r.duration;
  }
  EXPECT_EQ(m.total_volume, volume);
  EXPECT_EQ(m.total_volume, m.fetch_volume + m.prefetch_volume + m.upload_volume);
  EXPECT_EQ(m.total_time, tt);
  EXPECT_GT(m.prefetch_volume, 0u);
}

TEST(SimulationTest, NoPrefetchMeansNoPrefetchVolume) {
  auto task = small_task(20);
  SimConfig c = base_config();
  c.prefetch_rounds = 0;
  Simulation sim(c, task, mixed_profiles(20, 5));
  std::vector<RoundReport> history;
  for (int i = 0; i < 6; ++i) history.push_back(sim.run_round());
  const Metrics m = finalize_metrics(history);
  EXPECT_EQ(m.prefetch_volume, 0u);
  EXPECT_EQ(m.total_volume, m.fetch_volume + m.upload_volume);
}

std::vector<ParamVector> trajectory(SimConfig c, int rounds,
                                    const std::vector<ClientProfile>& p,
                                    std::vector<RoundReport>* reports = nullptr) {
  auto task = small_task(p.size(), 7);
  Simulation sim(c, task, p);
  std::vector<ParamVector> models;
  for (int i = 0; i < rounds; ++i) {
    RoundReport r = sim.run_round();
    models.push_back(sim.store().model(sim.next_round()));
    if (reports) reports->push_back(std::move(r));
  }
  return models;
}

TEST(SimulationTest, PrefetchDoesNotChangeModels) {
  const auto p = mixed_profiles(40, 6);
  SimConfig c = base_config();
  c.k = 6;
  c.prefetch_rounds = 0;
  const auto base = trajectory(c, 25, p);
  for (std::int64_t r : {1, 3, 5}) {
    c.prefetch_rounds = r;
    EXPECT_EQ(trajectory(c, 25, p), base) << "R=" << r;
  }
  c.scheduler = SchedulerMode::kFixed;
  c.fixed_window = 2;
  EXPECT_EQ(trajectory(c, 25, p), base);
  c.scheduler = SchedulerMode::kNone;
  EXPECT_EQ(trajectory(c, 25, p), base);
}

TEST(SimulationTest, FetchTimeNeverWorseWithEqualLinks) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto p = profiles(30, 25.0, 10.0, 4.0);
    RngStream rng(seed);
    for (auto& prof : p) prof.compute = 4.0 * std::exp(0.5 * rng.normal());
    SimConfig c = base_config();
    c.seed = seed;
    c.prefetch_rounds = 0;
    std::vector<RoundReport> base, pre;
    trajectory(c, 20, p, &base);
    c.prefetch_rounds = 3;
    trajectory(c, 20, p, &pre);
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_LE(pre[i].fetch_time, base[i].fetch_time) << "seed " << seed << " round " << i + 1;
    }
  }
}

TEST(SimulationTest, SamplesWeightingRuns) {
  auto task = small_task(10);
  SimConfig c = base_config();
  c.weighting = Weighting::kSamples;
  c.eval_every = 2;
  Simulation sim(c, task, mixed_profiles(10, 8));
  const RoundReport r1 = sim.run_round();
  const RoundReport r2 = sim.run_round();
  EXPECT_FALSE(r1.accuracy.has_value());
  ASSERT_TRUE(r2.accuracy.has_value());
  EXPECT_GE(*r2.accuracy, 0.0);
  EXPECT_LE(*r2.accuracy, 1.0);
  EXPECT_TRUE(sim.store().model(3).all_finite());
}

TEST(SimulationTest, SchedulesArePendingForFutureRounds) {
  auto task = small_task(30);
  SimConfig c = base_config();
  Simulation sim(c, task, mixed_profiles(30, 9));
  // Warm-up cohorts are drawn at their own round, so after three rounds the
  // cohorts of rounds 4, 5 and 6 are waiting.
  for (int r = 0; r < 3; ++r) sim.run_round();
  std::vector<std::int64_t> pending;
  for (const auto& [round, plan] : sim.plans()) pending.push_back(round);
  EXPECT_EQ(pending, (std::vector<std::int64_t>{4, 5, 6}));
  for (const auto& [round, plan] : sim.plans()) {
    EXPECT_EQ(plan.cohort.size(), 7u);
    for (ClientId id : plan.cohort) {
      const auto& a = sim.client(id).assignments;
      ASSERT_TRUE(a.count(round));
      EXPECT_LE(a.at(round), round);
    }
  }
  EXPECT_TRUE(sim.estimator().initialized());
}

AvailabilityMap offline_after(double seconds, const std::vector<ClientId>& leaving) {
  AvailabilityMap m;
  for (ClientId id : leaving) m[id] = AvailabilityTrace({{0.0, seconds}});
  return m;
}

TEST(SimulationTest, OfflineMembersAreDroppedWithoutReplacement) {
  auto task = small_task(20);
  SimConfig c = base_config();
  c.availability = AvailabilityMode::kTrace;
  std::vector<ClientId> leaving;
  for (ClientId i = 0; i < 10; ++i) leaving.push_back(i);
  Simulation sim(c, task, mixed_profiles(20, 10), offline_after(1e-9, leaving));
  for (int i = 0; i < 8; ++i) {
    const RoundReport r = sim.run_round();
    EXPECT_TRUE(r.replaced.empty());
    if (i == 0) continue;  // everyone is online at time 0
    for (ClientId id : r.participants) EXPECT_GE(id, 10);
  }
}

TEST(SimulationTest, OfflineMembersAreReplaced) {
  auto task = small_task(20);
  SimConfig c = base_config();
  c.availability = AvailabilityMode::kTraceReplace;
  std::vector<ClientId> leaving;
  for (ClientId i = 0; i < 10; ++i) leaving.push_back(i);
  // Everyone is online for round 1; half the population leaves right after.
  Simulation sim(c, task, mixed_profiles(20, 10), offline_after(1e-9, leaving));
  std::size_t replaced = 0;
  for (int i = 0; i < 8; ++i) {
    const RoundReport r = sim.run_round();
    replaced += r.replaced.size();
    if (i == 0) continue;
    for (ClientId id : r.participants) EXPECT_GE(id, 10);
    for (ClientId id : r.replaced) EXPECT_GE(id, 10);
    EXPECT_EQ(r.participants.size(), 7u);
  }
  EXPECT_GT(replaced, 0u);
}

TEST(SimulationTest, EmptyRoundStillAdvancesClock) {
  auto task = small_task(4);
  SimConfig c = base_config();
  c.k = 2;
  c.over_commit = 1.0;
  c.availability = AvailabilityMode::kTrace;
  // Nobody is ever online.
  AvailabilityMap m;
  for (ClientId i = 0; i < 4; ++i) m[i] = AvailabilityTrace({{1e9, 2e9}});
  Simulation sim(c, task, profiles(4, 10, 10, 1), m);
  const RoundReport r = sim.run_round();
  EXPECT_TRUE(r.participants.empty());
  EXPECT_TRUE(r.short_round);
  EXPECT_EQ(r.duration, 0.0);
  EXPECT_EQ(sim.wall_clock(), 1.0);
  EXPECT_EQ(sim.store().model(2), sim.store().model(1));
}

}  // namespace
}  // namespace fedfetch
