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
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedfetch/compress.h"
#include "fedfetch/sampling.h"
#include "fedfetch/scheduler.h"
#include "fedfetch/server_store.h"
#include "fedfetch/workload.h"

namespace fedfetch {

enum class SchedulerMode { kFedFetch, kFixed, kNone };
enum class AvailabilityMode { kFull, kTrace, kTraceReplace };
enum class Weighting { kUniform, kSamples };

std::string_view to_string(SchedulerMode mode);
std::string_view to_string(AvailabilityMode mode);
std::string_view to_string(Weighting w);
SchedulerMode parse_scheduler_mode(std::string_view name);
AvailabilityMode parse_availability_mode(std::string_view name);
Weighting parse_weighting(std::string_view name);

struct ClientProfile {
  ClientId id = 0;
  double bw_dl = 0.0;    // bytes/s
  double bw_ul = 0.0;    // bytes/s
  double compute = 0.0;  // seconds of local training per round
  double weight = 1.0;   // aggregation weight before renormalization
};

struct SimConfig {
  std::size_t k = 10;
  double over_commit = 1.0;
  std::int64_t prefetch_rounds = 0;  // R
  double beta = 0.0;
  double alpha = DurationEstimator::kDefaultAlpha;
  SchedulerMode scheduler = SchedulerMode::kFedFetch;
  std::int64_t fixed_window = 1;  // only for SchedulerMode::kFixed
  AvailabilityMode availability = AvailabilityMode::kFull;
  Weighting weighting = Weighting::kUniform;
  CompressorConfig downlink;
  CompressorConfig uplink;
  LocalTrainParams train;
  double learning_rate = 0.05;
  double lr_decay = 0.98;
  int lr_decay_every = 10;
  int eval_every = 1;  // 0 disables evaluation
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate(std::size_t num_clients) const;
  /// Rounds between presampling and training (0 when nothing is prefetched).
  std::int64_t horizon() const;
};

/// One queued download: either the dense model of `base_round` or the
/// accumulated delta over `span`.
struct DownloadItem {
  bool is_base = false;
  std::int64_t base_round = 0;
  RoundSpan span;
  std::uint64_t bytes = 0;
  std::uint64_t remaining = 0;

  /// Round whose model the client holds once this item lands.
  std::int64_t lands_at() const { return is_base ? base_round : span.last + 1; }
};

enum class ClientPhase { kIdle, kPrefetching, kTraining };

/// Download-side state of one client. The local model is tracked by the
/// round it matches: a client with `synced == r` holds the server model of
/// round r, which the engine reads from the store.
struct ClientState {
  ClientId id = 0;
  std::optional<std::int64_t> synced;
  std::deque<DownloadItem> queue;
  std::map<std::int64_t, std::int64_t> assignments;  // train round -> P
  ClientPhase phase = ClientPhase::kIdle;

  bool has_state() const { return synced.has_value() || !queue.empty(); }
  /// Model round held once the queue drains; nullopt without state.
  std::optional<std::int64_t> target() const;
  std::uint64_t queued_bytes() const;
  /// True if some assignment has P <= round < train round.
  bool prefetching_at(std::int64_t round) const;
  void reset();
};

/// Spends floor(elapsed * bw_dl) bytes on the client's download queue.
/// An empty queue is refilled greedily: the dense current model for a client
/// without state, else one accumulated delta up to the newest committed
/// round. Partial items carry over. Returns bytes moved.
std::uint64_t advance_prefetch(ClientState& client, double elapsed, double bw_dl,
                               ServerStore& store);

/// Train-phase download: whatever is still queued plus the delta from the
/// queue's landing round to the newest committed round (or the dense model
/// for a client without state). Leaves the client synced to the store's
/// current round. Returns bytes fetched.
std::uint64_t train_phase_fetch(ClientState& client, ServerStore& store);

struct RoundReport {
  std::int64_t round = 0;
  double start_time = 0.0;  // wall clock at round start
  double duration = 0.0;
  double fetch_time = 0.0;
  double compute_time = 0.0;
  double upload_time = 0.0;
  std::uint64_t fetch_bytes = 0;
  std::uint64_t prefetch_bytes = 0;
  std::uint64_t upload_bytes = 0;
  std::vector<ClientId> participants;
  std::vector<ClientId> aggregated;
  std::vector<ClientId> dropped;   // discarded by over-commitment or offline
  std::vector<ClientId> replaced;  // joined this round as replacements
  bool short_round = false;        // fewer than K updates aggregated
  std::optional<double> accuracy;
};

struct Metrics {
  double fetch_time = 0.0;  // FT
  double total_time = 0.0;  // TT
  std::uint64_t fetch_volume = 0;     // FV
  std::uint64_t prefetch_volume = 0;
  std::uint64_t upload_volume = 0;
  std::uint64_t total_volume = 0;     // TV
  std::int64_t rounds = 0;
  std::vector<double> accuracy;  // per evaluated round
};

/// Cumulative sums over `history`. Throws std::invalid_argument if empty.
Metrics finalize_metrics(std::span<const RoundReport> history);

/// Round-driven federated training with prefetch scheduling.
///
/// Per round t: presample and schedule the cohort of round t + horizon,
/// replace offline members, run the train phase for round t's cohort,
/// keep the K fastest updates, let scheduled clients prefetch for the
/// round's duration, then commit the aggregate and update the duration
/// estimate.
class Simulation {
 public:
  Simulation(SimConfig cfg, std::shared_ptr<const SynthTask> task,
             std::vector<ClientProfile> profiles, AvailabilityMap availability = {});

  RoundReport run_round();

  std::int64_t next_round() const { return store_.current_round(); }
  double wall_clock() const { return clock_; }
  const SimConfig& config() const { return cfg_; }
  const ServerStore& store() const { return store_; }
  const ClientState& client(ClientId id) const;
  const ClientProfile& profile(ClientId id) const;
  const DurationEstimator& estimator() const { return estimator_; }
  const std::map<std::int64_t, RoundPlan>& plans() const { return plans_; }

 private:
  std::vector<ClientId> online_clients(double at) const;
  bool online(ClientId id, double at) const;
  void prepare(std::int64_t t, const std::vector<ClientId>& online_now);
  void assign(const RoundPlan& plan, std::int64_t presample_round);
  void replace_offline_members(std::int64_t t, const std::vector<ClientId>& online_now,
                               RoundReport& report);
  void drop_assignment(ClientId id, std::int64_t train_round, std::int64_t now);

  SimConfig cfg_;
  std::shared_ptr<const SynthTask> task_;
  std::vector<ClientProfile> profiles_;
  AvailabilityMap availability_;
  ServerStore store_;
  DurationEstimator estimator_;
  std::vector<ClientState> clients_;
  std::map<std::int64_t, RoundPlan> plans_;  // pending cohorts by train round
  RngStream root_;
  double clock_ = 0.0;
};

}  // namespace fedfetch
