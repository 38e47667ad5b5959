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

#include "fedfetch/simulation.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>

namespace fedfetch {

std::string_view to_string(SchedulerMode mode) {
  switch (mode) {
    case SchedulerMode::kFedFetch: return "fedfetch";
    case SchedulerMode::kFixed: return "fixed";
    case SchedulerMode::kNone: return "none";
  }
  return "?";
}

std::string_view to_string(AvailabilityMode mode) {
  switch (mode) {
    case AvailabilityMode::kFull: return "full";
    case AvailabilityMode::kTrace: return "trace";
    case AvailabilityMode::kTraceReplace: return "trace+replace";
  }
  return "?";
}

std::string_view to_string(Weighting w) {
  return w == Weighting::kUniform ? "uniform" : "samples";
}

SchedulerMode parse_scheduler_mode(std::string_view name) {
  if (name == "fedfetch") return SchedulerMode::kFedFetch;
  if (name == "fixed") return SchedulerMode::kFixed;
  if (name == "none") return SchedulerMode::kNone;
  throw std::invalid_argument("unknown scheduler '" + std::string(name) +
                              "' (expected fedfetch, fixed or none)");
}

AvailabilityMode parse_availability_mode(std::string_view name) {
  if (name == "full") return AvailabilityMode::kFull;
  if (name == "trace") return AvailabilityMode::kTrace;
  if (name == "trace+replace") return AvailabilityMode::kTraceReplace;
  throw std::invalid_argument("unknown availability '" + std::string(name) +
                              "' (expected full, trace or trace+replace)");
}

Weighting parse_weighting(std::string_view name) {
  if (name == "uniform") return Weighting::kUniform;
  if (name == "samples") return Weighting::kSamples;
  throw std::invalid_argument("unknown weighting '" + std::string(name) +
                              "' (expected uniform or samples)");
}

void SimConfig::validate(std::size_t num_clients) const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (k < 1 || k > num_clients) fail("k", "must satisfy 1 <= k <= clients");
  if (!(over_commit >= 1.0)) fail("over_commit", "must be >= 1");
  if (prefetch_rounds < 0) fail("prefetch_rounds", "must be >= 0");
  if (!(beta >= 0.0)) fail("beta", "must be >= 0");
  if (1.0 + beta > over_commit + 1e-12) fail("beta", "1 + beta must not exceed over_commit");
  if (!(alpha > 0.0 && alpha <= 1.0)) fail("alpha", "must be in (0, 1]");
  if (scheduler == SchedulerMode::kFixed && fixed_window < 1) {
    fail("fixed_window", "must be >= 1");
  }
  if (train.local_steps < 0) fail("local_steps", "must be >= 0");
  if (train.batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(learning_rate >= 0.0)) fail("learning_rate", "must be >= 0");
  if (!(lr_decay > 0.0)) fail("lr_decay", "must be > 0");
  if (eval_every < 0) fail("eval_every", "must be >= 0");
  try {
    downlink.validate();
  } catch (const std::invalid_argument& e) {
    fail("downlink", e.what());
  }
  try {
    uplink.validate();
  } catch (const std::invalid_argument& e) {
    fail("uplink", e.what());
  }
}

std::int64_t SimConfig::horizon() const {
  switch (scheduler) {
    case SchedulerMode::kFedFetch: return prefetch_rounds;
    case SchedulerMode::kFixed: return std::max(prefetch_rounds, fixed_window);
    case SchedulerMode::kNone: return 0;
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::optional<std::int64_t> ClientState::target() const {
  if (!queue.empty()) return queue.back().lands_at();
  return synced;
}

std::uint64_t ClientState::queued_bytes() const {
  std::uint64_t sum = 0;
  for (const DownloadItem& item : queue) sum += item.remaining;
  return sum;
}

bool ClientState::prefetching_at(std::int64_t round) const {
  for (const auto& [train_round, start] : assignments) {
    if (start <= round && round < train_round) return true;
  }
  return false;
}

void ClientState::reset() {
  synced.reset();
  queue.clear();
  phase = ClientPhase::kIdle;
}

std::uint64_t advance_prefetch(ClientState& client, double elapsed, double bw_dl,
                               ServerStore& store) {
  if (!(elapsed >= 0.0) || !(bw_dl > 0.0)) {
    throw std::invalid_argument("advance_prefetch: need elapsed >= 0 and bandwidth > 0");
  }
  std::uint64_t budget = static_cast<std::uint64_t>(std::floor(elapsed * bw_dl));
  std::uint64_t moved = 0;
  const std::int64_t newest = store.current_round();  // model available now
  client.phase = ClientPhase::kPrefetching;
  for (;;) {
    if (client.queue.empty()) {
      if (budget == 0) break;
      const auto at = client.target();
      if (!at) {
        const std::uint64_t bytes = store.combined_base(newest).second;
        client.queue.push_back({true, newest, RoundSpan{newest, newest - 1}, bytes, bytes});
      } else if (*at < newest) {
        CompressedUpdate cu = store.delta_range(*at, newest - 1);
        const std::uint64_t bytes = wire_size(cu);
        client.queue.push_back({false, 0, cu.span, bytes, bytes});
      } else {
        break;  // already holds the newest model
      }
    }
    DownloadItem& item = client.queue.front();
    const std::uint64_t take = std::min(budget, item.remaining);
    item.remaining -= take;
    budget -= take;
    moved += take;
    if (item.remaining > 0) break;
    client.synced = item.lands_at();
    client.queue.pop_front();
  }
  return moved;
}

std::uint64_t train_phase_fetch(ClientState& client, ServerStore& store) {
  const std::int64_t t = store.current_round();
  std::uint64_t bytes = client.queued_bytes();
  const auto at = client.target();
  client.queue.clear();
  if (!at) {
    bytes += store.combined_base(t).second;
  } else if (*at < t) {
    bytes += wire_size(store.delta_range(*at, t - 1));
  }
  client.synced = t;
  client.phase = ClientPhase::kTraining;
  return bytes;
}

Metrics finalize_metrics(std::span<const RoundReport> history) {
  if (history.empty()) throw std::invalid_argument("finalize_metrics: empty history");
  Metrics m;
  for (const RoundReport& r : history) {
    m.fetch_time += r.fetch_time;
    m.total_time += r.duration;
    m.fetch_volume += r.fetch_bytes;
    m.prefetch_volume += r.prefetch_bytes;
    m.upload_volume += r.upload_bytes;
    if (r.accuracy) m.accuracy.push_back(*r.accuracy);
  }
  m.total_volume = m.fetch_volume + m.prefetch_volume + m.upload_volume;
  m.rounds = static_cast<std::int64_t>(history.size());
  return m;
}

// ---------------------------------------------------------------------------

Simulation::Simulation(SimConfig cfg, std::shared_ptr<const SynthTask> task,
                       std::vector<ClientProfile> profiles, AvailabilityMap availability)
    : cfg_(std::move(cfg)),
      task_(std::move(task)),
      profiles_(std::move(profiles)),
      availability_(std::move(availability)),
      store_(ParamVector(task_ ? task_->model_dim() : 1), task_ ? task_->shape() : MatrixShape{},
             cfg_.downlink, cfg_.horizon() + 2, 1),
      estimator_(cfg_.alpha),
      root_(cfg_.seed) {
  if (!task_) throw std::invalid_argument("Simulation: task is null");
  if (profiles_.size() != task_->clients.size()) {
    throw std::invalid_argument("Simulation: one profile per task client required");
  }
  cfg_.validate(profiles_.size());
  clients_.resize(profiles_.size());
  for (std::size_t i = 0; i < profiles_.size(); ++i) {
    const ClientProfile& p = profiles_[i];
    if (p.id != static_cast<ClientId>(i)) {
      throw std::invalid_argument("Simulation: profile ids must be 0..N-1 in order");
    }
    if (!(p.bw_dl > 0.0) || !(p.bw_ul > 0.0)) {
      throw std::invalid_argument("Simulation: client " + std::to_string(i) +
                                  " bandwidth must be positive");
    }
    if (!(p.compute >= 0.0)) {
      throw std::invalid_argument("Simulation: client " + std::to_string(i) +
                                  " compute time must be >= 0");
    }
    if (!(p.weight >= 0.0)) {
      throw std::invalid_argument("Simulation: client " + std::to_string(i) +
                                  " weight must be >= 0");
    }
    clients_[i].id = p.id;
  }
}

const ClientState& Simulation::client(ClientId id) const {
  return clients_.at(static_cast<std::size_t>(id));
}

const ClientProfile& Simulation::profile(ClientId id) const {
  return profiles_.at(static_cast<std::size_t>(id));
}

bool Simulation::online(ClientId id, double at) const {
  if (cfg_.availability == AvailabilityMode::kFull) return true;
  auto it = availability_.find(id);
  return it == availability_.end() || it->second.online_at(at);
}

std::vector<ClientId> Simulation::online_clients(double at) const {
  std::vector<ClientId> out;
  out.reserve(profiles_.size());
  for (const ClientProfile& p : profiles_) {
    if (online(p.id, at)) out.push_back(p.id);
  }
  return out;
}

void Simulation::assign(const RoundPlan& plan, std::int64_t presample_round) {
  std::map<ClientId, std::int64_t> start;
  switch (cfg_.scheduler) {
    case SchedulerMode::kFedFetch: {
      if (presample_round == plan.train_round || plan.cohort.empty()) break;
      std::vector<double> bw;
      bw.reserve(plan.cohort.size());
      for (ClientId id : plan.cohort) bw.push_back(profile(id).bw_dl);
      ScheduleInputs in;
      in.cohort = plan.cohort;
      in.bandwidths = bw;
      in.presample_round = presample_round;
      in.train_round = plan.train_round;
      in.round_duration = estimator_.estimate();
      in.beta = cfg_.beta;
      in.over_commit = cfg_.over_commit;
      start = schedule_prefetch(in, span_sizes(store_.profiler()),
                                static_cast<double>(store_.profiler().base_model_size()))
                  .start;
      break;
    }
    case SchedulerMode::kFixed:
      for (ClientId id : plan.cohort) {
        start[id] = std::max(presample_round, plan.train_round - cfg_.fixed_window);
      }
      break;
    case SchedulerMode::kNone:
      break;
  }
  for (ClientId id : plan.cohort) {
    auto it = start.find(id);
    const std::int64_t p = it == start.end() ? plan.train_round : it->second;
    clients_[static_cast<std::size_t>(id)].assignments[plan.train_round] = p;
  }
  plans_[plan.train_round] = plan;
}

void Simulation::prepare(std::int64_t t, const std::vector<ClientId>& online_now) {
  const std::int64_t h = cfg_.horizon();
  // The cohort of a train round is keyed by that round alone, so it does not
  // depend on how far ahead it is drawn.
  auto draw = [&](std::int64_t train_round) {
    return presample(train_round, online_now, cfg_.k, cfg_.over_commit,
                     root_.fork(train_round, RngStream::kServer, "presample"));
  };
  if (h == 0 || t <= h) assign(draw(t), t);
  if (h > 0) assign(draw(t + h), t);
}

void Simulation::drop_assignment(ClientId id, std::int64_t train_round, std::int64_t now) {
  ClientState& c = clients_[static_cast<std::size_t>(id)];
  c.assignments.erase(train_round);
  if (!c.prefetching_at(now)) c.reset();
}

void Simulation::replace_offline_members(std::int64_t t,
                                         const std::vector<ClientId>& online_now,
                                         RoundReport& report) {
  for (auto& [train_round, plan] : plans_) {
    if (train_round < t) continue;
    // Members whose prefetch has not started yet are not checked.
    std::vector<ClientId> visible = online_now;
    for (ClientId id : plan.cohort) {
      if (clients_[static_cast<std::size_t>(id)].assignments.at(train_round) > t) {
        visible.push_back(id);
      }
    }
    std::sort(visible.begin(), visible.end());
    visible.erase(std::unique(visible.begin(), visible.end()), visible.end());

    RoundPlan before = plan;
    before.replaced.clear();
    RoundPlan after =
        replace_offline(before, visible, root_.fork(t, train_round, "replace"));
    if (after.cohort == plan.cohort) continue;
    for (ClientId id : plan.cohort) {
      if (!after.contains(id)) drop_assignment(id, train_round, t);
    }
    for (ClientId id : after.replaced) {
      clients_[static_cast<std::size_t>(id)].assignments[train_round] = t;
      report.replaced.push_back(id);
    }
    after.replaced.insert(after.replaced.begin(), plan.replaced.begin(),
                          plan.replaced.end());
    plan = std::move(after);
  }
}

RoundReport Simulation::run_round() {
  const std::int64_t t = store_.current_round();
  RoundReport report;
  report.round = t;
  report.start_time = clock_;
  const std::vector<ClientId> online_now = online_clients(clock_);

  // Prepare.
  prepare(t, online_now);
  if (cfg_.availability == AvailabilityMode::kTraceReplace) {
    replace_offline_members(t, online_now, report);
  }

  // Train phase.
  RoundPlan plan = std::move(plans_.at(t));
  plans_.erase(t);
  const ParamVector& model = store_.model(t);
  const double lr = learning_rate_at(cfg_.learning_rate, cfg_.lr_decay,
                                     cfg_.lr_decay_every, t);
  struct Result {
    ClientId id;
    double fetch, compute, upload;
    ParamVector update;
  };
  std::vector<Result> results;
  for (ClientId id : plan.cohort) {
    ClientState& c = clients_[static_cast<std::size_t>(id)];
    if (!online(id, clock_)) {
      report.dropped.push_back(id);
      drop_assignment(id, t, t);
      continue;
    }
    const ClientProfile& prof = profile(id);
    const std::uint64_t fetched = train_phase_fetch(c, store_);
    ParamVector local = local_train(model, task_->clients[static_cast<std::size_t>(id)],
                                    cfg_.train, lr, root_.fork(t, id, "train"));
    RngStream ul_rng = root_.fork(t, id, "ul");
    CompressedUpdate cu =
        compress(cfg_.uplink, axpy(local, -1.0, model), store_.shape(), ul_rng, {t, t});
    const std::uint64_t uploaded = wire_size(cu);
    report.participants.push_back(id);
    report.fetch_bytes += fetched;
    report.upload_bytes += uploaded;
    results.push_back({id, static_cast<double>(fetched) / prof.bw_dl, prof.compute,
                       static_cast<double>(uploaded) / prof.bw_ul, decompress(cu)});
    c.assignments.erase(t);
    // The synced model carries over only into a schedule that has already
    // started; a later schedule begins with its own base download.
    if (c.prefetching_at(t)) {
      c.phase = ClientPhase::kIdle;
    } else {
      c.reset();
    }
  }

  std::sort(report.participants.begin(), report.participants.end());

  // Keep the K fastest finishers.
  std::sort(results.begin(), results.end(), [](const Result& a, const Result& b) {
    return std::tuple(a.fetch + a.compute + a.upload, a.id) <
           std::tuple(b.fetch + b.compute + b.upload, b.id);
  });
  if (results.size() > cfg_.k) {
    for (std::size_t i = cfg_.k; i < results.size(); ++i) {
      report.dropped.push_back(results[i].id);
    }
    results.erase(results.begin() + static_cast<std::ptrdiff_t>(cfg_.k), results.end());
  }
  report.short_round = results.size() < cfg_.k;
  std::sort(results.begin(), results.end(),
            [](const Result& a, const Result& b) { return a.id < b.id; });
  for (const Result& r : results) {
    report.aggregated.push_back(r.id);
    report.fetch_time = std::max(report.fetch_time, r.fetch);
    report.compute_time = std::max(report.compute_time, r.compute);
    report.upload_time = std::max(report.upload_time, r.upload);
  }
  std::sort(report.dropped.begin(), report.dropped.end());
  report.duration = report.fetch_time + report.compute_time + report.upload_time;

  ParamVector aggregate(store_.dim());
  if (!results.empty()) {
    std::vector<ParamVector> updates;
    std::vector<double> weights;
    double total = 0.0;
    for (const Result& r : results) {
      const double w = cfg_.weighting == Weighting::kUniform
                           ? 1.0
                           : static_cast<double>(
                                 task_->clients[static_cast<std::size_t>(r.id)].size()) *
                                 profile(r.id).weight;
      updates.push_back(r.update);
      weights.push_back(w);
      total += w;
    }
    if (total > 0.0) {
      for (double& w : weights) w /= total;
      aggregate = weighted_sum(updates, weights);
    }
  }

  // Prefetch progress while the round runs.
  for (ClientState& c : clients_) {
    if (std::binary_search(report.participants.begin(), report.participants.end(), c.id)) {
      continue;
    }
    if (!c.prefetching_at(t) || !online(c.id, clock_)) continue;
    report.prefetch_bytes +=
        advance_prefetch(c, report.duration, profile(c.id).bw_dl, store_);
  }

  RngStream dl_rng = root_.fork(t, RngStream::kServer, "dl");
  store_.commit_round(aggregate, dl_rng);
  if (report.duration > 0.0) estimator_ = estimator_.update(report.duration);
  // A round nobody finished still lets wall-clock time pass so churn traces move.
  clock_ += report.duration > 0.0 ? report.duration : std::max(1.0, estimator_.estimate());

  if (cfg_.eval_every > 0 && t % cfg_.eval_every == 0) {
    report.accuracy = accuracy(store_.model(t + 1), task_->test);
  }
  return report;
}

}  // namespace fedfetch
