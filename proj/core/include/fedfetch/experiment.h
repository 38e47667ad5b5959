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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedfetch/simulation.h"
#include "fedfetch/workload.h"

namespace fedfetch {

/// Invalid experiment configuration. field() names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& why);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Flat experiment description. Every member maps to a JSON key of the same
/// name; see README.md for the schema.
struct ExperimentConfig {
  // Federation.
  std::size_t clients = 100;
  std::size_t k = 10;
  double over_commit = 1.3;
  std::int64_t prefetch_rounds = 3;
  double beta = 0.0;
  double alpha = 0.125;
  std::int64_t rounds = 100;
  std::uint64_t seed = 1;
  std::string scheduler = "fedfetch";
  std::int64_t fixed_window = 1;
  std::string weighting = "uniform";

  // Compressors.
  std::string dl_compressor = "topk";
  double dl_ratio = 0.2;
  int dl_bits = 4;
  int dl_rank = 1;
  std::string ul_compressor = "topk";
  double ul_ratio = 0.2;
  int ul_bits = 4;
  int ul_rank = 1;

  // Learning task.
  std::size_t classes = 10;
  std::size_t features = 199;
  double skew = 0.5;
  std::size_t samples_per_client = 50;
  std::size_t test_samples = 2000;
  double separation = 3.0;
  int local_steps = 10;
  std::size_t batch_size = 20;
  double momentum = 0.9;
  double learning_rate = 0.05;
  double lr_decay = 0.98;
  int lr_decay_every = 10;
  int eval_every = 1;
  double target_accuracy = 0.0;  // 0 runs all rounds

  // Client profiles.
  std::string bandwidth_trace;  // empty: lognormal synthetic links
  double bw_median = 8000.0;    // bytes/s
  double bw_sigma = 1.9;
  double bw_upload_ratio = 0.25;
  double bw_upload_sigma = 0.3;
  double compute_median = 10.0;  // seconds
  double compute_sigma = 0.5;

  // Availability.
  std::string availability = "full";
  std::string availability_trace;  // empty: synthetic slotted churn
  double churn_offline_prob = 0.1;
  double churn_slot_seconds = 60.0;
  double churn_horizon_seconds = 1.0e6;

  std::string out_dir = "out";

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  SimConfig sim_config() const;
  SynthTaskParams task_params() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets one sweepable parameter ("R", "alpha", "beta" or "oc").
void set_parameter(ExperimentConfig& cfg, const std::string& name, double value);

/// Everything a run needs besides the config.
struct World {
  std::shared_ptr<const SynthTask> task;
  std::vector<ClientProfile> profiles;
  AvailabilityMap availability;
  std::string bandwidth_hash;     // git blob hash of the trace file or synthetic table
  std::string availability_hash;
};

World build_world(const ExperimentConfig& cfg);

/// SHA-1 of "blob <size>\0<content>", hex encoded.
std::string git_blob_hash(std::string_view content);

struct RunOutput {
  ExperimentConfig config;
  std::vector<RoundReport> rounds;
  Metrics metrics;
  std::optional<std::int64_t> rounds_to_target;
  std::string bandwidth_hash;
  std::string availability_hash;
};

/// Called after every round with the engine state and the round's report.
using RoundObserver = std::function<void(const Simulation&, const RoundReport&)>;

/// Runs `cfg.rounds` rounds, or stops early once the mean of the last five
/// evaluated accuracies reaches `cfg.target_accuracy`.
RunOutput run(const ExperimentConfig& cfg, const RoundObserver& observer = {});
RunOutput run(const ExperimentConfig& cfg, const World& world,
              const RoundObserver& observer = {});

/// Round at which the 5-round trailing mean first reaches `target`.
std::optional<std::int64_t> rounds_to_target(std::span<const RoundReport> rounds,
                                             double target);

void write_rounds_csv(std::ostream& out, std::span<const RoundReport> rounds);
nlohmann::json summary_json(const RunOutput& out);
/// Writes rounds.csv and summary.json into `dir`, creating it.
void write_run(const RunOutput& out, const std::filesystem::path& dir);

struct SweepRow {
  std::string label;  // parameter value or variant name
  RunOutput output;
};

/// One run per value of `param` with the shared seed. Writes each run into
/// `<out_dir>/<param>=<value>/` and the comparison table to sweep.csv.
std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const std::string& param,
                            std::span<const double> values, bool write = true);

/// Paired runs of fixed-1, fixed-R and fedfetch prefetching. Requires R >= 1.
std::vector<SweepRow> compare_naive(const ExperimentConfig& cfg, bool write = true);

void write_sweep_csv(std::ostream& out, const std::string& param,
                     std::span<const SweepRow> rows);

}  // namespace fedfetch
