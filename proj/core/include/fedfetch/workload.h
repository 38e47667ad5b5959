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
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedfetch/param_vector.h"
#include "fedfetch/rng.h"
#include "fedfetch/sampling.h"

namespace fedfetch {

/// Malformed trace input. The message names the offending row.
class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Bandwidth

inline constexpr double kBytesPerSecPerMbps = 125000.0;

/// Per-client link rates in bytes/s.
struct LinkRates {
  double download = 0.0;
  double upload = 0.0;
};

/// Parses `download_mbps,upload_mbps` rows (header optional) in Mbps.
std::vector<LinkRates> parse_bandwidth_csv(std::istream& in);

/// Loads a bandwidth CSV and draws `n` rows with replacement, converted to
/// bytes/s.
std::vector<LinkRates> load_bandwidth(const std::filesystem::path& path, RngStream rng,
                                      std::size_t n);
std::vector<LinkRates> sample_bandwidth(std::span<const LinkRates> rows_mbps,
                                        RngStream rng, std::size_t n);

/// Lognormal link rates: download has the given median and log-sigma, upload
/// is download * upload_ratio with its own lognormal jitter.
struct LognormalLinks {
  double median_download = 8000.0;  // bytes/s
  double sigma = 1.9;
  double upload_ratio = 0.25;
  double upload_sigma = 0.3;
};

std::vector<LinkRates> synth_bandwidth(const LognormalLinks& params, RngStream rng,
                                       std::size_t n);

// ---------------------------------------------------------------------------
// Availability

/// Online periods of one client as half-open [start, end) second offsets.
/// A client without intervals is always online.
class AvailabilityTrace {
 public:
  AvailabilityTrace() = default;
  explicit AvailabilityTrace(std::vector<std::pair<double, double>> intervals);

  bool online_at(double second) const;
  bool empty() const { return intervals_.empty(); }
  const std::vector<std::pair<double, double>>& intervals() const { return intervals_; }

 private:
  std::vector<std::pair<double, double>> intervals_;
};

using AvailabilityMap = std::map<ClientId, AvailabilityTrace>;

/// Parses `client_id,start_s,end_s` rows (header optional).
AvailabilityMap parse_availability_csv(std::istream& in);
AvailabilityMap load_availability(const std::filesystem::path& path);
void write_availability_csv(std::ostream& out, const AvailabilityMap& traces);

/// Slotted churn: in every slot of `slot_seconds`, each client is offline
/// independently with probability `offline_prob`.
AvailabilityMap synth_churn(std::size_t n, double horizon_seconds, double slot_seconds,
                            double offline_prob, RngStream rng);

/// Per-client seconds of local compute per round, lognormal around `median`.
std::vector<double> synth_compute_times(std::size_t n, double median, double sigma,
                                        RngStream rng);

// ---------------------------------------------------------------------------
// Synthetic learning task: multinomial logistic regression.

struct Dataset {
  std::size_t features = 0;
  std::vector<double> x;  // row-major, size() * features
  std::vector<std::int32_t> y;

  std::size_t size() const { return y.size(); }
  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * features, features};
  }
};

struct SynthTaskParams {
  std::size_t clients = 100;
  std::size_t classes = 10;
  std::size_t features = 199;
  double skew = 0.5;  // Dirichlet concentration of per-client class mix
  std::size_t samples_per_client = 50;
  std::size_t test_samples = 2000;
  double separation = 3.0;  // norm of each class mean
  std::uint64_t seed = 1;
};

struct SynthTask {
  SynthTaskParams params;
  std::vector<Dataset> clients;
  Dataset test;
  std::vector<std::vector<double>> class_mix;  // per client, sums to 1

  MatrixShape shape() const { return {params.classes, params.features + 1}; }
  std::size_t model_dim() const { return params.classes * (params.features + 1); }
};

/// Gaussian class clusters shared by all clients; each client's class mix is
/// drawn from a symmetric Dirichlet(skew). Large skew approaches iid, small
/// skew approaches single-class clients.
SynthTask gen_synth_task(const SynthTaskParams& params);

struct LocalTrainParams {
  int local_steps = 10;
  std::size_t batch_size = 20;
  double momentum = 0.9;
};

/// Mean softmax cross-entropy over `rows` of `data`; adds the gradient of
/// that mean into `grad` when non-empty. Model layout: classes x (features+1)
/// row-major, bias last.
double softmax_loss(const ParamVector& model, const Dataset& data,
                    std::span<const std::size_t> rows, std::span<double> grad);
double softmax_loss(const ParamVector& model, const Dataset& data);

/// Mini-batch SGD with heavy-ball momentum. Batch order is a pure function
/// of `rng`.
ParamVector local_train(const ParamVector& model, const Dataset& data,
                        const LocalTrainParams& params, double learning_rate,
                        RngStream rng);

double accuracy(const ParamVector& model, const Dataset& data);

/// initial * decay^floor((round - 1) / every), rounds counted from 1.
double learning_rate_at(double initial, double decay, int every, std::int64_t round);

}  // namespace fedfetch
