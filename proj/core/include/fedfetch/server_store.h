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
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "fedfetch/compress.h"
#include "fedfetch/param_vector.h"
#include "fedfetch/rng.h"

namespace fedfetch {

/// Thrown when a round outside the retention window is requested.
class RetentionError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Running mean of observed download sizes, keyed by how many rounds the
/// accumulated update covers.
///
/// Before a span length has been observed, profiled_size() answers from the
/// analytic size of the downlink compressor so the scheduler has numbers
/// from the very first round. For masking compressors the answer is clamped
/// to be non-decreasing in the span length.
class SizeProfiler {
 public:
  SizeProfiler(CompressorConfig cfg, std::size_t dim, MatrixShape shape);

  void record(std::int64_t span, std::uint64_t bytes);

  /// Mean observed size for `span` rounds, with analytic fallback. Span 0 is 0.
  double profiled_size(std::int64_t span) const;
  /// Analytic size ignoring observations.
  double analytic_size(std::int64_t span) const;

  std::uint64_t base_model_size() const { return dense_size(dim_); }
  std::uint64_t observations(std::int64_t span) const;

 private:
  double raw_size(std::int64_t span) const;

  CompressorConfig cfg_;
  std::size_t dim_;
  MatrixShape shape_;
  struct Mean {
    double sum = 0.0;
    std::uint64_t count = 0;
  };
  std::map<std::int64_t, Mean> by_span_;
};

/// Server-side model timeline.
///
/// models(t) is the server model at the start of round t. Committing round t
/// stores C_dl(delta_t) and sets models(t+1) = models(t) + decompress(C_dl(delta_t)).
/// Only the newest `retention` rounds of deltas (and the models at their
/// boundaries) are kept.
///
/// Single writer: commit_round() must not race with readers.
class ServerStore {
 public:
  ServerStore(ParamVector initial, MatrixShape shape, CompressorConfig dl,
              std::int64_t retention, std::int64_t first_round = 0);

  std::int64_t current_round() const { return current_; }
  std::size_t dim() const { return dim_; }
  const MatrixShape& shape() const { return shape_; }
  const CompressorConfig& downlink() const { return dl_; }
  std::int64_t retention() const { return retention_; }

  const ParamVector& model(std::int64_t round) const;
  const CompressedUpdate& delta(std::int64_t round) const;

  /// Compresses and applies the aggregated update for the current round,
  /// then advances the round. Returns the stored compressed delta.
  const CompressedUpdate& commit_round(const ParamVector& aggregated, RngStream& rng);

  /// Accumulated compressed updates of rounds t1..t2 and records the
  /// download size with the profiler. t1 == t2 + 1 gives the zero update.
  CompressedUpdate delta_range(std::int64_t t1, std::int64_t t2);
  /// As delta_range() without touching the profiler.
  CompressedUpdate peek_range(std::int64_t t1, std::int64_t t2) const;

  /// The dense model of round p and its download size.
  std::pair<const ParamVector&, std::uint64_t> combined_base(std::int64_t p) const;

  SizeProfiler& profiler() { return profiler_; }
  const SizeProfiler& profiler() const { return profiler_; }

 private:
  void evict();

  std::size_t dim_;
  MatrixShape shape_;
  CompressorConfig dl_;
  std::int64_t retention_;
  std::int64_t current_;
  std::map<std::int64_t, ParamVector> models_;
  std::map<std::int64_t, CompressedUpdate> deltas_;
  SizeProfiler profiler_;
};

}  // namespace fedfetch
