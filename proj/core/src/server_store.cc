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

#include "fedfetch/server_store.h"

#include <algorithm>
#include <cmath>
#include <vector>

namespace fedfetch {

SizeProfiler::SizeProfiler(CompressorConfig cfg, std::size_t dim, MatrixShape shape)
    : cfg_(cfg), dim_(dim), shape_(shape) {}

void SizeProfiler::record(std::int64_t span, std::uint64_t bytes) {
  if (span < 1) return;
  Mean& m = by_span_[span];
  m.sum += static_cast<double>(bytes);
  ++m.count;
}

std::uint64_t SizeProfiler::observations(std::int64_t span) const {
  auto it = by_span_.find(span);
  return it == by_span_.end() ? 0 : it->second.count;
}

double SizeProfiler::analytic_size(std::int64_t span) const {
  if (span <= 0) return 0.0;
  const double base = static_cast<double>(base_model_size());
  const double k = static_cast<double>(span);
  const auto dim = static_cast<double>(dim_);
  switch (cfg_.kind) {
    case CompressorKind::kTopK: {
      double single;
      auto it = by_span_.find(1);
      if (it != by_span_.end()) {
        single = it->second.sum / static_cast<double>(it->second.count);
      } else {
        const double kept =
            std::max(1.0, std::ceil(cfg_.ratio * dim - 1e-9));
        single = std::ceil(dim / 8.0) + 4.0 * std::min(kept, dim);
      }
      return std::min(base, k * single);
    }
    case CompressorKind::kQuant: {
      if (k * cfg_.bits >= 32.0) return base;
      const double seg = 4.0 + std::ceil(cfg_.bits * dim / 8.0);
      return std::min(k * seg, base);
    }
    case CompressorKind::kLowRank: {
      const double r = static_cast<double>(std::min<std::size_t>(
          static_cast<std::size_t>(cfg_.rank), std::min(shape_.rows, shape_.cols)));
      const double stacked =
          4.0 * k * r * static_cast<double>(shape_.rows + shape_.cols);
      return stacked > base ? base : stacked;
    }
    case CompressorKind::kIdentity:
      return base;
  }
  return base;
}

double SizeProfiler::raw_size(std::int64_t span) const {
  auto it = by_span_.find(span);
  if (it != by_span_.end() && it->second.count > 0) {
    return it->second.sum / static_cast<double>(it->second.count);
  }
  return analytic_size(span);
}

double SizeProfiler::profiled_size(std::int64_t span) const {
  if (span <= 0) return 0.0;
  if (cfg_.kind != CompressorKind::kTopK) return raw_size(span);
  // Union density only grows with the span, so clamp to a running maximum.
  double best = 0.0;
  for (std::int64_t k = 1; k <= span; ++k) best = std::max(best, raw_size(k));
  return best;
}

ServerStore::ServerStore(ParamVector initial, MatrixShape shape, CompressorConfig dl,
                         std::int64_t retention, std::int64_t first_round)
    : dim_(initial.dim()),
      shape_(shape),
      dl_(dl),
      retention_(retention),
      current_(first_round),
      profiler_(dl, initial.dim(), shape) {
  dl_.validate();
  if (shape_.size() != dim_) {
    throw std::invalid_argument("ServerStore: shape does not cover model dim");
  }
  if (retention_ < 1) throw std::invalid_argument("ServerStore: retention must be >= 1");
  require_finite(initial, "ServerStore initial model");
  models_.emplace(first_round, std::move(initial));
}

const ParamVector& ServerStore::model(std::int64_t round) const {
  auto it = models_.find(round);
  if (it == models_.end()) {
    throw RetentionError("model of round " + std::to_string(round) +
                         " is not retained (current " + std::to_string(current_) +
                         ")");
  }
  return it->second;
}

const CompressedUpdate& ServerStore::delta(std::int64_t round) const {
  auto it = deltas_.find(round);
  if (it == deltas_.end()) {
    throw RetentionError("delta of round " + std::to_string(round) +
                         " is not retained (current " + std::to_string(current_) +
                         ")");
  }
  return it->second;
}

const CompressedUpdate& ServerStore::commit_round(const ParamVector& aggregated,
                                                  RngStream& rng) {
  if (aggregated.dim() != dim_) {
    throw std::invalid_argument("commit_round: update dim " +
                                std::to_string(aggregated.dim()) + " != store dim " +
                                std::to_string(dim_));
  }
  const std::int64_t t = current_;
  CompressedUpdate cu = compress(dl_, aggregated, shape_, rng, RoundSpan{t, t});
  ParamVector next = axpy(models_.at(t), 1.0, decompress(cu));
  profiler_.record(1, wire_size(cu));
  auto [it, inserted] = deltas_.insert_or_assign(t, std::move(cu));
  models_.insert_or_assign(t + 1, std::move(next));
  current_ = t + 1;
  evict();
  return it->second;
}

void ServerStore::evict() {
  const std::int64_t oldest = current_ - retention_;
  std::erase_if(deltas_, [&](const auto& kv) { return kv.first < oldest; });
  std::erase_if(models_, [&](const auto& kv) { return kv.first < oldest; });
}

CompressedUpdate ServerStore::peek_range(std::int64_t t1, std::int64_t t2) const {
  if (t1 > t2 + 1) {
    throw std::invalid_argument("delta_range: t1 " + std::to_string(t1) +
                                " > t2 + 1 (" + std::to_string(t2 + 1) + ")");
  }
  if (t1 == t2 + 1) return zero_update(dim_, RoundSpan{t1, t2});
  if (t2 >= current_) {
    throw std::invalid_argument("delta_range: round " + std::to_string(t2) +
                                " is not committed yet");
  }
  std::vector<CompressedUpdate> parts;
  parts.reserve(static_cast<std::size_t>(t2 - t1 + 1));
  for (std::int64_t r = t1; r <= t2; ++r) parts.push_back(delta(r));
  if (parts.size() == 1) return std::move(parts.front());
  return accumulate(parts);
}

CompressedUpdate ServerStore::delta_range(std::int64_t t1, std::int64_t t2) {
  CompressedUpdate cu = peek_range(t1, t2);
  if (t1 <= t2) profiler_.record(t2 - t1 + 1, wire_size(cu));
  return cu;
}

std::pair<const ParamVector&, std::uint64_t> ServerStore::combined_base(
    std::int64_t p) const {
  return {model(p), dense_size(dim_)};
}

}  // namespace fedfetch
