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

#include "fedfetch/param_vector.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedfetch {

ParamVector::ParamVector(std::size_t dim, double fill) : values_(dim, fill) {
  if (dim == 0) {
    throw std::invalid_argument("ParamVector: dim must be positive");
  }
}

ParamVector::ParamVector(std::vector<double> values)
    : values_(std::move(values)) {
  if (values_.empty()) {
    throw std::invalid_argument("ParamVector: dim must be positive");
  }
}

ParamVector::ParamVector(std::initializer_list<double> values)
    : ParamVector(std::vector<double>(values)) {}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

void require_finite(const ParamVector& v, const char* what) {
  if (!v.all_finite()) {
    throw std::domain_error(std::string(what) + ": non-finite value");
  }
}

ParamVector axpy(const ParamVector& y, double alpha, const ParamVector& x) {
  if (x.dim() != y.dim()) {
    throw std::invalid_argument("axpy: dimension mismatch (" +
                                std::to_string(y.dim()) + " vs " +
                                std::to_string(x.dim()) + ")");
  }
  ParamVector out = y;
  auto dst = out.mutable_values();
  auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
  require_finite(out, "axpy");
  return out;
}

ParamVector weighted_sum(std::span<const ParamVector> updates,
                         std::span<const double> weights) {
  if (updates.empty()) {
    throw std::invalid_argument("weighted_sum: empty update list");
  }
  if (updates.size() != weights.size()) {
    throw std::invalid_argument("weighted_sum: weight count mismatch");
  }
  const std::size_t dim = updates.front().dim();
  ParamVector out(dim);
  auto dst = out.mutable_values();
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (updates[k].dim() != dim) {
      throw std::invalid_argument("weighted_sum: dimension mismatch");
    }
    auto src = updates[k].values();
    const double w = weights[k];
    for (std::size_t i = 0; i < dim; ++i) dst[i] += w * src[i];
  }
  require_finite(out, "weighted_sum");
  return out;
}

}  // namespace fedfetch
