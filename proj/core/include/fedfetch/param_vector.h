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
#include <initializer_list>
#include <span>
#include <vector>

namespace fedfetch {

/// Flat 64-bit model or update vector. Every model-level quantity in the
/// simulator (server model, client model, aggregated update) is one of these.
///
/// The element count is fixed at construction and is always positive.
class ParamVector {
 public:
  explicit ParamVector(std::size_t dim, double fill = 0.0);
  explicit ParamVector(std::vector<double> values);
  ParamVector(std::initializer_list<double> values);

  std::size_t dim() const { return values_.size(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values() { return values_; }

  bool all_finite() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

/// Row-major a x b view of a parameter vector (used by low-rank compression).
struct MatrixShape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const MatrixShape&, const MatrixShape&) = default;
};

/// y + alpha * x. Throws std::invalid_argument on dimension mismatch.
ParamVector axpy(const ParamVector& y, double alpha, const ParamVector& x);

/// Elementwise sum of weights[i] * updates[i], accumulated left to right.
ParamVector weighted_sum(std::span<const ParamVector> updates,
                         std::span<const double> weights);

/// Throws std::domain_error if any element is NaN or infinite.
void require_finite(const ParamVector& v, const char* what);

}  // namespace fedfetch
