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
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedfetch/param_vector.h"
#include "fedfetch/rng.h"

namespace fedfetch {

enum class CompressorKind { kTopK, kQuant, kLowRank, kIdentity };

std::string_view to_string(CompressorKind kind);
/// Accepts "topk", "quant", "lowrank", "identity" (also "dense", "none").
CompressorKind parse_compressor_kind(std::string_view name);

struct CompressorConfig {
  CompressorKind kind = CompressorKind::kIdentity;
  double ratio = 1.0;  // topk: kept fraction in (0, 1]
  int bits = 32;       // quant: bits per element in [2, 32]
  int rank = 1;        // lowrank: factor rank >= 1

  static CompressorConfig topk(double q) { return {CompressorKind::kTopK, q, 32, 1}; }
  static CompressorConfig quant(int b) { return {CompressorKind::kQuant, 1.0, b, 1}; }
  static CompressorConfig lowrank(int r) { return {CompressorKind::kLowRank, 1.0, 32, r}; }
  static CompressorConfig identity() { return {}; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::string describe() const;
};

/// Inclusive range of server rounds an update covers.
struct RoundSpan {
  std::int64_t first = 0;
  std::int64_t last = 0;

  std::int64_t length() const { return last - first + 1; }
  friend bool operator==(const RoundSpan&, const RoundSpan&) = default;
};

/// Kept positions plus values. Positions are strictly increasing. Values are
/// 32-bit on the wire; sums of several masked updates are kept at full
/// precision so decoding an accumulated mask matches summing its parts.
struct MaskedPayload {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
};

/// One stochastically quantized vector: value_i = scale * code_i / levels,
/// with levels = 2^(bits-1) - 1.
struct QuantSegment {
  float scale = 0.0f;
  int bits = 0;
  std::vector<std::int32_t> codes;
};

/// Sum of one or more quantized vectors, shipped as concatenated segments.
struct QuantizedPayload {
  std::vector<QuantSegment> segments;
};

/// M ~= P * Q with P (rows x rank) and Q (rank x cols), both row-major.
/// Accumulation stacks factors, so rank is the total over all parts.
struct LowRankPayload {
  MatrixShape shape;
  std::size_t rank = 0;
  std::vector<double> p;
  std::vector<double> q;
};

struct DensePayload {
  std::vector<double> values;
};

/// The zero update (e.g. an empty round range). Costs nothing on the wire.
struct EmptyPayload {};

using UpdatePayload = std::variant<MaskedPayload, QuantizedPayload,
                                   LowRankPayload, DensePayload, EmptyPayload>;

/// A compressed model update as it travels over the wire.
struct CompressedUpdate {
  UpdatePayload payload;
  std::size_t dim = 0;
  RoundSpan span;

  bool is_empty() const { return std::holds_alternative<EmptyPayload>(payload); }
  /// Checks the per-variant structural invariants; throws std::logic_error.
  void validate() const;
};

/// Compresses `update`. `shape` is only consulted by the low-rank family and
/// must cover update.dim(). `span` tags the result with the rounds it covers.
///
///   topk:     ceil(q * dim) largest |v| entries (ties -> lower index),
///             values cast to 32-bit; exact zeros are never shipped.
///   quant:    unbiased stochastic rounding onto signed symmetric levels with
///             one max-abs scale.
///   lowrank:  one power-iteration step from a Gaussian start.
///   identity: dense 32-bit copy.
CompressedUpdate compress(const CompressorConfig& cfg, const ParamVector& update,
                          const MatrixShape& shape, RngStream& rng,
                          RoundSpan span = {});

ParamVector decompress(const CompressedUpdate& cu);
/// Same as above but checks `dim` against the update's origin dimension.
ParamVector decompress(const CompressedUpdate& cu, std::size_t dim);

/// Sums a contiguous, ascending run of updates into one wire object.
///
/// Masked parts merge into the union mask. Quantized parts concatenate their
/// segments until the combined precision reaches 32 bits per element (or the
/// encoding outgrows a dense vector), then fall back to dense. Low-rank parts
/// stack factors with the same dense fallback. Any dense part makes the
/// result dense. Empty parts contribute nothing but still extend the span.
CompressedUpdate accumulate(std::span<const CompressedUpdate> parts);

/// Exact byte count of the encoding:
///   dense 4*dim; masked ceil(dim/8) bitmap + 4*nnz;
///   quantized sum over segments of 4 + ceil(bits*dim/8);
///   low-rank 4*rank*(rows+cols); empty 0.
std::uint64_t wire_size(const CompressedUpdate& cu);

std::uint64_t dense_size(std::size_t dim);

CompressedUpdate zero_update(std::size_t dim, RoundSpan span);

}  // namespace fedfetch
