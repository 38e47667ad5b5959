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

#include "fedfetch/compress.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedfetch {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::int64_t quant_levels(int bits) {
  return (std::int64_t{1} << (bits - 1)) - 1;
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

std::size_t topk_count(double ratio, std::size_t dim) {
  // The epsilon absorbs representation error in products like 0.2 * 2000.
  const double raw = std::ceil(ratio * static_cast<double>(dim) - 1e-9);
  const auto k = static_cast<std::size_t>(std::max(1.0, raw));
  return std::min(k, dim);
}

CompressedUpdate compress_topk(double ratio, const ParamVector& update,
                               RoundSpan span) {
  const std::size_t dim = update.dim();
  const std::size_t k = topk_count(ratio, dim);
  auto v = update.values();

  std::vector<std::uint32_t> order(dim);
  std::iota(order.begin(), order.end(), 0u);
  auto by_magnitude = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    return ma > mb || (ma == mb && a < b);
  };
  if (k < dim) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                     order.end(), by_magnitude);
    order.resize(k);
  }
  std::sort(order.begin(), order.end());

  MaskedPayload mask;
  mask.indices.reserve(order.size());
  mask.values.reserve(order.size());
  for (std::uint32_t i : order) {
    const auto value = static_cast<float>(v[i]);
    if (value == 0.0f) continue;
    mask.indices.push_back(i);
    mask.values.push_back(value);
  }
  return {std::move(mask), dim, span};
}

CompressedUpdate compress_quant(int bits, const ParamVector& update, RngStream& rng,
                                RoundSpan span) {
  const std::size_t dim = update.dim();
  auto v = update.values();
  double max_abs = 0.0;
  for (double x : v) max_abs = std::max(max_abs, std::abs(x));

  // Round the wire scale up so |v_i| / scale never exceeds one.
  auto scale = static_cast<float>(max_abs);
  if (static_cast<double>(scale) < max_abs) {
    scale = std::nextafter(scale, std::numeric_limits<float>::infinity());
  }

  QuantSegment seg;
  seg.scale = scale;
  seg.bits = bits;
  seg.codes.assign(dim, 0);
  if (scale > 0.0f) {
    const auto levels = static_cast<double>(quant_levels(bits));
    const double inv = levels / static_cast<double>(scale);
    for (std::size_t i = 0; i < dim; ++i) {
      const double x = std::min(std::abs(v[i]) * inv, levels);
      const double lo = std::floor(x);
      double code = lo;
      // Round up with probability equal to the fractional part (unbiased).
      if (rng.uniform() < x - lo) code += 1.0;
      const auto c = static_cast<std::int32_t>(code);
      seg.codes[i] = v[i] < 0.0 ? -c : c;
    }
  }
  QuantizedPayload payload;
  payload.segments.push_back(std::move(seg));
  return {std::move(payload), dim, span};
}

CompressedUpdate compress_lowrank(int rank, const ParamVector& update,
                                  const MatrixShape& shape, RngStream& rng,
                                  RoundSpan span) {
  if (shape.size() != update.dim()) {
    throw std::invalid_argument("compress: matrix shape " +
                                std::to_string(shape.rows) + "x" +
                                std::to_string(shape.cols) +
                                " does not cover dim " +
                                std::to_string(update.dim()));
  }
  const std::size_t a = shape.rows;
  const std::size_t b = shape.cols;
  const std::size_t r =
      std::min<std::size_t>(static_cast<std::size_t>(rank), std::min(a, b));
  auto m = update.values();

  std::vector<double> q0(b * r);
  for (double& x : q0) x = rng.normal();

  // P = M * Q0, then modified Gram-Schmidt on the columns of P.
  std::vector<double> p(a * r, 0.0);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const double mij = m[i * b + j];
      if (mij == 0.0) continue;
      for (std::size_t c = 0; c < r; ++c) p[i * r + c] += mij * q0[j * r + c];
    }
  }
  for (std::size_t c = 0; c < r; ++c) {
    double before = 0.0;
    for (std::size_t i = 0; i < a; ++i) before += p[i * r + c] * p[i * r + c];
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < a; ++i) dot += p[i * r + prev] * p[i * r + c];
      for (std::size_t i = 0; i < a; ++i) p[i * r + c] -= dot * p[i * r + prev];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < a; ++i) norm += p[i * r + c] * p[i * r + c];
    norm = std::sqrt(norm);
    // A column that vanished under projection carries no new direction.
    const bool degenerate = norm == 0.0 || norm <= 1e-10 * std::sqrt(before);
    for (std::size_t i = 0; i < a; ++i) {
      p[i * r + c] = degenerate ? 0.0 : p[i * r + c] / norm;
    }
  }

  // Q = P^T * M.
  std::vector<double> q(r * b, 0.0);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t c = 0; c < r; ++c) {
      const double pic = p[i * r + c];
      if (pic == 0.0) continue;
      for (std::size_t j = 0; j < b; ++j) q[c * b + j] += pic * m[i * b + j];
    }
  }
  LowRankPayload lr{shape, r, std::move(p), std::move(q)};
  return {std::move(lr), update.dim(), span};
}

CompressedUpdate compress_identity(const ParamVector& update, RoundSpan span) {
  DensePayload dense;
  dense.values.reserve(update.dim());
  for (double x : update.values()) dense.values.push_back(static_cast<float>(x));
  return {std::move(dense), update.dim(), span};
}

void add_into(const CompressedUpdate& cu, std::vector<double>& out) {
  std::visit(
      Overloaded{
          [&](const MaskedPayload& m) {
            for (std::size_t k = 0; k < m.indices.size(); ++k) {
              out[m.indices[k]] += m.values[k];
            }
          },
          [&](const QuantizedPayload& q) {
            for (const QuantSegment& seg : q.segments) {
              if (seg.scale == 0.0f) continue;
              const double unit = static_cast<double>(seg.scale) /
                                  static_cast<double>(quant_levels(seg.bits));
              for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] += unit * seg.codes[i];
              }
            }
          },
          [&](const LowRankPayload& lr) {
            const std::size_t b = lr.shape.cols;
            for (std::size_t i = 0; i < lr.shape.rows; ++i) {
              for (std::size_t j = 0; j < b; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < lr.rank; ++c) {
                  acc += lr.p[i * lr.rank + c] * lr.q[c * b + j];
                }
                out[i * b + j] += acc;
              }
            }
          },
          [&](const DensePayload& d) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += d.values[i];
          },
          [](const EmptyPayload&) {},
      },
      cu.payload);
}

const char* kind_name(const UpdatePayload& p) {
  return std::visit(Overloaded{
                        [](const MaskedPayload&) { return "masked"; },
                        [](const QuantizedPayload&) { return "quantized"; },
                        [](const LowRankPayload&) { return "lowrank"; },
                        [](const DensePayload&) { return "dense"; },
                        [](const EmptyPayload&) { return "empty"; },
                    },
                    p);
}

CompressedUpdate dense_sum(std::span<const CompressedUpdate> parts, std::size_t dim,
                           RoundSpan span) {
  std::vector<double> acc(dim, 0.0);
  for (const CompressedUpdate& part : parts) add_into(part, acc);
  return {DensePayload{std::move(acc)}, dim, span};
}

}  // namespace

std::string_view to_string(CompressorKind kind) {
  switch (kind) {
    case CompressorKind::kTopK:
      return "topk";
    case CompressorKind::kQuant:
      return "quant";
    case CompressorKind::kLowRank:
      return "lowrank";
    case CompressorKind::kIdentity:
      return "identity";
  }
  return "unknown";
}

CompressorKind parse_compressor_kind(std::string_view name) {
  if (name == "topk") return CompressorKind::kTopK;
  if (name == "quant") return CompressorKind::kQuant;
  if (name == "lowrank") return CompressorKind::kLowRank;
  if (name == "identity" || name == "dense" || name == "none") {
    return CompressorKind::kIdentity;
  }
  throw std::invalid_argument("unknown compressor kind '" + std::string(name) + "'");
}

void CompressorConfig::validate() const {
  switch (kind) {
    case CompressorKind::kTopK:
      if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw std::invalid_argument("compressor ratio must be in (0, 1]");
      }
      break;
    case CompressorKind::kQuant:
      // Signed symmetric codes need at least one nonzero level.
      if (bits < 2 || bits > 32) {
        throw std::invalid_argument("compressor bits must be in [2, 32]");
      }
      break;
    case CompressorKind::kLowRank:
      if (rank < 1) throw std::invalid_argument("compressor rank must be >= 1");
      break;
    case CompressorKind::kIdentity:
      break;
  }
}

std::string CompressorConfig::describe() const {
  std::ostringstream os;
  os << to_string(kind);
  switch (kind) {
    case CompressorKind::kTopK:
      os << "(q=" << ratio << ")";
      break;
    case CompressorKind::kQuant:
      os << "(b=" << bits << ")";
      break;
    case CompressorKind::kLowRank:
      os << "(r=" << rank << ")";
      break;
    case CompressorKind::kIdentity:
      break;
  }
  return os.str();
}

void CompressedUpdate::validate() const {
  if (dim == 0) throw std::logic_error("CompressedUpdate: zero dim");
  std::visit(
      Overloaded{
          [&](const MaskedPayload& m) {
            if (m.indices.size() != m.values.size()) {
              throw std::logic_error("masked: index/value count mismatch");
            }
            for (std::size_t k = 0; k < m.indices.size(); ++k) {
              if (m.indices[k] >= dim || (k > 0 && m.indices[k] <= m.indices[k - 1])) {
                throw std::logic_error("masked: indices not strictly increasing in range");
              }
            }
          },
          [&](const QuantizedPayload& q) {
            for (const QuantSegment& seg : q.segments) {
              if (seg.codes.size() != dim) {
                throw std::logic_error("quantized: code count != dim");
              }
              if (seg.bits < 2 || seg.bits > 32) {
                throw std::logic_error("quantized: bad bit width");
              }
            }
          },
          [&](const LowRankPayload& lr) {
            if (lr.shape.size() != dim || lr.p.size() != lr.shape.rows * lr.rank ||
                lr.q.size() != lr.rank * lr.shape.cols) {
              throw std::logic_error("lowrank: factor shapes inconsistent");
            }
          },
          [&](const DensePayload& d) {
            if (d.values.size() != dim) throw std::logic_error("dense: size != dim");
          },
          [](const EmptyPayload&) {},
      },
      payload);
}

CompressedUpdate compress(const CompressorConfig& cfg, const ParamVector& update,
                          const MatrixShape& shape, RngStream& rng, RoundSpan span) {
  cfg.validate();
  require_finite(update, "compress");
  switch (cfg.kind) {
    case CompressorKind::kTopK:
      return compress_topk(cfg.ratio, update, span);
    case CompressorKind::kQuant:
      return compress_quant(cfg.bits, update, rng, span);
    case CompressorKind::kLowRank:
      return compress_lowrank(cfg.rank, update, shape, rng, span);
    case CompressorKind::kIdentity:
      return compress_identity(update, span);
  }
  throw std::logic_error("compress: unhandled kind");
}

ParamVector decompress(const CompressedUpdate& cu) {
  std::vector<double> out(cu.dim, 0.0);
  add_into(cu, out);
  return ParamVector(std::move(out));
}

ParamVector decompress(const CompressedUpdate& cu, std::size_t dim) {
  if (dim != cu.dim) {
    throw std::invalid_argument("decompress: dim " + std::to_string(dim) +
                                " does not match update dim " +
                                std::to_string(cu.dim));
  }
  return decompress(cu);
}

std::uint64_t dense_size(std::size_t dim) { return 4ULL * dim; }

CompressedUpdate zero_update(std::size_t dim, RoundSpan span) {
  return {EmptyPayload{}, dim, span};
}

std::uint64_t wire_size(const CompressedUpdate& cu) {
  const std::uint64_t dim = cu.dim;
  return std::visit(
      Overloaded{
          [&](const MaskedPayload& m) -> std::uint64_t {
            return ceil_div(dim, 8) + 4ULL * m.indices.size();
          },
          [&](const QuantizedPayload& q) -> std::uint64_t {
            std::uint64_t total = 0;
            for (const QuantSegment& seg : q.segments) {
              total += 4 + ceil_div(static_cast<std::uint64_t>(seg.bits) * dim, 8);
            }
            return total;
          },
          [&](const LowRankPayload& lr) -> std::uint64_t {
            return 4ULL * lr.rank * (lr.shape.rows + lr.shape.cols);
          },
          [&](const DensePayload&) -> std::uint64_t { return dense_size(dim); },
          [](const EmptyPayload&) -> std::uint64_t { return 0; },
      },
      cu.payload);
}

CompressedUpdate accumulate(std::span<const CompressedUpdate> parts) {
  if (parts.empty()) throw std::invalid_argument("accumulate: no parts");
  const std::size_t dim = parts.front().dim;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].dim != dim) throw std::invalid_argument("accumulate: dim mismatch");
    if (k > 0 && parts[k].span.first != parts[k - 1].span.last + 1) {
      throw std::invalid_argument("accumulate: spans are not contiguous (round " +
                                  std::to_string(parts[k - 1].span.last) +
                                  " then " + std::to_string(parts[k].span.first) +
                                  ")");
    }
  }
  const RoundSpan span{parts.front().span.first, parts.back().span.last};

  // Kind of the non-empty parts; dense absorbs everything.
  const UpdatePayload* kind = nullptr;
  bool any_dense = false;
  for (const CompressedUpdate& part : parts) {
    if (part.is_empty()) continue;
    if (std::holds_alternative<DensePayload>(part.payload)) {
      any_dense = true;
    } else if (kind == nullptr) {
      kind = &part.payload;
    } else if (kind->index() != part.payload.index()) {
      throw std::invalid_argument(std::string("accumulate: mixed kinds ") +
                                  kind_name(*kind) + " and " +
                                  kind_name(part.payload));
    }
  }
  if (any_dense) return dense_sum(parts, dim, span);
  if (kind == nullptr) return zero_update(dim, span);

  if (std::holds_alternative<MaskedPayload>(*kind)) {
    // k-way merge over sorted index lists, summing in part order.
    std::vector<double> acc(dim, 0.0);
    std::vector<char> present(dim, 0);
    for (const CompressedUpdate& part : parts) {
      if (part.is_empty()) continue;
      const auto& m = std::get<MaskedPayload>(part.payload);
      for (std::size_t k = 0; k < m.indices.size(); ++k) {
        acc[m.indices[k]] += m.values[k];
        present[m.indices[k]] = 1;
      }
    }
    MaskedPayload out;
    for (std::uint32_t i = 0; i < dim; ++i) {
      if (!present[i]) continue;
      out.indices.push_back(i);
      out.values.push_back(acc[i]);
    }
    return {std::move(out), dim, span};
  }

  if (std::holds_alternative<QuantizedPayload>(*kind)) {
    QuantizedPayload out;
    std::uint64_t bits_per_element = 0;
    for (const CompressedUpdate& part : parts) {
      if (part.is_empty()) continue;
      for (const QuantSegment& seg : std::get<QuantizedPayload>(part.payload).segments) {
        bits_per_element += static_cast<std::uint64_t>(seg.bits);
        out.segments.push_back(seg);
      }
    }
    CompressedUpdate combined{std::move(out), dim, span};
    if (bits_per_element >= 32 || wire_size(combined) > dense_size(dim)) {
      return dense_sum(parts, dim, span);
    }
    return combined;
  }

  // Low-rank: stack [P1 P2 ...] and [Q1; Q2; ...].
  const auto& first = std::get<LowRankPayload>(*kind);
  std::size_t total_rank = 0;
  for (const CompressedUpdate& part : parts) {
    if (part.is_empty()) continue;
    const auto& lr = std::get<LowRankPayload>(part.payload);
    if (!(lr.shape == first.shape)) {
      throw std::invalid_argument("accumulate: low-rank shape mismatch");
    }
    total_rank += lr.rank;
  }
  LowRankPayload out;
  out.shape = first.shape;
  out.rank = total_rank;
  const std::size_t rows = first.shape.rows;
  const std::size_t cols = first.shape.cols;
  if (4ULL * total_rank * (rows + cols) > dense_size(dim)) {
    return dense_sum(parts, dim, span);
  }
  out.p.assign(rows * total_rank, 0.0);
  out.q.reserve(total_rank * cols);
  std::size_t offset = 0;
  for (const CompressedUpdate& part : parts) {
    if (part.is_empty()) continue;
    const auto& lr = std::get<LowRankPayload>(part.payload);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t c = 0; c < lr.rank; ++c) {
        out.p[i * total_rank + offset + c] = lr.p[i * lr.rank + c];
      }
    }
    out.q.insert(out.q.end(), lr.q.begin(), lr.q.end());
    offset += lr.rank;
  }
  return {std::move(out), dim, span};
}

}  // namespace fedfetch
