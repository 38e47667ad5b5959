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
#include <limits>
#include <string_view>

namespace fedfetch {

/// Counter-based random stream.
///
/// A stream is a 64-bit key plus a draw counter; the i-th draw is a pure
/// function of (key, i). Child streams are derived from the key alone with
/// fork(), so a simulation can key every random decision by
/// (seed, round, client, purpose) and never depend on the order in which
/// the decisions are made. All distributions are implemented here rather
/// than through <random> so sequences are identical across standard
/// libraries.
class RngStream {
 public:
  using result_type = std::uint64_t;

  /// Client id used for streams that belong to the server.
  static constexpr std::int64_t kServer = -1;

  explicit RngStream(std::uint64_t seed);

  RngStream fork(std::int64_t round, std::int64_t client,
                 std::string_view tag) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open_left();
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal (Box-Muller, one draw per call).
  double normal();
  /// Gamma(shape, 1) by Marsaglia-Tsang.
  double gamma(double shape);

  std::uint64_t key() const { return key_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() { return next_u64(); }

 private:
  RngStream(std::uint64_t key, std::uint64_t counter)
      : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_;
};

/// 64-bit FNV-1a, used to fold purpose tags into stream keys.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace fedfetch
