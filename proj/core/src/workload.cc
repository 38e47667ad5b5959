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

#include "fedfetch/workload.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>

namespace fedfetch {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Calls fn(row_number, fields) for each non-blank data line. The first
// non-blank line is skipped if `is_header` says so.
template <class IsHeader, class Fn>
void for_each_row(std::istream& in, IsHeader is_header, Fn fn) {
  std::string line;
  std::size_t row = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    auto fields = split_fields(view);
    if (first) {
      first = false;
      if (is_header(fields)) continue;
    }
    fn(row, fields);
  }
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace file " + path.string());
  return in;
}

}  // namespace

std::vector<LinkRates> parse_bandwidth_csv(std::istream& in) {
  std::vector<LinkRates> rows;
  auto is_header = [](const std::vector<std::string_view>& f) {
    double tmp;
    return !f.empty() && !parse_double(f[0], tmp);
  };
  for_each_row(in, is_header, [&](std::size_t row, const auto& f) {
    LinkRates r;
    if (f.size() != 2 || !parse_double(f[0], r.download) ||
        !parse_double(f[1], r.upload)) {
      throw TraceError("bandwidth trace row " + std::to_string(row) +
                       ": expected two numeric columns download_mbps,upload_mbps");
    }
    if (r.download <= 0.0 || r.upload <= 0.0) {
      throw TraceError("bandwidth trace row " + std::to_string(row) +
                       ": rates must be positive");
    }
    rows.push_back(r);
  });
  if (rows.empty()) throw TraceError("bandwidth trace has no data rows");
  return rows;
}

std::vector<LinkRates> sample_bandwidth(std::span<const LinkRates> rows_mbps,
                                        RngStream rng, std::size_t n) {
  if (rows_mbps.empty()) throw TraceError("bandwidth trace has no data rows");
  std::vector<LinkRates> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LinkRates& r = rows_mbps[rng.uniform_int(rows_mbps.size())];
    out.push_back({r.download * kBytesPerSecPerMbps, r.upload * kBytesPerSecPerMbps});
  }
  return out;
}

std::vector<LinkRates> load_bandwidth(const std::filesystem::path& path, RngStream rng,
                                      std::size_t n) {
  auto in = open_or_throw(path);
  const auto rows = parse_bandwidth_csv(in);
  return sample_bandwidth(rows, rng, n);
}

std::vector<LinkRates> synth_bandwidth(const LognormalLinks& params, RngStream rng,
                                       std::size_t n) {
  if (!(params.median_download > 0.0) || !(params.upload_ratio > 0.0) ||
      params.sigma < 0.0 || params.upload_sigma < 0.0) {
    throw std::invalid_argument("synth_bandwidth: invalid lognormal parameters");
  }
  std::vector<LinkRates> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double down = params.median_download * std::exp(params.sigma * rng.normal());
    const double up =
        down * params.upload_ratio * std::exp(params.upload_sigma * rng.normal());
    out.push_back({down, up});
  }
  return out;
}

AvailabilityTrace::AvailabilityTrace(std::vector<std::pair<double, double>> intervals)
    : intervals_(std::move(intervals)) {
  std::sort(intervals_.begin(), intervals_.end());
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    if (!(intervals_[i].first < intervals_[i].second)) {
      throw TraceError("availability interval must have start < end");
    }
    if (i > 0 && intervals_[i].first < intervals_[i - 1].second) {
      throw TraceError("availability intervals overlap");
    }
  }
}

bool AvailabilityTrace::online_at(double second) const {
  if (intervals_.empty()) return true;
  // First interval starting after `second`; the one before it may contain it.
  auto it = std::upper_bound(
      intervals_.begin(), intervals_.end(), second,
      [](double s, const std::pair<double, double>& iv) { return s < iv.first; });
  if (it == intervals_.begin()) return false;
  --it;
  return second >= it->first && second < it->second;
}

AvailabilityMap parse_availability_csv(std::istream& in) {
  std::map<ClientId, std::vector<std::pair<double, double>>> raw;
  auto is_header = [](const std::vector<std::string_view>& f) {
    std::int64_t tmp;
    return !f.empty() && !parse_int(f[0], tmp);
  };
  for_each_row(in, is_header, [&](std::size_t row, const auto& f) {
    std::int64_t id;
    double start, end;
    if (f.size() != 3 || !parse_int(f[0], id) || !parse_double(f[1], start) ||
        !parse_double(f[2], end)) {
      throw TraceError("availability trace row " + std::to_string(row) +
                       ": expected client_id,start_s,end_s");
    }
    if (id < 0 || !(start < end)) {
      throw TraceError("availability trace row " + std::to_string(row) +
                       ": need client_id >= 0 and start_s < end_s");
    }
    raw[static_cast<ClientId>(id)].emplace_back(start, end);
  });
  AvailabilityMap out;
  for (auto& [id, intervals] : raw) {
    try {
      out.emplace(id, AvailabilityTrace(std::move(intervals)));
    } catch (const TraceError& e) {
      throw TraceError("availability trace client " + std::to_string(id) + ": " +
                       e.what());
    }
  }
  return out;
}

AvailabilityMap load_availability(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_availability_csv(in);
}

void write_availability_csv(std::ostream& out, const AvailabilityMap& traces) {
  out << "client_id,start_s,end_s\n";
  for (const auto& [id, trace] : traces) {
    for (const auto& [start, end] : trace.intervals()) {
      out << id << ',' << start << ',' << end << '\n';
    }
  }
}

AvailabilityMap synth_churn(std::size_t n, double horizon_seconds, double slot_seconds,
                            double offline_prob, RngStream rng) {
  if (!(slot_seconds > 0.0) || !(horizon_seconds > 0.0)) {
    throw std::invalid_argument("synth_churn: slot and horizon must be positive");
  }
  const auto slots = static_cast<std::size_t>(std::ceil(horizon_seconds / slot_seconds));
  AvailabilityMap out;
  for (std::size_t c = 0; c < n; ++c) {
    RngStream stream = rng.fork(0, static_cast<std::int64_t>(c), "churn");
    std::vector<std::pair<double, double>> intervals;
    for (std::size_t s = 0; s < slots; ++s) {
      if (stream.uniform() < offline_prob) continue;
      const double start = static_cast<double>(s) * slot_seconds;
      const double end = static_cast<double>(s + 1) * slot_seconds;
      if (!intervals.empty() && intervals.back().second == start) {
        intervals.back().second = end;
      } else {
        intervals.emplace_back(start, end);
      }
    }
    // A client offline for the whole horizon still needs a trace entry, so
    // give it one slot just past the horizon.
    if (intervals.empty()) {
      intervals.emplace_back(static_cast<double>(slots) * slot_seconds,
                             static_cast<double>(slots + 1) * slot_seconds);
    }
    out.emplace(static_cast<ClientId>(c), AvailabilityTrace(std::move(intervals)));
  }
  return out;
}

std::vector<double> synth_compute_times(std::size_t n, double median, double sigma,
                                        RngStream rng) {
  if (median < 0.0 || sigma < 0.0) {
    throw std::invalid_argument("synth_compute_times: negative parameter");
  }
  std::vector<double> out(n);
  for (double& t : out) t = median * std::exp(sigma * rng.normal());
  return out;
}

// ---------------------------------------------------------------------------

SynthTask gen_synth_task(const SynthTaskParams& params) {
  if (params.clients == 0 || params.classes == 0 || params.features == 0) {
    throw std::invalid_argument("gen_synth_task: clients, classes, features must be >= 1");
  }
  if (!(params.skew > 0.0)) throw std::invalid_argument("gen_synth_task: skew must be > 0");
  if (params.samples_per_client == 0) {
    throw std::invalid_argument("gen_synth_task: samples_per_client must be >= 1");
  }
  const std::size_t d = params.features;
  const std::size_t classes = params.classes;
  RngStream root(params.seed);

  SynthTask task;
  task.params = params;
  std::vector<double> means(classes * d);
  {
    RngStream rng = root.fork(0, RngStream::kServer, "class-means");
    const double scale = params.separation / std::sqrt(static_cast<double>(d));
    for (double& m : means) m = scale * rng.normal();
  }
  auto draw = [&](Dataset& ds, std::int32_t label, RngStream& rng) {
    for (std::size_t j = 0; j < d; ++j) {
      ds.x.push_back(means[static_cast<std::size_t>(label) * d + j] + rng.normal());
    }
    ds.y.push_back(label);
  };

  task.clients.resize(params.clients);
  task.class_mix.resize(params.clients);
  for (std::size_t c = 0; c < params.clients; ++c) {
    RngStream rng = root.fork(0, static_cast<std::int64_t>(c), "client-data");
    std::vector<double> mix(classes);
    double total = 0.0;
    for (double& w : mix) total += (w = rng.gamma(params.skew));
    if (total <= 0.0) {
      // Every gamma draw underflowed; fall back to one class.
      mix.assign(classes, 0.0);
      mix[rng.uniform_int(classes)] = 1.0;
      total = 1.0;
    }
    for (double& w : mix) w /= total;
    task.class_mix[c] = mix;

    Dataset& ds = task.clients[c];
    ds.features = d;
    ds.x.reserve(params.samples_per_client * d);
    for (std::size_t s = 0; s < params.samples_per_client; ++s) {
      double u = rng.uniform();
      std::size_t label = 0;
      while (label + 1 < classes && u >= mix[label]) u -= mix[label++];
      draw(ds, static_cast<std::int32_t>(label), rng);
    }
  }

  RngStream rng = root.fork(0, RngStream::kServer, "test-data");
  task.test.features = d;
  for (std::size_t s = 0; s < params.test_samples; ++s) {
    draw(task.test, static_cast<std::int32_t>(s % classes), rng);
  }
  return task;
}

double softmax_loss(const ParamVector& model, const Dataset& data,
                    std::span<const std::size_t> rows, std::span<double> grad) {
  const std::size_t d = data.features;
  const std::size_t stride = d + 1;
  const std::size_t classes = model.dim() / stride;
  if (classes * stride != model.dim()) {
    throw std::invalid_argument("softmax_loss: model dim does not match features");
  }
  if (!grad.empty() && grad.size() != model.dim()) {
    throw std::invalid_argument("softmax_loss: gradient buffer has wrong size");
  }
  if (rows.empty()) return 0.0;
  auto w = model.values();
  std::vector<double> logits(classes);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double loss = 0.0;
  for (std::size_t r : rows) {
    auto x = data.row(r);
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      const double* wc = w.data() + c * stride;
      double z = wc[d];
      for (std::size_t j = 0; j < d; ++j) z += wc[j] * x[j];
      logits[c] = z;
      peak = std::max(peak, z);
    }
    double norm = 0.0;
    for (double& z : logits) norm += (z = std::exp(z - peak));
    const auto label = static_cast<std::size_t>(data.y[r]);
    loss -= std::log(logits[label] / norm);
    if (grad.empty()) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      const double g = (logits[c] / norm - (c == label ? 1.0 : 0.0)) * inv_n;
      double* gc = grad.data() + c * stride;
      for (std::size_t j = 0; j < d; ++j) gc[j] += g * x[j];
      gc[d] += g;
    }
  }
  return loss * inv_n;
}

double softmax_loss(const ParamVector& model, const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return softmax_loss(model, data, rows, {});
}

ParamVector local_train(const ParamVector& model, const Dataset& data,
                        const LocalTrainParams& params, double learning_rate,
                        RngStream rng) {
  if (model.dim() % (data.features + 1) != 0) {
    throw std::invalid_argument("local_train: model dim does not match task");
  }
  ParamVector w = model;
  if (learning_rate == 0.0 || params.local_steps <= 0 || data.size() == 0) return w;

  const std::size_t n = data.size();
  const std::size_t batch = std::min(std::max<std::size_t>(params.batch_size, 1), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n;  // forces a shuffle before the first batch

  std::vector<double> grad(model.dim());
  std::vector<double> velocity(model.dim(), 0.0);
  std::vector<std::size_t> rows(batch);
  auto values = w.mutable_values();
  for (int step = 0; step < params.local_steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        for (std::size_t i = n - 1; i > 0; --i) {
          std::swap(order[i], order[rng.uniform_int(i + 1)]);
        }
        cursor = 0;
      }
      rows[b] = order[cursor++];
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    softmax_loss(w, data, rows, grad);
    for (std::size_t i = 0; i < values.size(); ++i) {
      velocity[i] = params.momentum * velocity[i] + grad[i];
      values[i] -= learning_rate * velocity[i];
    }
  }
  require_finite(w, "local_train");
  return w;
}

double accuracy(const ParamVector& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const std::size_t d = data.features;
  const std::size_t stride = d + 1;
  const std::size_t classes = model.dim() / stride;
  auto w = model.values();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    auto x = data.row(r);
    std::size_t best = 0;
    double best_z = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      const double* wc = w.data() + c * stride;
      double z = wc[d];
      for (std::size_t j = 0; j < d; ++j) z += wc[j] * x[j];
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    if (static_cast<std::int32_t>(best) == data.y[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double learning_rate_at(double initial, double decay, int every, std::int64_t round) {
  if (every <= 0) return initial;
  const auto steps = std::max<std::int64_t>(0, (round - 1) / every);
  return initial * std::pow(decay, static_cast<double>(steps));
}

}  // namespace fedfetch
