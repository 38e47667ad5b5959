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

#include "fedfetch/experiment.h"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>
#include <set>
#include <sstream>

namespace fedfetch {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(std::string("cannot open ") + what + " " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class JsonReader {
 public:
  explicit JsonReader(const json& j) : j_(j) {
    if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const json& v = *it;
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(key, "expected a string");
      dst = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key, "expected a number");
      dst = v.get<double>();
    } else {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
          throw ConfigError(key, "must be >= 0");
        }
      }
      dst = v.get<T>();
    }
  }

  void reject_unknown() const {
    for (const auto& [key, value] : j_.items()) {
      if (!known_.count(key)) throw ConfigError(key, "unknown key");
    }
  }

 private:
  const json& j_;
  std::set<std::string> known_;
};

// Visits every config field with its JSON key, so parsing and echoing share
// one list.
template <class Cfg, class Fn>
void for_each_field(Cfg& c, Fn&& f) {
  f("clients", c.clients);
  f("k", c.k);
  f("over_commit", c.over_commit);
  f("prefetch_rounds", c.prefetch_rounds);
  f("beta", c.beta);
  f("alpha", c.alpha);
  f("rounds", c.rounds);
  f("seed", c.seed);
  f("scheduler", c.scheduler);
  f("fixed_window", c.fixed_window);
  f("weighting", c.weighting);
  f("dl_compressor", c.dl_compressor);
  f("dl_ratio", c.dl_ratio);
  f("dl_bits", c.dl_bits);
  f("dl_rank", c.dl_rank);
  f("ul_compressor", c.ul_compressor);
  f("ul_ratio", c.ul_ratio);
  f("ul_bits", c.ul_bits);
  f("ul_rank", c.ul_rank);
  f("classes", c.classes);
  f("features", c.features);
  f("skew", c.skew);
  f("samples_per_client", c.samples_per_client);
  f("test_samples", c.test_samples);
  f("separation", c.separation);
  f("local_steps", c.local_steps);
  f("batch_size", c.batch_size);
  f("momentum", c.momentum);
  f("learning_rate", c.learning_rate);
  f("lr_decay", c.lr_decay);
  f("lr_decay_every", c.lr_decay_every);
  f("eval_every", c.eval_every);
  f("target_accuracy", c.target_accuracy);
  f("bandwidth_trace", c.bandwidth_trace);
  f("bw_median", c.bw_median);
  f("bw_sigma", c.bw_sigma);
  f("bw_upload_ratio", c.bw_upload_ratio);
  f("bw_upload_sigma", c.bw_upload_sigma);
  f("compute_median", c.compute_median);
  f("compute_sigma", c.compute_sigma);
  f("availability", c.availability);
  f("availability_trace", c.availability_trace);
  f("churn_offline_prob", c.churn_offline_prob);
  f("churn_slot_seconds", c.churn_slot_seconds);
  f("churn_horizon_seconds", c.churn_horizon_seconds);
  f("out_dir", c.out_dir);
}

CompressorConfig make_compressor(const std::string& field, const std::string& kind,
                                 double ratio, int bits, int rank) {
  CompressorConfig c;
  try {
    c.kind = parse_compressor_kind(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field + "_compressor", e.what());
  }
  c.ratio = c.kind == CompressorKind::kTopK ? ratio : 1.0;
  c.bits = c.kind == CompressorKind::kQuant ? bits : 32;
  c.rank = c.kind == CompressorKind::kLowRank ? rank : 1;
  if (c.kind == CompressorKind::kTopK && !(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError(field + "_ratio", "must be in (0, 1]");
  }
  if (c.kind == CompressorKind::kQuant && (bits < 2 || bits > 32)) {
    throw ConfigError(field + "_bits", "must be in [2, 32]");
  }
  if (c.kind == CompressorKind::kLowRank && rank < 1) {
    throw ConfigError(field + "_rank", "must be >= 1");
  }
  return c;
}

}  // namespace

ConfigError::ConfigError(std::string field, const std::string& why)
    : std::invalid_argument("config field '" + field + "': " + why),
      field_(std::move(field)) {}

void ExperimentConfig::validate() const {
  if (clients < 1) throw ConfigError("clients", "must be >= 1");
  if (k < 1 || k > clients) throw ConfigError("k", "must satisfy 1 <= k <= clients");
  if (!(over_commit >= 1.0)) throw ConfigError("over_commit", "must be >= 1");
  if (cohort_size(k, over_commit) > clients) {
    throw ConfigError("over_commit", "ceil(k * over_commit) exceeds clients");
  }
  if (prefetch_rounds < 0) throw ConfigError("prefetch_rounds", "must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be >= 0");
  if (1.0 + beta > over_commit + 1e-12) {
    throw ConfigError("beta", "1 + beta must not exceed over_commit");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha", "must be in (0, 1]");
  if (rounds < 1) throw ConfigError("rounds", "must be >= 1");
  try {
    parse_scheduler_mode(scheduler);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("scheduler", e.what());
  }
  if (fixed_window < 1) throw ConfigError("fixed_window", "must be >= 1");
  try {
    parse_weighting(weighting);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("weighting", e.what());
  }
  make_compressor("dl", dl_compressor, dl_ratio, dl_bits, dl_rank);
  make_compressor("ul", ul_compressor, ul_ratio, ul_bits, ul_rank);
  if (classes < 1) throw ConfigError("classes", "must be >= 1");
  if (features < 1) throw ConfigError("features", "must be >= 1");
  if (!(skew > 0.0)) throw ConfigError("skew", "must be > 0");
  if (samples_per_client < 1) throw ConfigError("samples_per_client", "must be >= 1");
  if (!(separation >= 0.0)) throw ConfigError("separation", "must be >= 0");
  if (local_steps < 0) throw ConfigError("local_steps", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must be in [0, 1)");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate", "must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay", "must be > 0");
  if (eval_every < 0) throw ConfigError("eval_every", "must be >= 0");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0)) {
    throw ConfigError("target_accuracy", "must be in [0, 1]");
  }
  if (target_accuracy > 0.0 && eval_every == 0) {
    throw ConfigError("eval_every", "must be >= 1 when target_accuracy is set");
  }
  if (!(bw_median > 0.0)) throw ConfigError("bw_median", "must be > 0");
  if (!(bw_sigma >= 0.0)) throw ConfigError("bw_sigma", "must be >= 0");
  if (!(bw_upload_ratio > 0.0)) throw ConfigError("bw_upload_ratio", "must be > 0");
  if (!(bw_upload_sigma >= 0.0)) throw ConfigError("bw_upload_sigma", "must be >= 0");
  if (!(compute_median >= 0.0)) throw ConfigError("compute_median", "must be >= 0");
  if (!(compute_sigma >= 0.0)) throw ConfigError("compute_sigma", "must be >= 0");
  try {
    parse_availability_mode(availability);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("availability", e.what());
  }
  if (!(churn_offline_prob >= 0.0 && churn_offline_prob <= 1.0)) {
    throw ConfigError("churn_offline_prob", "must be in [0, 1]");
  }
  if (!(churn_slot_seconds > 0.0)) throw ConfigError("churn_slot_seconds", "must be > 0");
  if (!(churn_horizon_seconds > 0.0)) {
    throw ConfigError("churn_horizon_seconds", "must be > 0");
  }
}

SimConfig ExperimentConfig::sim_config() const {
  validate();
  SimConfig s;
  s.k = k;
  s.over_commit = over_commit;
  s.prefetch_rounds = prefetch_rounds;
  s.beta = beta;
  s.alpha = alpha;
  s.scheduler = parse_scheduler_mode(scheduler);
  s.fixed_window = fixed_window;
  s.availability = parse_availability_mode(availability);
  s.weighting = parse_weighting(weighting);
  s.downlink = make_compressor("dl", dl_compressor, dl_ratio, dl_bits, dl_rank);
  s.uplink = make_compressor("ul", ul_compressor, ul_ratio, ul_bits, ul_rank);
  s.train = {local_steps, batch_size, momentum};
  s.learning_rate = learning_rate;
  s.lr_decay = lr_decay;
  s.lr_decay_every = lr_decay_every;
  s.eval_every = eval_every;
  s.seed = seed;
  return s;
}

SynthTaskParams ExperimentConfig::task_params() const {
  SynthTaskParams p;
  p.clients = clients;
  p.classes = classes;
  p.features = features;
  p.skew = skew;
  p.samples_per_client = samples_per_client;
  p.test_samples = test_samples;
  p.separation = separation;
  p.seed = seed;
  return p;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  JsonReader reader(j);
  for_each_field(cfg, [&](const char* key, auto& field) { reader.get(key, field); });
  reader.reject_unknown();
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j = json::object();
  for_each_field(cfg, [&](const char* key, const auto& field) { j[key] = field; });
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path, "config file");
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

void set_parameter(ExperimentConfig& cfg, const std::string& name, double value) {
  if (name == "R") {
    if (value < 0.0 || value != std::floor(value)) {
      throw ConfigError("prefetch_rounds", "sweep values for R must be non-negative integers");
    }
    cfg.prefetch_rounds = static_cast<std::int64_t>(value);
  } else if (name == "alpha") {
    cfg.alpha = value;
  } else if (name == "beta") {
    cfg.beta = value;
  } else if (name == "oc") {
    cfg.over_commit = value;
  } else {
    throw ConfigError("param", "unknown sweep parameter '" + name +
                                   "' (expected R, alpha, beta or oc)");
  }
}

std::string git_blob_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

World build_world(const ExperimentConfig& cfg) {
  cfg.validate();
  World w;
  w.task = std::make_shared<const SynthTask>(gen_synth_task(cfg.task_params()));
  const RngStream root(cfg.seed);

  std::vector<LinkRates> links;
  std::string bw_source;
  if (!cfg.bandwidth_trace.empty()) {
    bw_source = read_file(cfg.bandwidth_trace, "bandwidth trace");
    std::istringstream in(bw_source);
    links = sample_bandwidth(parse_bandwidth_csv(in),
                             root.fork(0, RngStream::kServer, "bandwidth"), cfg.clients);
  } else {
    LognormalLinks params{cfg.bw_median, cfg.bw_sigma, cfg.bw_upload_ratio,
                          cfg.bw_upload_sigma};
    links = synth_bandwidth(params, root.fork(0, RngStream::kServer, "bandwidth"),
                            cfg.clients);
  }
  const std::vector<double> compute =
      synth_compute_times(cfg.clients, cfg.compute_median, cfg.compute_sigma,
                          root.fork(0, RngStream::kServer, "compute"));
  std::ostringstream table;
  table << "client_id,download_bps,upload_bps,compute_s\n";
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    w.profiles.push_back(
        {static_cast<ClientId>(i), links[i].download, links[i].upload, compute[i], 1.0});
    table << i << ',' << fmt(links[i].download) << ',' << fmt(links[i].upload) << ','
          << fmt(compute[i]) << '\n';
  }
  w.bandwidth_hash = git_blob_hash(bw_source.empty() ? table.str() : bw_source);

  std::string av_source;
  if (parse_availability_mode(cfg.availability) != AvailabilityMode::kFull) {
    if (!cfg.availability_trace.empty()) {
      av_source = read_file(cfg.availability_trace, "availability trace");
      std::istringstream in(av_source);
      w.availability = parse_availability_csv(in);
    } else {
      w.availability =
          synth_churn(cfg.clients, cfg.churn_horizon_seconds, cfg.churn_slot_seconds,
                      cfg.churn_offline_prob, root.fork(0, RngStream::kServer, "churn"));
      std::ostringstream out;
      write_availability_csv(out, w.availability);
      av_source = out.str();
    }
  }
  w.availability_hash = git_blob_hash(av_source);
  return w;
}

std::optional<std::int64_t> rounds_to_target(std::span<const RoundReport> rounds,
                                             double target) {
  constexpr std::size_t kWindow = 5;
  std::vector<double> recent;
  for (const RoundReport& r : rounds) {
    if (!r.accuracy) continue;
    recent.push_back(*r.accuracy);
    if (recent.size() < kWindow) continue;
    double sum = 0.0;
    for (std::size_t i = recent.size() - kWindow; i < recent.size(); ++i) sum += recent[i];
    if (sum / kWindow >= target) return r.round;
  }
  return std::nullopt;
}

RunOutput run(const ExperimentConfig& cfg, const World& world,
              const RoundObserver& observer) {
  Simulation sim(cfg.sim_config(), world.task, world.profiles, world.availability);
  RunOutput out;
  out.config = cfg;
  out.bandwidth_hash = world.bandwidth_hash;
  out.availability_hash = world.availability_hash;
  for (std::int64_t i = 0; i < cfg.rounds; ++i) {
    out.rounds.push_back(sim.run_round());
    if (observer) observer(sim, out.rounds.back());
    if (cfg.target_accuracy > 0.0) {
      out.rounds_to_target = rounds_to_target(out.rounds, cfg.target_accuracy);
      if (out.rounds_to_target) break;
    }
  }
  out.metrics = finalize_metrics(out.rounds);
  return out;
}

RunOutput run(const ExperimentConfig& cfg, const RoundObserver& observer) {
  return run(cfg, build_world(cfg), observer);
}

namespace {

std::string join_ids(const std::vector<ClientId>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s.push_back(' ');
    s += std::to_string(ids[i]);
  }
  return s;
}

}  // namespace

void write_rounds_csv(std::ostream& out, std::span<const RoundReport> rounds) {
  out << "round,duration,fetch_time,compute_time,upload_time,fetch_bytes,"
         "prefetch_bytes,upload_bytes,aggregated,dropped,accuracy\n";
  for (const RoundReport& r : rounds) {
    out << r.round << ',' << fmt(r.duration) << ',' << fmt(r.fetch_time) << ','
        << fmt(r.compute_time) << ',' << fmt(r.upload_time) << ',' << r.fetch_bytes << ','
        << r.prefetch_bytes << ',' << r.upload_bytes << ',' << join_ids(r.aggregated)
        << ',' << join_ids(r.dropped) << ',' << (r.accuracy ? fmt(*r.accuracy) : "")
        << '\n';
  }
}

json summary_json(const RunOutput& out) {
  const Metrics& m = out.metrics;
  json j;
  j["fetch_time"] = m.fetch_time;
  j["total_time"] = m.total_time;
  j["fetch_volume"] = m.fetch_volume;
  j["prefetch_volume"] = m.prefetch_volume;
  j["upload_volume"] = m.upload_volume;
  j["total_volume"] = m.total_volume;
  j["rounds"] = m.rounds;
  j["rounds_to_target"] =
      out.rounds_to_target ? json(*out.rounds_to_target) : json(nullptr);
  j["final_accuracy"] = m.accuracy.empty() ? json(nullptr) : json(m.accuracy.back());
  j["seed"] = out.config.seed;
  j["config"] = config_to_json(out.config);
  j["trace_hash"] = {{"bandwidth", out.bandwidth_hash},
                     {"availability", out.availability_hash}};
  return j;
}

void write_run(const RunOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream rounds(dir / "rounds.csv", std::ios::binary);
  write_rounds_csv(rounds, out.rounds);
  std::ofstream summary(dir / "summary.json", std::ios::binary);
  summary << summary_json(out).dump(2) << '\n';
  if (!rounds || !summary) throw std::runtime_error("cannot write outputs to " + dir.string());
}

void write_sweep_csv(std::ostream& out, const std::string& param,
                     std::span<const SweepRow> rows) {
  out << param
      << ",seed,fetch_time,total_time,fetch_volume,prefetch_volume,upload_volume,"
         "total_volume,rounds,rounds_to_target,final_accuracy\n";
  for (const SweepRow& row : rows) {
    const Metrics& m = row.output.metrics;
    out << row.label << ',' << row.output.config.seed << ',' << fmt(m.fetch_time) << ','
        << fmt(m.total_time) << ',' << m.fetch_volume << ',' << m.prefetch_volume << ','
        << m.upload_volume << ',' << m.total_volume << ',' << m.rounds << ','
        << (row.output.rounds_to_target ? std::to_string(*row.output.rounds_to_target) : "")
        << ',' << (m.accuracy.empty() ? "" : fmt(m.accuracy.back())) << '\n';
  }
}

namespace {

void write_rows(const ExperimentConfig& cfg, const std::string& param,
                std::span<const SweepRow> rows) {
  const std::filesystem::path dir = cfg.out_dir;
  for (const SweepRow& row : rows) write_run(row.output, dir / (param + "=" + row.label));
  std::ofstream out(dir / "sweep.csv", std::ios::binary);
  write_sweep_csv(out, param, rows);
  if (!out) throw std::runtime_error("cannot write " + (dir / "sweep.csv").string());
}

}  // namespace

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const std::string& param,
                            std::span<const double> values, bool write) {
  if (values.empty()) throw ConfigError("values", "at least one value required");
  std::vector<ExperimentConfig> configs;
  for (double v : values) {
    ExperimentConfig c = cfg;
    set_parameter(c, param, v);
    c.validate();
    configs.push_back(std::move(c));
  }
  // The world depends only on fields no sweep parameter touches.
  const World world = build_world(cfg);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    rows.push_back({fmt(values[i]), run(configs[i], world)});
  }
  if (write) write_rows(cfg, param, rows);
  return rows;
}

std::vector<SweepRow> compare_naive(const ExperimentConfig& cfg, bool write) {
  if (cfg.prefetch_rounds < 1) {
    throw ConfigError("prefetch_rounds", "compare-naive needs R >= 1");
  }
  cfg.validate();
  const World world = build_world(cfg);
  std::vector<SweepRow> rows;
  auto add = [&](std::string label, std::string scheduler, std::int64_t window) {
    ExperimentConfig c = cfg;
    c.scheduler = std::move(scheduler);
    c.fixed_window = window;
    rows.push_back({std::move(label), run(c, world)});
  };
  add("fixed-1", "fixed", 1);
  add("fixed-" + std::to_string(cfg.prefetch_rounds), "fixed", cfg.prefetch_rounds);
  add("fedfetch", "fedfetch", cfg.fixed_window);
  if (write) write_rows(cfg, "variant", rows);
  return rows;
}

}  // namespace fedfetch
