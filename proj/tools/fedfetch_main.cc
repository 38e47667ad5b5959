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

// Command-line runner:
//   fedfetch run --config cfg.json [--seed S] [--out DIR]
//   fedfetch sweep --param {R|alpha|beta|oc} --values v1,v2,... [--config cfg.json]
//   fedfetch compare-naive --config cfg.json

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedfetch/experiment.h"

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  fedfetch::ExperimentConfig load() const {
    fedfetch::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = fedfetch::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config_path, "JSON experiment config");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--out", c.out, "Override the output directory");
}

void print_summary(const std::string& label, const fedfetch::RunOutput& out) {
  const auto& m = out.metrics;
  std::printf("%-12s rounds=%lld FT=%.1fs TT=%.1fs FV=%llu TV=%llu", label.c_str(),
              static_cast<long long>(m.rounds), m.fetch_time, m.total_time,
              static_cast<unsigned long long>(m.fetch_volume),
              static_cast<unsigned long long>(m.total_volume));
  if (!m.accuracy.empty()) std::printf(" acc=%.4f", m.accuracy.back());
  if (out.rounds_to_target) {
    std::printf(" target@%lld", static_cast<long long>(*out.rounds_to_target));
  }
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning prefetch scheduling simulator"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, naive_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment");
  add_common(run_cmd, run_opts, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one parameter with a shared seed");
  add_common(sweep_cmd, sweep_opts, false);
  std::string param;
  std::vector<double> values;
  sweep_cmd->add_option("--param", param, "Parameter to sweep")
      ->required()
      ->check(CLI::IsMember({"R", "alpha", "beta", "oc"}));
  sweep_cmd->add_option("--values", values, "Comma-separated values")
      ->required()
      ->delimiter(',');

  auto* naive_cmd =
      app.add_subcommand("compare-naive", "Compare fixed-1, fixed-R and adaptive prefetch");
  add_common(naive_cmd, naive_opts, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const auto cfg = run_opts.load();
      const auto out = fedfetch::run(cfg);
      fedfetch::write_run(out, cfg.out_dir);
      print_summary("run", out);
    } else if (*sweep_cmd) {
      const auto cfg = sweep_opts.load();
      for (const auto& row : fedfetch::sweep(cfg, param, values)) {
        print_summary(param + "=" + row.label, row.output);
      }
    } else if (*naive_cmd) {
      const auto cfg = naive_opts.load();
      for (const auto& row : fedfetch::compare_naive(cfg)) {
        print_summary(row.label, row.output);
      }
    }
  } catch (const fedfetch::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
