// Copyright 2026 The compose-bench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <signal.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "cbench/bench/components.hpp"
#include "cbench/bench/experiment.hpp"
#include "cbench/bench/results.hpp"
#include "cbench/bench/worker.hpp"
#include "cbench/transport.hpp"

namespace {

using namespace cbench;
using namespace cbench::bench;

template <typename T>
std::vector<T> split_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream one(item);
    T v{};
    if (!(one >> v) || !one.eof()) throw InvalidArgument(std::string("bad ") + what + " '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidArgument(std::string("empty ") + what + " list");
  return out;
}

void print_summary(const RunStatistics& s, std::ostream& out) {
  const auto& c = s.config;
  out << to_string(c.experiment) << " topology=" << to_string(c.topology);
  if (c.topology == Topology::dynamic_composition) out << " container=" << short_name(c.container);
  out << " ipc=" << c.ipc << " loaned=" << c.loaned;
  if (c.experiment == Experiment::memory)
    out << " nodes=" << c.node_count;
  else
    out << " size=" << c.message_size << "B freq=" << c.frequency_hz << "Hz subs=" << c.subscriptions;
  out << " reps=" << s.runs.size() << '\n';
  for (const auto& [metric, m] : s.summary) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-26s mean %-14.6g std %-12.4g min %-12.6g max %.6g\n", metric.c_str(), m.mean,
                  m.stddev, m.min, m.max);
    out << line;
  }
}

int run_command(ExperimentConfig base, const std::string& sizes, const std::string& nodes, const std::string& subs,
                bool freq_given, bool size_given, bool work_given, const std::string& out_path,
                const std::string& format_name) {
  const auto format = parse_format(format_name);
  if (base.experiment == Experiment::goodput && !freq_given) base.frequency_hz = 0;
  if (base.experiment == Experiment::containers) {
    base.topology = Topology::dynamic_composition;
    if (!freq_given) base.frequency_hz = 50;
    if (!work_given) base.callback_work = std::chrono::microseconds(500);
  }

  std::vector<double> size_list = size_given ? split_list<double>(sizes, "size")
                                             : std::vector<double>{base.experiment == Experiment::containers ? 500.0 : 1.0};
  std::vector<std::size_t> node_list = split_list<std::size_t>(nodes, "node count");
  std::vector<std::size_t> sub_list = split_list<std::size_t>(subs, "subscription count");

  std::vector<ExperimentConfig> configs;
  if (base.experiment == Experiment::memory) {
    for (auto n : node_list) {
      auto c = base;
      c.node_count = n;
      configs.push_back(c);
    }
  } else {
    for (auto kb : size_list)
      for (auto s : sub_list) {
        auto c = base;
        c.message_size = static_cast<std::size_t>(std::llround(kb * 1000));
        c.subscriptions = s;
        configs.push_back(c);
      }
  }
  for (const auto& c : configs) c.validate();

  std::vector<RunStatistics> all;
  for (const auto& c : configs) {
    auto stats = run_experiment(c, [](std::size_t i, const RunRecord&) {
      std::cerr << "  repetition " << (i + 1) << " done\n";
    });
    print_summary(stats, std::cout);
    all.push_back(std::move(stats));
  }
  if (!out_path.empty()) {
    auto id = emit_results(all, format, out_path);
    std::cout << "results appended to " << out_path << " (run " << id << ")\n";
  }
  return 0;
}

int run_broker(const std::string& bind) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  DiscoveryBroker broker(bind);
  std::cout << "discovery broker listening on " << broker.address() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composable publish/subscribe middleware benchmark"};
  app.require_subcommand(1);

  ExperimentConfig config;
  std::string experiment = "latency", topology = "multi-process", container = "single";
  std::string sizes = "1", nodes = "1", subs = "1", out_path, format = "csv", config_file;
  double freq = 50;
  long work_us = 0;
  auto* run = app.add_subcommand("run", "Run an experiment and report statistics over repetitions");
  run->add_option("--experiment", experiment, "memory, latency, goodput or containers")
      ->check(CLI::IsMember({"memory", "latency", "goodput", "containers"}));
  run->add_option("--topology", topology, "multi-process, manual or dynamic")
      ->check(CLI::IsMember({"multi-process", "manual", "dynamic"}));
  run->add_option("--container", container, "Container kind for dynamic composition")
      ->check(CLI::IsMember({"single", "multi", "isolated"}));
  run->add_flag("--ipc", config.ipc, "Enable intra-process communication");
  run->add_flag("--loaned", config.loaned, "Publish through loaned shared-memory slots");
  auto* size_opt = run->add_option("--size", sizes, "Message size in KB (1 KB = 1000 bytes); comma list sweeps");
  auto* freq_opt = run->add_option("--freq", freq, "Publish frequency in Hz, 0 publishes continuously")
                       ->check(CLI::NonNegativeNumber);
  run->add_option("--nodes", nodes, "Empty node count for the memory experiment; comma list sweeps");
  run->add_option("--subs", subs, "Subscription count; comma list sweeps");
  auto* work_opt = run->add_option("--work-us", work_us, "Busy work per callback in microseconds")
                       ->check(CLI::NonNegativeNumber);
  run->add_option("--duration", config.duration_s, "Measured seconds per repetition")->check(CLI::PositiveNumber);
  run->add_option("--warmup", config.warmup_s, "Discarded seconds before measuring")->check(CLI::NonNegativeNumber);
  run->add_option("--reps", config.repetitions, "Repetitions")->check(CLI::PositiveNumber);
  run->add_option("--out", out_path, "Append results to this file");
  run->add_option("--format", format, "Result format")->check(CLI::IsMember({"csv", "json"}));
  run->add_option("--config", config_file, "Topology file; command-line options are ignored when given")
      ->check(CLI::ExistingFile);

  auto* worker = app.add_subcommand("worker", "Serve harness requests on stdin/stdout (started by run)");
  std::string bind = "127.0.0.1:17400";
  auto* broker = app.add_subcommand("broker", "Run a standalone discovery broker");
  broker->add_option("--bind", bind, "host:port to listen on");
  auto* list = app.add_subcommand("components", "List registered components");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*worker) return run_worker(std::cin, std::cout);
    if (*broker) return run_broker(bind);
    if (*list) {
      (void)bench_component_count();
      for (const auto& n : ComponentIndex::global().names()) std::cout << n << '\n';
      return 0;
    }
    if (!config_file.empty()) {
      auto c = load_topology_config(config_file);
      auto stats = run_experiment(c, [](std::size_t i, const RunRecord&) {
        std::cerr << "  repetition " << (i + 1) << " done\n";
      });
      print_summary(stats, std::cout);
      if (!out_path.empty()) std::cout << "results appended to " << out_path << " (run "
                                       << emit_results({stats}, parse_format(format), out_path) << ")\n";
      return 0;
    }
    config.experiment = parse_experiment(experiment);
    config.topology = parse_topology(topology);
    config.container = parse_container(container);
    config.frequency_hz = freq;
    config.callback_work = std::chrono::microseconds(work_us);
    return run_command(config, sizes, nodes, subs, freq_opt->count() > 0, size_opt->count() > 0,
                       work_opt->count() > 0, out_path, format);
  } catch (const std::exception& e) {
    std::cerr << "compose-bench: " << e.what() << '\n';
    return 1;
  }
}
