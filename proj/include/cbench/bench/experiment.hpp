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

#pragma once

// Experiment configuration, topology layout, the run loop over worker
// processes and aggregation over repetitions.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbench/composition.hpp"

namespace cbench::bench {

enum class Experiment { memory, latency, goodput, containers };
enum class Topology { multi_process, manual_composition, dynamic_composition };

const char* to_string(Experiment e) noexcept;
const char* to_string(Topology t) noexcept;
/// Accepts the command-line spellings ("multi-process", "manual", "dynamic",
/// "single", "multi", "isolated") as well as the enumerator names.
Experiment parse_experiment(const std::string& s);
Topology parse_topology(const std::string& s);
ContainerKind parse_container(const std::string& s);
const char* short_name(ContainerKind kind) noexcept;

/// One component instance of a topology.
struct NodeSpec {
  std::string component;
  std::string name;
  std::map<std::string, std::string> parameters;
  bool operator==(const NodeSpec&) const = default;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::latency;
  Topology topology = Topology::multi_process;
  ContainerKind container = ContainerKind::shared_single_threaded;
  bool ipc = false;
  bool loaned = false;
  /// Empty nodes in the memory experiment.
  std::size_t node_count = 1;
  std::size_t subscriptions = 1;
  std::size_t message_size = 1000;
  /// Zero publishes continuously.
  double frequency_hz = 50.0;
  std::chrono::microseconds callback_work{0};
  double duration_s = 10.0;
  double warmup_s = 2.0;
  std::size_t repetitions = 10;
  std::string reliability = "reliable";
  std::size_t depth = 10;
  /// Overrides the node list derived from the fields above.
  std::vector<NodeSpec> nodes;
  /// Program started for each worker process. Empty selects
  /// $COMPOSE_BENCH_EXE, then the running executable.
  std::string worker_executable;

  /// Throws InvalidArgument.
  void validate() const;
  /// Component instances, before they are spread over processes.
  std::vector<NodeSpec> node_specs() const;
};

/// Reads the key/value plus node-list topology format (docs/topology.md).
/// Throws InvalidArgument with the offending line number.
ExperimentConfig parse_topology_config(const std::string& text);
ExperimentConfig load_topology_config(const std::string& path);

struct ProcessPlan {
  enum class Mode { manual, container };
  Mode mode = Mode::manual;
  std::vector<NodeSpec> nodes;
};

/// multi_process: one manual process per node. manual: one manual process.
/// dynamic: one container process; its nodes are loaded over the manager
/// services once it is up.
std::vector<ProcessPlan> layout(const ExperimentConfig& config);

/// Metric values of one repetition, keyed by metric name.
struct RunRecord {
  std::map<std::string, double> metrics;
  bool pss_proportional = true;
  /// See GroupFootprint::exact.
  bool footprint_exact = true;
};

struct MetricSummary {
  double mean = 0;
  double stddev = 0;
  double min = 0;
  double max = 0;
  std::size_t samples = 0;
};

struct RunStatistics {
  ExperimentConfig config;
  std::vector<RunRecord> runs;
  std::map<std::string, MetricSummary> summary;
};

/// Sample standard deviation; a single value has zero spread.
MetricSummary summarize(const std::vector<double>& values);
RunStatistics aggregate(const ExperimentConfig& config, std::vector<RunRecord> runs);

/// Called after each repetition with its index and record.
using ProgressCallback = std::function<void(std::size_t, const RunRecord&)>;

/// Runs `repetitions` complete runs. Throws Error with the child's
/// diagnostics when a worker fails to start.
RunStatistics run_experiment(const ExperimentConfig& config, const ProgressCallback& progress = {});
RunRecord run_once(const ExperimentConfig& config);

/// One 500 KB / 50 Hz publisher and `subscriptions` listeners with 500 us of
/// callback work in a container of `kind`. Other fields come from `base`.
RunStatistics run_container_experiment(std::size_t subscriptions, ContainerKind kind, ExperimentConfig base = {},
                                       const ProgressCallback& progress = {});

std::string resolve_worker_executable(const std::string& configured);

/// Metric names.
/// Distinct physical pages of all worker processes together.
inline constexpr const char* kMemoryTotal = "memory_total_bytes";
/// Sum of per-process PSS. Shared pages are split with every process mapping
/// them, the harness included.
inline constexpr const char* kMemoryPss = "memory_pss_sum_bytes";
inline constexpr const char* kMemoryPerProcess = "memory_per_process_bytes";
inline constexpr const char* kCpuTotal = "cpu_total_percent";
inline constexpr const char* kCpuPerProcess = "cpu_per_process_percent";
inline constexpr const char* kLatencyMean = "latency_mean_ns";
inline constexpr const char* kLatencyMin = "latency_min_ns";
inline constexpr const char* kLatencyMax = "latency_max_ns";
inline constexpr const char* kGoodput = "goodput_bytes_per_s";
inline constexpr const char* kMessages = "messages_received";
inline constexpr const char* kProcesses = "processes";

}  // namespace cbench::bench
