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

#include "cbench/bench/experiment.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "cbench/bench/metrics.hpp"
#include "cbench/bench/process.hpp"
#include "cbench/transport.hpp"

namespace cbench::bench {

using nlohmann::json;
using namespace std::chrono_literals;

const char* to_string(Experiment e) noexcept {
  switch (e) {
    case Experiment::memory:
      return "memory";
    case Experiment::latency:
      return "latency";
    case Experiment::goodput:
      return "goodput";
    case Experiment::containers:
      return "containers";
  }
  return "unknown";
}

const char* to_string(Topology t) noexcept {
  switch (t) {
    case Topology::multi_process:
      return "multi-process";
    case Topology::manual_composition:
      return "manual";
    case Topology::dynamic_composition:
      return "dynamic";
  }
  return "unknown";
}

const char* short_name(ContainerKind kind) noexcept {
  switch (kind) {
    case ContainerKind::shared_single_threaded:
      return "single";
    case ContainerKind::shared_multi_threaded:
      return "multi";
    case ContainerKind::isolated_single_threaded:
      return "isolated";
  }
  return "unknown";
}

Experiment parse_experiment(const std::string& s) {
  for (auto e : {Experiment::memory, Experiment::latency, Experiment::goodput, Experiment::containers})
    if (s == to_string(e)) return e;
  throw InvalidArgument("unknown experiment '" + s + "'");
}

Topology parse_topology(const std::string& s) {
  if (s == "multi-process" || s == "multi_process") return Topology::multi_process;
  if (s == "manual" || s == "manual_composition") return Topology::manual_composition;
  if (s == "dynamic" || s == "dynamic_composition") return Topology::dynamic_composition;
  throw InvalidArgument("unknown topology '" + s + "'");
}

ContainerKind parse_container(const std::string& s) {
  for (auto k : {ContainerKind::shared_single_threaded, ContainerKind::shared_multi_threaded,
                 ContainerKind::isolated_single_threaded})
    if (s == short_name(k) || s == to_string(k)) return k;
  throw InvalidArgument("unknown container kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (repetitions < 1) throw InvalidArgument("repetitions must be at least 1");
  if (!(duration_s > 0)) throw InvalidArgument("duration must be positive");
  if (warmup_s < 0) throw InvalidArgument("warmup must not be negative");
  if (frequency_hz < 0) throw InvalidArgument("frequency must not be negative");
  if (callback_work.count() < 0) throw InvalidArgument("callback work must not be negative");
  if (depth < 1) throw InvalidArgument("depth must be at least 1");
  if (reliability != "reliable" && reliability != "best_effort")
    throw InvalidArgument("reliability must be reliable or best_effort");
  if (ipc && topology == Topology::multi_process)
    throw InvalidArgument("intra-process communication needs a single-process topology");
  if (loaned && message_size == 0) throw InvalidArgument("loaned messages need a fixed, non-zero size");
  if (experiment == Experiment::containers && topology != Topology::dynamic_composition)
    throw InvalidArgument("the container experiment runs on dynamic composition");
  if (nodes.empty()) {
    if (experiment == Experiment::memory && node_count < 1) throw InvalidArgument("node count must be at least 1");
    if (experiment != Experiment::memory && subscriptions < 1)
      throw InvalidArgument("at least one subscription is needed");
  }
  std::set<std::string> names;
  for (const auto& n : node_specs())
    if (!names.insert(n.name).second) throw InvalidArgument("duplicate node name '" + n.name + "'");
}

std::vector<NodeSpec> ExperimentConfig::node_specs() const {
  if (!nodes.empty()) return nodes;
  std::vector<NodeSpec> out;
  if (experiment == Experiment::memory) {
    for (std::size_t i = 0; i < node_count; ++i) out.push_back({"empty", "node" + std::to_string(i + 1), {}});
    return out;
  }
  std::ostringstream freq;
  freq << frequency_hz;
  out.push_back({"talker",
                 "talker",
                 {{"topic", "/bench"},
                  {"size_bytes", std::to_string(message_size)},
                  {"freq_hz", freq.str()},
                  {"loaned", loaned ? "true" : "false"},
                  {"reliability", reliability},
                  {"depth", std::to_string(depth)}}});
  for (std::size_t i = 0; i < subscriptions; ++i)
    out.push_back({"listener",
                   "listener" + std::to_string(i + 1),
                   {{"topic", "/bench"},
                    {"work_us", std::to_string(callback_work.count())},
                    {"reliability", reliability},
                    {"depth", std::to_string(depth)}}});
  return out;
}

namespace {

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("line " + std::to_string(line) + ": expected a boolean, got '" + v + "'");
}

double parse_number(const std::string& v, int line) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(d))
    throw InvalidArgument("line " + std::to_string(line) + ": expected a number, got '" + v + "'");
  return d;
}

std::size_t parse_count(const std::string& v, int line) {
  auto d = parse_number(v, line);
  if (d < 0 || d != std::floor(d))
    throw InvalidArgument("line " + std::to_string(line) + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(d);
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig parse_topology_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto s = trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    if (s.rfind("node ", 0) == 0 || s.rfind("node\t", 0) == 0) {
      std::istringstream words(s.substr(5));
      NodeSpec n;
      if (!(words >> n.component >> n.name))
        throw InvalidArgument("line " + std::to_string(line) + ": node needs a component and a name");
      std::string kv;
      while (words >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
          throw InvalidArgument("line " + std::to_string(line) + ": node parameter '" + kv + "' is not key=value");
        n.parameters[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      c.nodes.push_back(std::move(n));
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw InvalidArgument("line " + std::to_string(line) + ": expected key = value");
    const auto key = trim(s.substr(0, eq));
    const auto value = trim(s.substr(eq + 1));
    try {
      if (key == "experiment")
        c.experiment = parse_experiment(value);
      else if (key == "topology")
        c.topology = parse_topology(value);
      else if (key == "container")
        c.container = parse_container(value);
      else if (key == "ipc")
        c.ipc = parse_bool(value, line);
      else if (key == "loaned")
        c.loaned = parse_bool(value, line);
      else if (key == "size_kb")
        c.message_size = static_cast<std::size_t>(std::llround(parse_number(value, line) * 1000));
      else if (key == "size_bytes")
        c.message_size = parse_count(value, line);
      else if (key == "freq_hz")
        c.frequency_hz = parse_number(value, line);
      else if (key == "nodes")
        c.node_count = parse_count(value, line);
      else if (key == "subs")
        c.subscriptions = parse_count(value, line);
      else if (key == "work_us")
        c.callback_work = std::chrono::microseconds(parse_count(value, line));
      else if (key == "duration_s")
        c.duration_s = parse_number(value, line);
      else if (key == "warmup_s")
        c.warmup_s = parse_number(value, line);
      else if (key == "reps")
        c.repetitions = parse_count(value, line);
      else if (key == "reliability")
        c.reliability = value;
      else if (key == "depth")
        c.depth = parse_count(value, line);
      else
        throw InvalidArgument("line " + std::to_string(line) + ": unknown key '" + key + "'");
    } catch (const InvalidArgument& e) {
      std::string what = e.what();
      if (what.rfind("line ", 0) == 0) throw;
      throw InvalidArgument("line " + std::to_string(line) + ": " + what);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_topology_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open topology file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_topology_config(buf.str());
}

std::vector<ProcessPlan> layout(const ExperimentConfig& config) {
  auto specs = config.node_specs();
  std::vector<ProcessPlan> plans;
  switch (config.topology) {
    case Topology::multi_process:
      for (auto& s : specs) plans.push_back({ProcessPlan::Mode::manual, {std::move(s)}});
      break;
    case Topology::manual_composition:
      plans.push_back({ProcessPlan::Mode::manual, std::move(specs)});
      break;
    case Topology::dynamic_composition:
      plans.push_back({ProcessPlan::Mode::container, std::move(specs)});
      break;
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Statistics

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.samples = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

RunStatistics aggregate(const ExperimentConfig& config, std::vector<RunRecord> runs) {
  RunStatistics out;
  out.config = config;
  std::map<std::string, std::vector<double>> columns;
  for (const auto& r : runs)
    for (const auto& [k, v] : r.metrics) columns[k].push_back(v);
  // A metric missing from some runs (latency when nothing arrived) is
  // summarized over the runs that have it; `samples` tells them apart.
  for (const auto& [k, values] : columns) out.summary[k] = summarize(values);
  out.runs = std::move(runs);
  return out;
}

// ---------------------------------------------------------------------------
// Running

std::string resolve_worker_executable(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("COMPOSE_BENCH_EXE"); env && *env) return env;
  std::error_code ec;
  auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) throw Error("cannot locate the worker executable; set COMPOSE_BENCH_EXE");
  return self.string();
}

namespace {

std::int64_t monotonic_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(SteadyClock::now().time_since_epoch()).count();
}

class WorkerHandle {
 public:
  explicit WorkerHandle(const std::string& exe) : proc_(exe, {"worker"}) {}

  json call(const json& request, std::chrono::milliseconds timeout = 30s) {
    try {
      proc_.write_line(request.dump());
      auto reply = json::parse(proc_.read_line(timeout));
      if (!reply.value("ok", false))
        throw Error("worker " + std::to_string(proc_.pid()) + " rejected '" + request.value("op", "") +
                    "': " + reply.value("error", std::string("unknown error")));
      return reply;
    } catch (const json::exception& e) {
      throw Error("worker " + std::to_string(proc_.pid()) + " sent a malformed reply: " + e.what());
    }
  }

  /// Offset of the child's monotonic clock relative to ours, from the
  /// exchange with the smallest round trip.
  std::int64_t handshake() {
    std::int64_t best_rtt = std::numeric_limits<std::int64_t>::max(), offset = 0;
    for (int i = 0; i < 5; ++i) {
      const auto t0 = monotonic_ns();
      auto reply = call({{"op", "hello"}}, 10s);
      const auto t1 = monotonic_ns();
      if (t1 - t0 < best_rtt) {
        best_rtt = t1 - t0;
        offset = reply.at("now_ns").get<std::int64_t>() - (t0 + t1) / 2;
      }
    }
    return offset;
  }

  pid_t pid() const { return proc_.pid(); }

  void quit() {
    try {
      call({{"op", "quit"}}, 10s);
    } catch (const Error&) {
    }
    proc_.terminate();
  }

 private:
  ChildProcess proc_;
};

json node_json(const NodeSpec& n, bool ipc) {
  return {{"component", n.component}, {"name", n.name}, {"ipc", ipc}, {"parameters", n.parameters}};
}

}  // namespace

RunRecord run_once(const ExperimentConfig& config) {
  config.validate();
  const auto exe = resolve_worker_executable(config.worker_executable);
  DiscoveryBroker broker;
  const auto plans = layout(config);

  std::vector<std::unique_ptr<WorkerHandle>> workers;
  auto cleanup = [&] {
    for (auto& w : workers) w->quit();
    workers.clear();
  };
  try {
    for (const auto& plan : plans) {
      workers.push_back(std::make_unique<WorkerHandle>(exe));
      auto& w = *workers.back();
      json start = {{"op", "start"}, {"offset_ns", w.handshake()}, {"rendezvous", broker.address()}};
      if (plan.mode == ProcessPlan::Mode::manual) {
        start["mode"] = "manual";
        start["executor"] = "single_threaded";
        json nodes = json::array();
        for (const auto& n : plan.nodes) nodes.push_back(node_json(n, config.ipc));
        start["nodes"] = std::move(nodes);
      } else {
        start["mode"] = "container";
        start["container"] = short_name(config.container);
        start["name"] = "ComponentManager";
      }
      w.call(start);
    }

    // Dynamic composition: components arrive through the manager services.
    for (const auto& plan : plans) {
      if (plan.mode != ProcessPlan::Mode::container) continue;
      ContextOptions co;
      co.rendezvous = broker.address();
      co.announce_period = 100ms;
      auto ctx = Context::create(co);
      NodeOptions no;
      no.name = "bench_harness";
      no.context = ctx;
      auto node = Node::create(no);
      ContainerClient client(node, "ComponentManager");
      if (!client.wait_for_container(20s)) throw Error("component container did not come up");
      for (const auto& n : plan.nodes) {
        NodeOptions o;
        o.name = n.name;
        o.ipc_enabled = config.ipc;
        o.parameters = n.parameters;
        client.load(n.component, o);
      }
      node.reset();
      ctx->shutdown();
    }

    std::this_thread::sleep_for(std::chrono::duration<double>(config.warmup_s));

    for (auto& w : workers) w->call({{"op", "record"}, {"on", true}});
    std::vector<CpuMeter> meters;
    for (auto& w : workers) meters.emplace_back(w->pid());
    std::vector<double> cpu_sum(workers.size(), 0.0);
    std::size_t cpu_laps = 0;
    std::vector<double> memory_totals, pss_totals;
    bool proportional = true, exact = true;

    auto sample_memory = [&] {
      std::uint64_t pss = 0;
      std::vector<pid_t> pids;
      for (auto& w : workers) {
        auto m = sample_pss(w->pid());
        proportional = proportional && m.proportional;
        pss += m.bytes;
        pids.push_back(w->pid());
      }
      auto group = sample_group_footprint(pids);
      exact = exact && group.exact;
      memory_totals.push_back(static_cast<double>(group.bytes));
      pss_totals.push_back(static_cast<double>(pss));
    };

    const auto start = SteadyClock::now();
    const auto end = start + std::chrono::duration_cast<SteadyClock::duration>(
                                 std::chrono::duration<double>(config.duration_s));
    auto next_memory = start;
    auto next_cpu = start + 100ms;
    for (;;) {
      auto now = SteadyClock::now();
      if (now >= next_memory) {
        sample_memory();
        next_memory += 1s;
      }
      if (now >= next_cpu) {
        for (std::size_t i = 0; i < meters.size(); ++i) cpu_sum[i] += meters[i].lap();
        ++cpu_laps;
        next_cpu += 100ms;
      }
      if (now >= end) break;
      std::this_thread::sleep_until(std::min({next_memory, next_cpu, end}));
    }
    if (cpu_laps == 0) {
      for (std::size_t i = 0; i < meters.size(); ++i) cpu_sum[i] += meters[i].lap();
      cpu_laps = 1;
    }

    std::uint64_t messages = 0, bytes = 0;
    double latency_sum = 0;
    std::int64_t latency_min = 0, latency_max = 0, window = 0;
    for (auto& w : workers) w->call({{"op", "record"}, {"on", false}});
    for (auto& w : workers) {
      auto s = w->call({{"op", "stats"}});
      const auto m = s.at("messages").get<std::uint64_t>();
      if (m > 0) {
        const auto lo = s.at("latency_min_ns").get<std::int64_t>();
        const auto hi = s.at("latency_max_ns").get<std::int64_t>();
        latency_min = messages == 0 ? lo : std::min(latency_min, lo);
        latency_max = messages == 0 ? hi : std::max(latency_max, hi);
      }
      messages += m;
      bytes += s.at("payload_bytes").get<std::uint64_t>();
      latency_sum += s.at("latency_sum_ns").get<double>();
      window = std::max(window, s.at("window_ns").get<std::int64_t>());
    }
    cleanup();

    RunRecord r;
    r.pss_proportional = proportional;
    r.footprint_exact = exact;
    const double procs = static_cast<double>(plans.size());
    const double mem = std::accumulate(memory_totals.begin(), memory_totals.end(), 0.0) /
                       static_cast<double>(memory_totals.size());
    const double pss = std::accumulate(pss_totals.begin(), pss_totals.end(), 0.0) /
                       static_cast<double>(pss_totals.size());
    double cpu_total = 0;
    for (double c : cpu_sum) cpu_total += c / static_cast<double>(cpu_laps);
    r.metrics[kProcesses] = procs;
    r.metrics[kMemoryTotal] = mem;
    r.metrics[kMemoryPss] = pss;
    r.metrics[kMemoryPerProcess] = pss / procs;
    r.metrics[kCpuTotal] = cpu_total;
    r.metrics[kCpuPerProcess] = cpu_total / procs;
    if (config.experiment != Experiment::memory) {
      r.metrics[kMessages] = static_cast<double>(messages);
      const double seconds = window > 0 ? static_cast<double>(window) / 1e9 : config.duration_s;
      r.metrics[kGoodput] = static_cast<double>(bytes) / seconds;
      if (messages > 0) {
        r.metrics[kLatencyMean] = latency_sum / static_cast<double>(messages);
        r.metrics[kLatencyMin] = static_cast<double>(latency_min);
        r.metrics[kLatencyMax] = static_cast<double>(latency_max);
      }
    }
    return r;
  } catch (...) {
    cleanup();
    throw;
  }
}

RunStatistics run_experiment(const ExperimentConfig& config, const ProgressCallback& progress) {
  config.validate();
  std::vector<RunRecord> runs;
  for (std::size_t i = 0; i < config.repetitions; ++i) {
    runs.push_back(run_once(config));
    if (progress) progress(i, runs.back());
  }
  return aggregate(config, std::move(runs));
}

RunStatistics run_container_experiment(std::size_t subscriptions, ContainerKind kind, ExperimentConfig base,
                                       const ProgressCallback& progress) {
  base.experiment = Experiment::containers;
  base.topology = Topology::dynamic_composition;
  base.container = kind;
  base.subscriptions = subscriptions;
  base.message_size = 500'000;
  base.frequency_hz = 50;
  base.callback_work = std::chrono::microseconds(500);
  base.nodes.clear();
  return run_experiment(base, progress);
}

}  // namespace cbench::bench
