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

#include "cbench/bench/results.hpp"

#include <cerrno>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

namespace cbench::bench {

using nlohmann::json;

ResultFormat parse_format(const std::string& s) {
  if (s == "csv") return ResultFormat::csv;
  if (s == "json") return ResultFormat::json;
  throw InvalidArgument("unknown result format '" + s + "'");
}

std::vector<std::string> result_columns() {
  return {"run_id", "experiment", "topology", "container", "ipc",  "loaned", "size_bytes",
          "freq_hz", "nodes",     "subs",     "work_us",   "duration_s", "reps", "metric",
          "mean",   "std",        "min",      "max",       "samples"};
}

std::vector<ResultRow> result_rows(const RunStatistics& stats, const std::string& run_id) {
  const auto& c = stats.config;
  std::vector<ResultRow> rows;
  for (const auto& [metric, s] : stats.summary) {
    ResultRow r;
    r.run_id = run_id;
    r.experiment = to_string(c.experiment);
    r.topology = to_string(c.topology);
    r.container = c.topology == Topology::dynamic_composition ? short_name(c.container) : "";
    r.ipc = c.ipc;
    r.loaned = c.loaned;
    r.size_bytes = c.message_size;
    r.freq_hz = c.frequency_hz;
    r.nodes = c.experiment == Experiment::memory ? c.node_count : c.node_specs().size();
    r.subs = c.subscriptions;
    r.work_us = static_cast<std::uint64_t>(c.callback_work.count());
    r.duration_s = c.duration_s;
    r.reps = c.repetitions;
    r.metric = metric;
    r.mean = s.mean;
    r.std = s.stddev;
    r.min = s.min;
    r.max = s.max;
    r.samples = s.samples;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string new_run_id() {
  static std::mt19937_64 rng{std::random_device{}()};
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  std::ostringstream out;
  out << ms << '-' << std::hex << std::setw(8) << std::setfill('0') << (rng() & 0xffffffffu);
  return out.str();
}

namespace {

// Shortest text that parses back to the same double.
std::string number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

json to_json(const ResultRow& r) {
  return {{"run_id", r.run_id},   {"experiment", r.experiment}, {"topology", r.topology},
          {"container", r.container}, {"ipc", r.ipc},           {"loaned", r.loaned},
          {"size_bytes", r.size_bytes}, {"freq_hz", r.freq_hz}, {"nodes", r.nodes},
          {"subs", r.subs},         {"work_us", r.work_us},     {"duration_s", r.duration_s},
          {"reps", r.reps},         {"metric", r.metric},       {"mean", r.mean},
          {"std", r.std},           {"min", r.min},             {"max", r.max},
          {"samples", r.samples}};
}

ResultRow from_json(const json& j) {
  ResultRow r;
  r.run_id = j.at("run_id");
  r.experiment = j.at("experiment");
  r.topology = j.at("topology");
  r.container = j.at("container");
  r.ipc = j.at("ipc");
  r.loaned = j.at("loaned");
  r.size_bytes = j.at("size_bytes");
  r.freq_hz = j.at("freq_hz");
  r.nodes = j.at("nodes");
  r.subs = j.at("subs");
  r.work_us = j.at("work_us");
  r.duration_s = j.at("duration_s");
  r.reps = j.at("reps");
  r.metric = j.at("metric");
  r.mean = j.at("mean");
  r.std = j.at("std");
  r.min = j.at("min");
  r.max = j.at("max");
  r.samples = j.at("samples");
  return r;
}

std::string csv_line(const ResultRow& r) {
  std::ostringstream o;
  o << r.run_id << ',' << r.experiment << ',' << r.topology << ',' << r.container << ',' << (r.ipc ? 1 : 0) << ','
    << (r.loaned ? 1 : 0) << ',' << r.size_bytes << ',' << number(r.freq_hz) << ',' << r.nodes << ',' << r.subs
    << ',' << r.work_us << ',' << number(r.duration_s) << ',' << r.reps << ',' << r.metric << ',' << number(r.mean)
    << ',' << number(r.std) << ',' << number(r.min) << ',' << number(r.max) << ',' << r.samples;
  return o.str();
}

double to_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw CorruptionError("bad number '" + s + "' in results");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw CorruptionError("bad integer '" + s + "' in results");
  return v;
}

ResultRow parse_csv_line(const std::string& line) {
  std::vector<std::string> f;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != result_columns().size()) throw CorruptionError("results row has " + std::to_string(f.size()) + " fields");
  ResultRow r;
  r.run_id = f[0];
  r.experiment = f[1];
  r.topology = f[2];
  r.container = f[3];
  r.ipc = f[4] == "1";
  r.loaned = f[5] == "1";
  r.size_bytes = to_u64(f[6]);
  r.freq_hz = to_double(f[7]);
  r.nodes = to_u64(f[8]);
  r.subs = to_u64(f[9]);
  r.work_us = to_u64(f[10]);
  r.duration_s = to_double(f[11]);
  r.reps = to_u64(f[12]);
  r.metric = f[13];
  r.mean = to_double(f[14]);
  r.std = to_double(f[15]);
  r.min = to_double(f[16]);
  r.max = to_double(f[17]);
  r.samples = to_u64(f[18]);
  return r;
}

std::string header_line() {
  std::string h;
  for (const auto& c : result_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

}  // namespace

std::string emit_results(const std::vector<RunStatistics>& stats, ResultFormat format, const std::string& path) {
  const auto run_id = new_run_id();
  std::vector<ResultRow> rows;
  for (const auto& s : stats)
    for (auto& r : result_rows(s, run_id)) rows.push_back(std::move(r));

  std::error_code ec;
  const bool exists = std::filesystem::exists(path, ec) && std::filesystem::file_size(path, ec) > 0;
  if (format == ResultFormat::csv) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw SystemError("cannot write results to '" + path + "'", errno);
    if (!exists) out << header_line() << '\n';
    for (const auto& r : rows) out << csv_line(r) << '\n';
    if (!out) throw SystemError("cannot write results to '" + path + "'", errno);
    return run_id;
  }
  json all = json::array();
  if (exists) {
    std::ifstream in(path);
    all = json::parse(in, nullptr, false);
    if (!all.is_array()) throw CorruptionError("'" + path + "' does not hold a result array");
  }
  for (const auto& r : rows) all.push_back(to_json(r));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw SystemError("cannot write results to '" + path + "'", errno);
  out << all.dump(2) << '\n';
  if (!out) throw SystemError("cannot write results to '" + path + "'", errno);
  return run_id;
}

std::vector<ResultRow> read_results(const std::string& path, ResultFormat format) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open results file '" + path + "'");
  std::vector<ResultRow> rows;
  if (format == ResultFormat::json) {
    auto all = json::parse(in, nullptr, false);
    if (!all.is_array()) throw CorruptionError("'" + path + "' does not hold a result array");
    for (const auto& j : all) rows.push_back(from_json(j));
    return rows;
  }
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (line != header_line()) throw CorruptionError("unexpected header in '" + path + "'");
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_csv_line(line));
  return rows;
}

}  // namespace cbench::bench
