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

// Result files: one row per (configuration, metric) with the summary over
// repetitions. Appending to an existing file keeps earlier rows.
//
// CSV columns, in order:
//   run_id,experiment,topology,container,ipc,loaned,size_bytes,freq_hz,nodes,
//   subs,work_us,duration_s,reps,metric,mean,std,min,max,samples
// JSON: an array of objects with the same keys.

#include <string>
#include <vector>

#include "cbench/bench/experiment.hpp"

namespace cbench::bench {

enum class ResultFormat { csv, json };

ResultFormat parse_format(const std::string& s);

struct ResultRow {
  std::string run_id;
  std::string experiment;
  std::string topology;
  std::string container;
  bool ipc = false;
  bool loaned = false;
  std::uint64_t size_bytes = 0;
  double freq_hz = 0;
  std::uint64_t nodes = 0;
  std::uint64_t subs = 0;
  std::uint64_t work_us = 0;
  double duration_s = 0;
  std::uint64_t reps = 0;
  std::string metric;
  double mean = 0;
  double std = 0;
  double min = 0;
  double max = 0;
  std::uint64_t samples = 0;

  bool operator==(const ResultRow&) const = default;
};

std::vector<std::string> result_columns();
std::vector<ResultRow> result_rows(const RunStatistics& stats, const std::string& run_id);
/// Unique per call within and across processes.
std::string new_run_id();

/// Appends every statistic under one fresh run id and returns it. An empty
/// list still creates the file (header only for CSV, "[]" for JSON).
/// Throws SystemError when the path cannot be written.
std::string emit_results(const std::vector<RunStatistics>& stats, ResultFormat format, const std::string& path);
std::vector<ResultRow> read_results(const std::string& path, ResultFormat format);

}  // namespace cbench::bench
