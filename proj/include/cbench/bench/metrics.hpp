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

// Process memory and CPU sampling from the proc filesystem and per-process
// CPU clocks.

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <system_error>
#include <vector>

#include "cbench/error.hpp"

namespace cbench::bench {

struct MemorySample {
  std::uint64_t bytes = 0;
  /// False when proportional accounting was unavailable and resident set size
  /// was reported instead.
  bool proportional = true;
};

/// Throws NotFound when the process does not exist.
MemorySample sample_pss(pid_t pid);

struct GroupFootprint {
  std::uint64_t bytes = 0;
  /// True when physical frame numbers were readable and shared pages were
  /// counted exactly once. Otherwise `bytes` is the sum of per-process PSS.
  bool exact = true;
};

/// Memory of a set of processes taken together: the distinct physical pages
/// mapped by any of them. Unlike a sum of PSS this does not depend on how
/// many processes outside the set share the same libraries. Needs
/// CAP_SYS_ADMIN for frame numbers and falls back to summed PSS without it.
/// Throws NotFound when a process does not exist.
GroupFootprint sample_group_footprint(const std::vector<pid_t>& pids);

/// Maps every page of the read-only segments (code and constants) of the
/// running program and its shared libraries into this process. Code is
/// otherwise paged in on first use, so a process would grow the first time it
/// runs a path such as talking to a peer. Returns the bytes covered, 0 when
/// the kernel lacks support.
std::uint64_t prefault_program_image();

/// Cumulative CPU time of every thread of the process.
std::chrono::nanoseconds process_cpu_time(pid_t pid);

/// CPU time over wall time across `window`, in percent. May exceed 100 on
/// multicore hosts. Throws InvalidArgument for a non-positive window.
double sample_cpu(pid_t pid, std::chrono::nanoseconds window);

/// Incremental variant: percent since the previous call (or construction).
class CpuMeter {
 public:
  explicit CpuMeter(pid_t pid);
  double lap();

 private:
  pid_t pid_;
  std::chrono::nanoseconds cpu_;
  std::chrono::steady_clock::time_point wall_;
};

}  // namespace cbench::bench
