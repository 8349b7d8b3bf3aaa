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

#include "cbench/bench/metrics.hpp"

#include <signal.h>
#include <sys/mman.h>
#include <time.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>

namespace cbench::bench {

namespace {

std::string proc_path(pid_t pid, const char* leaf) { return "/proc/" + std::to_string(pid) + "/" + leaf; }

void require_alive(pid_t pid) {
  if (pid <= 0 || (::kill(pid, 0) != 0 && errno == ESRCH))
    throw NotFound("process " + std::to_string(pid) + " does not exist");
}

// Sums every "<key>: <n> kB" line.
std::optional<std::uint64_t> sum_kb_field(const std::string& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  std::uint64_t total = 0;
  bool found = false;
  while (std::getline(in, line)) {
    if (line.compare(0, key.size(), key) != 0 || line.size() <= key.size() || line[key.size()] != ':') continue;
    std::istringstream fields(line.substr(key.size() + 1));
    std::uint64_t kb = 0;
    if (fields >> kb) {
      total += kb;
      found = true;
    }
  }
  if (!found) return std::nullopt;
  return total * 1024;
}

constexpr std::uint64_t kPagePresent = 1ull << 63;
constexpr std::uint64_t kPageSwapped = 1ull << 62;
constexpr std::uint64_t kPfnMask = (1ull << 55) - 1;

// Adds the frames behind every mapping of `pid` to `frames`. Swapped pages are
// keyed by swap entry with the top bit set so they never collide with a frame.
// Returns false when the kernel hides frame numbers.
bool collect_frames(pid_t pid, std::unordered_set<std::uint64_t>& frames) {
  std::ifstream maps(proc_path(pid, "maps"));
  std::FILE* pagemap = std::fopen(proc_path(pid, "pagemap").c_str(), "rb");
  if (!maps || !pagemap) {
    if (pagemap) std::fclose(pagemap);
    require_alive(pid);
    throw NotFound("process " + std::to_string(pid) + " has no page map");
  }
  const auto page = static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE));
  std::vector<std::uint64_t> entries;
  std::string line;
  bool visible = true;
  while (std::getline(maps, line)) {
    unsigned long long lo = 0, hi = 0;
    if (std::sscanf(line.c_str(), "%llx-%llx", &lo, &hi) != 2) continue;
    if (line.find("[vsyscall]") != std::string::npos) continue;
    entries.resize((hi - lo) / page);
    if (std::fseek(pagemap, static_cast<long>(lo / page * 8), SEEK_SET) != 0) continue;
    const auto got = std::fread(entries.data(), 8, entries.size(), pagemap);
    for (std::size_t i = 0; i < got; ++i) {
      const auto e = entries[i];
      if (e & kPagePresent) {
        const auto pfn = e & kPfnMask;
        if (pfn == 0) visible = false;
        else frames.insert(pfn);
      } else if (e & kPageSwapped) {
        frames.insert(kPagePresent | (e & kPfnMask));
      }
    }
  }
  std::fclose(pagemap);
  return visible;
}

}  // namespace

GroupFootprint sample_group_footprint(const std::vector<pid_t>& pids) {
  std::unordered_set<std::uint64_t> frames;
  bool exact = true;
  for (auto pid : pids) {
    if (!collect_frames(pid, frames)) {
      exact = false;
      break;
    }
  }
  if (exact) return {frames.size() * static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE)), true};
  GroupFootprint sum{0, false};
  for (auto pid : pids) sum.bytes += sample_pss(pid).bytes;
  return sum;
}

std::uint64_t prefault_program_image() {
#ifndef MADV_POPULATE_READ
  constexpr int MADV_POPULATE_READ = 22;
#endif
  std::ifstream maps("/proc/self/maps");
  std::uint64_t covered = 0;
  std::string line;
  while (std::getline(maps, line)) {
    unsigned long long lo = 0, hi = 0, offset = 0;
    char perms[5] = {};
    int path_at = 0;
    if (std::sscanf(line.c_str(), "%llx-%llx %4s %llx %*s %*s %n", &lo, &hi, perms, &offset, &path_at) != 4) continue;
    // Read-only segments of the executable and its shared libraries.
    if (perms[1] == 'w' || perms[0] != 'r' || path_at <= 0 || line.c_str()[path_at] != '/') continue;
    if (::madvise(reinterpret_cast<void*>(lo), hi - lo, MADV_POPULATE_READ) == 0) covered += hi - lo;
  }
  return covered;
}

MemorySample sample_pss(pid_t pid) {
  require_alive(pid);
  if (auto pss = sum_kb_field(proc_path(pid, "smaps_rollup"), "Pss")) return {*pss, true};
  if (auto pss = sum_kb_field(proc_path(pid, "smaps"), "Pss")) return {*pss, true};
  if (auto rss = sum_kb_field(proc_path(pid, "status"), "VmRSS")) return {*rss, false};
  throw NotFound("process " + std::to_string(pid) + " has no memory accounting (exited?)");
}

std::chrono::nanoseconds process_cpu_time(pid_t pid) {
  require_alive(pid);
  clockid_t clock;
  timespec ts{};
  if (::clock_getcpuclockid(pid, &clock) == 0 && ::clock_gettime(clock, &ts) == 0)
    return std::chrono::seconds(ts.tv_sec) + std::chrono::nanoseconds(ts.tv_nsec);

  // Tick-granular fallback: utime and stime are fields 14 and 15.
  std::ifstream in(proc_path(pid, "stat"));
  std::string stat;
  if (!std::getline(in, stat)) throw NotFound("process " + std::to_string(pid) + " does not exist");
  std::istringstream fields(stat.substr(stat.rfind(')') + 2));
  std::string skip;
  for (int i = 3; i <= 13; ++i) fields >> skip;
  std::uint64_t utime = 0, stime = 0;
  fields >> utime >> stime;
  const auto hz = static_cast<std::uint64_t>(::sysconf(_SC_CLK_TCK));
  return std::chrono::nanoseconds((utime + stime) * 1'000'000'000ull / hz);
}

double sample_cpu(pid_t pid, std::chrono::nanoseconds window) {
  if (window.count() <= 0) throw InvalidArgument("cpu sampling window must be positive");
  CpuMeter meter(pid);
  std::this_thread::sleep_for(window);
  return meter.lap();
}

CpuMeter::CpuMeter(pid_t pid)
    : pid_(pid), cpu_(process_cpu_time(pid)), wall_(std::chrono::steady_clock::now()) {}

double CpuMeter::lap() {
  const auto cpu = process_cpu_time(pid_);
  const auto wall = std::chrono::steady_clock::now();
  const auto dw = std::chrono::duration<double>(wall - wall_).count();
  const auto dc = std::chrono::duration<double>(cpu - cpu_).count();
  cpu_ = cpu;
  wall_ = wall;
  return dw > 0 ? 100.0 * dc / dw : 0.0;
}

}  // namespace cbench::bench
