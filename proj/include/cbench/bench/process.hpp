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

#include <sys/types.h>

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "cbench/error.hpp"

namespace cbench::bench {

/// A child process driven through line-oriented stdin/stdout pipes. stderr
/// is inherited.
class ChildProcess {
 public:
  /// Throws SystemError when the program cannot be started.
  ChildProcess(const std::string& program, const std::vector<std::string>& args,
               const std::map<std::string, std::string>& extra_env = {});
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  pid_t pid() const noexcept { return pid_; }

  void write_line(const std::string& line);
  /// Throws Error on timeout or when the child closes its output.
  std::string read_line(std::chrono::milliseconds timeout);

  /// Closes stdin and waits up to `grace` before killing. Returns the exit
  /// status as reported by waitpid, or -1 when the child had to be killed.
  int terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(3000));
  bool running() const noexcept { return pid_ > 0; }

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

}  // namespace cbench::bench
