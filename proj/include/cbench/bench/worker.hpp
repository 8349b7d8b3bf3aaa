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

// Child side of the harness. Reads one JSON request per line and answers each
// with one JSON line carrying "ok" and, on failure, "error".
//
//   {"op":"hello"}                      -> {"ok":true,"pid":N,"now_ns":T}
//   {"op":"start","offset_ns":O,"rendezvous":"h:p","mode":"manual",
//    "executor":"single_threaded","workers":0,
//    "nodes":[{"component":C,"name":N,"ipc":B,"parameters":{...}}]}
//   {"op":"start",...,"mode":"container","container":"single","name":"ComponentManager"}
//   {"op":"record","on":B}
//   {"op":"stats"}                      -> {"ok":true,"messages":..,"payload_bytes":..,
//                                           "latency_sum_ns":..,"latency_min_ns":..,
//                                           "latency_max_ns":..,"window_ns":..,
//                                           "callbacks_total":..,"retransmissions":..}
//   {"op":"quit"}
//
// "now_ns" and the offset use the monotonic clock; the child subtracts the
// offset so its timestamps land in the parent's clock domain.

#include <iosfwd>

namespace cbench::bench {

int run_worker(std::istream& in, std::ostream& out);

}  // namespace cbench::bench
