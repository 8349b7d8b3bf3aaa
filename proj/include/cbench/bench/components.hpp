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

// Components used by the experiments, and the per-process sink listeners
// report into. Registered in the global index as "empty", "talker" and
// "listener" when the component object library is linked in.

#include <atomic>
#include <cstdint>
#include <deque>
#include <limits>
#include <mutex>

#include "cbench/composition.hpp"

namespace cbench::bench {

/// Listener observations, collected only while recording is on.
class DeliverySink {
 public:
  struct Snapshot {
    std::uint64_t messages = 0;
    std::uint64_t payload_bytes = 0;
    double latency_sum_ns = 0;
    std::int64_t latency_min_ns = 0;
    std::int64_t latency_max_ns = 0;
    std::int64_t window_ns = 0;
    /// Callbacks seen since process start, recording or not.
    std::uint64_t callbacks_total = 0;

    double mean_latency_ns() const { return messages ? latency_sum_ns / static_cast<double>(messages) : 0.0; }
  };

  static DeliverySink& instance();

  void record(std::int64_t latency_ns, std::size_t payload_bytes);
  /// Clears the counters and starts or stops the window.
  void set_recording(bool on);
  Snapshot snapshot() const;

 private:
  mutable std::mutex mutex_;
  bool recording_ = false;
  SteadyClock::time_point started_{};
  SteadyClock::time_point stopped_{};
  Snapshot s_;
};

/// Sets builtin endpoints, as every node of a full middleware has them.
NodeOptions with_builtin_endpoints(NodeOptions options);

/// A node with no entities beyond the builtin ones.
class EmptyComponent : public Component {
 public:
  explicit EmptyComponent(const NodeOptions& options);
};

/// Parameters: topic ("/bench"), size_bytes (1000), freq_hz (50, 0 publishes
/// continuously), loaned (false), reliability ("reliable"), depth (10).
class TalkerComponent : public Component {
 public:
  explicit TalkerComponent(const NodeOptions& options);
  ~TalkerComponent() override;

  std::uint64_t published() const noexcept { return published_.load(); }
  std::uint64_t backpressured() const noexcept { return backpressured_.load(); }

 private:
  void tick();

  std::size_t size_;
  bool loaned_;
  std::shared_ptr<Publisher> pub_;
  std::shared_ptr<Timer> timer_;
  std::deque<PayloadRef> in_flight_;
  Bytes spare_;
  std::atomic<std::uint64_t> published_{0};
  std::atomic<std::uint64_t> backpressured_{0};
};

/// Parameters: topic ("/bench"), work_us (0), reliability ("reliable"),
/// depth (10). Reports publish-to-callback latency into DeliverySink.
class ListenerComponent : public Component {
 public:
  explicit ListenerComponent(const NodeOptions& options);
  ~ListenerComponent() override;

  std::uint64_t received() const noexcept { return received_.load(); }

 private:
  std::shared_ptr<Subscription> sub_;
  std::atomic<std::uint64_t> received_{0};
};

QoSProfile qos_from_parameters(const NodeOptions& options);

/// Forces the component registrations into a binary that links the object
/// library; returns the number of bench components.
std::size_t bench_component_count();

}  // namespace cbench::bench
