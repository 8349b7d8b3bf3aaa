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

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cbench/graph.hpp"

namespace cbench {

/// Maps co-located publishers to co-located subscriptions and hands each
/// matched subscription a shared reference to the one payload instance.
/// Only endpoints of ipc-enabled nodes with ipc-compatible QoS are registered.
class IntraProcessManager {
 public:
  void add_publisher(EntityId id, const std::string& topic, const QoSProfile& qos);
  void remove_publisher(EntityId id);
  void add_subscription(const std::shared_ptr<Subscription>& sub);
  void remove_subscription(EntityId id);

  /// Pushes `payload` into every matched subscription queue and wakes their
  /// executors. No payload bytes are copied. Returns the delivered count.
  std::size_t deliver(const Publisher& pub, const PayloadRef& payload);

  /// True when `pub` reaches `sub` by reference.
  bool serves(const Publisher& pub, const Subscription& sub) const;
  std::size_t matched(const Publisher& pub) const;

  std::size_t publisher_count() const;
  std::size_t subscription_count() const;

 private:
  struct PublisherEntry {
    std::string topic;
    QoSProfile qos;
  };

  mutable std::shared_mutex mutex_;
  std::map<EntityId, PublisherEntry> publishers_;
  std::multimap<std::string, std::weak_ptr<Subscription>> subscriptions_;
};

struct LatencyStats {
  std::size_t count = 0;
  double mean_ns = 0.0;
  std::int64_t min_ns = 0;
  std::int64_t max_ns = 0;
};

enum class ProbePath { intra_process, serialized_in_process, serialized_loopback };

/// Publishes `n` messages of `message_size` bytes from one node to a
/// subscription serviced by a single-threaded executor, one at a time, and
/// reports publish-to-callback latency. `serialized_loopback` places the
/// endpoints in two contexts talking over the datagram transport.
LatencyStats ipc_latency_probe(std::size_t message_size, std::size_t n,
                               ProbePath path = ProbePath::intra_process);

}  // namespace cbench
