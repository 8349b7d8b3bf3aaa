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

#include "cbench/intraprocess.hpp"

#include <algorithm>
#include <limits>
#include <mutex>
#include <thread>

#include "cbench/executor.hpp"
#include "cbench/transport.hpp"

namespace cbench {

void IntraProcessManager::add_publisher(EntityId id, const std::string& topic, const QoSProfile& qos) {
  if (!ipc_compatible(qos)) return;
  std::unique_lock lock(mutex_);
  publishers_[id] = PublisherEntry{topic, qos};
}

void IntraProcessManager::remove_publisher(EntityId id) {
  std::unique_lock lock(mutex_);
  publishers_.erase(id);
}

void IntraProcessManager::add_subscription(const std::shared_ptr<Subscription>& sub) {
  if (!sub->ipc_active()) return;
  std::unique_lock lock(mutex_);
  subscriptions_.emplace(sub->topic(), sub);
}

void IntraProcessManager::remove_subscription(EntityId id) {
  std::unique_lock lock(mutex_);
  std::erase_if(subscriptions_, [&](const auto& kv) {
    auto s = kv.second.lock();
    return !s || s->id() == id;
  });
}

std::size_t IntraProcessManager::deliver(const Publisher& pub, const PayloadRef& payload) {
  std::vector<std::shared_ptr<Subscription>> targets;
  {
    std::shared_lock lock(mutex_);
    auto p = publishers_.find(pub.id());
    if (p == publishers_.end()) return 0;
    auto [lo, hi] = subscriptions_.equal_range(p->second.topic);
    for (auto it = lo; it != hi; ++it)
      if (auto s = it->second.lock(); s && qos_compatible(p->second.qos, s->qos())) targets.push_back(std::move(s));
  }
  for (auto& s : targets) s->deliver(payload);
  return targets.size();
}

bool IntraProcessManager::serves(const Publisher& pub, const Subscription& sub) const {
  std::shared_lock lock(mutex_);
  auto p = publishers_.find(pub.id());
  if (p == publishers_.end() || p->second.topic != sub.topic()) return false;
  if (!qos_compatible(p->second.qos, sub.qos())) return false;
  auto [lo, hi] = subscriptions_.equal_range(sub.topic());
  for (auto it = lo; it != hi; ++it)
    if (auto s = it->second.lock(); s && s.get() == &sub) return true;
  return false;
}

std::size_t IntraProcessManager::matched(const Publisher& pub) const {
  std::shared_lock lock(mutex_);
  auto p = publishers_.find(pub.id());
  if (p == publishers_.end()) return 0;
  std::size_t n = 0;
  auto [lo, hi] = subscriptions_.equal_range(p->second.topic);
  for (auto it = lo; it != hi; ++it)
    if (auto s = it->second.lock(); s && qos_compatible(p->second.qos, s->qos())) ++n;
  return n;
}

std::size_t IntraProcessManager::publisher_count() const {
  std::shared_lock lock(mutex_);
  return publishers_.size();
}

std::size_t IntraProcessManager::subscription_count() const {
  std::shared_lock lock(mutex_);
  return subscriptions_.size();
}

// ---------------------------------------------------------------------------

LatencyStats ipc_latency_probe(std::size_t message_size, std::size_t n, ProbePath path) {
  LatencyStats stats;
  if (n == 0) return stats;

  std::shared_ptr<DiscoveryBroker> broker;
  ContextOptions pub_opts;
  pub_opts.enable_transport = path == ProbePath::serialized_loopback;
  if (pub_opts.enable_transport) {
    broker = std::make_shared<DiscoveryBroker>();
    pub_opts.rendezvous = broker->address();
    pub_opts.announce_period = std::chrono::milliseconds(200);
  }
  auto pub_ctx = Context::create(pub_opts);
  auto sub_ctx = path == ProbePath::serialized_loopback ? Context::create(pub_opts) : pub_ctx;

  const bool ipc = path == ProbePath::intra_process;
  auto make_node = [&](const char* name, std::shared_ptr<Context> ctx) {
    NodeOptions o;
    o.name = name;
    o.ipc_enabled = ipc;
    o.context = std::move(ctx);
    return Node::create(std::move(o));
  };
  auto pub_node = make_node("probe_talker", pub_ctx);
  auto sub_node = make_node("probe_listener", sub_ctx);

  std::mutex mutex;
  std::condition_variable cv;
  std::uint64_t seen = 0;
  double sum = 0;
  std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = 0;
  auto sub = sub_node->create_subscription("/probe", QoSProfile::reliable(10), [&](const ReceivedMessage& m) {
    auto latency = sub_ctx->now_ns() - m.publish_timestamp_ns;
    std::lock_guard lock(mutex);
    sum += static_cast<double>(latency);
    lo = std::min(lo, latency);
    hi = std::max(hi, latency);
    ++seen;
    cv.notify_all();
  });
  auto pub = pub_node->create_publisher("/probe", QoSProfile::reliable(10));

  auto exec = std::make_shared<Executor>(ExecutorKind::single_threaded, sub_ctx);
  exec->add_node(sub_node);
  ExecutorThread spinner(exec);

  if (path == ProbePath::serialized_loopback) {
    auto deadline = SteadyClock::now() + std::chrono::seconds(10);
    while (pub->matched_subscription_count() == 0 && SteadyClock::now() < deadline)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    if (pub->matched_subscription_count() == 0) throw Error("latency probe: discovery did not complete");
  }

  // Payloads are built in batches before timing starts. Zero-filling a fresh
  // multi-megabyte buffer right before publishing evicts the caches and would
  // charge message construction to the delivery path. The publisher also
  // drops its own reference only after the subscriber has let go, so freeing
  // a large payload never lands inside the next measured window.
  constexpr std::size_t kBatchBytes = 256u << 20;
  const std::size_t batch = std::max<std::size_t>(1, kBatchBytes / std::max<std::size_t>(message_size, 1));
  std::vector<Bytes> prepared;
  PayloadRef last;
  // A few unmeasured messages first, so thread wakeup paths are warm.
  constexpr std::size_t kWarmup = 10;
  for (std::size_t i = 0; i < kWarmup; ++i) {
    last = pub->publish_shared(Bytes(message_size));
    std::unique_lock lock(mutex);
    if (!cv.wait_for(lock, std::chrono::seconds(10), [&] { return seen > i; }))
      throw Error("latency probe: warmup message was not delivered");
  }
  {
    std::lock_guard lock(mutex);
    seen = 0;
    sum = 0;
    lo = std::numeric_limits<std::int64_t>::max();
    hi = 0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (prepared.empty()) {
      for (std::size_t k = 0; k < std::min(batch, n - i); ++k) prepared.emplace_back(message_size);
      std::reverse(prepared.begin(), prepared.end());
    }
    Bytes next = std::move(prepared.back());
    prepared.pop_back();
    while (last && last.use_count() > 1) std::this_thread::yield();
    last.reset();
    last = pub->publish_shared(std::move(next));
    std::unique_lock lock(mutex);
    if (!cv.wait_for(lock, std::chrono::seconds(10), [&] { return seen > i; }))
      throw Error("latency probe: message " + std::to_string(i) + " was not delivered");
  }
  spinner.stop();

  stats.count = seen;
  stats.mean_ns = sum / static_cast<double>(seen);
  stats.min_ns = lo;
  stats.max_ns = hi;
  return stats;
}

}  // namespace cbench
