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

#include <gtest/gtest.h>

#include <atomic>

#include "cbench/intraprocess.hpp"
#include "test_support.hpp"

using namespace cbench;
using namespace cbench::testing;
using namespace std::chrono_literals;

TEST(IpcDeliver, OneSubscription) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n", true);
  auto sub = node->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto pub = node->create_publisher("t");
  auto payload = std::make_shared<const Payload>(Payload{"/t", 1, 0, Bytes(8)});
  EXPECT_EQ(ctx->intra_process().deliver(*pub, payload), 1u);
  EXPECT_EQ(ctx->stats().serializations, 0u);
  EXPECT_TRUE(ctx->intra_process().serves(*pub, *sub));
}

TEST(IpcDeliver, ThreeSubscriptionsShareOneInstance) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n", true);
  std::vector<std::shared_ptr<Subscription>> subs;
  for (int i = 0; i < 3; ++i) subs.push_back(node->create_subscription("t", QoSProfile::reliable(), nullptr));
  auto pub = node->create_publisher("t");
  auto sent = pub->publish_shared(Bytes(4096));
  EXPECT_EQ(ctx->intra_process().matched(*pub), 3u);
  for (auto& s : subs) {
    auto got = std::get<PayloadRef>(*s->take());
    EXPECT_EQ(got.get(), sent.get());
  }
  EXPECT_EQ(ctx->stats().payload_bytes_copied, 0u);
}

TEST(IpcDeliver, NoMatchesDeliversNothing) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n", true);
  auto pub = node->create_publisher("t");
  EXPECT_EQ(ctx->intra_process().deliver(*pub, std::make_shared<const Payload>()), 0u);
}

TEST(IpcDeliver, OnlyIpcEnabledEndpointsRegistered) {
  auto ctx = local_context();
  auto on = make_node(ctx, "on", true);
  auto off = make_node(ctx, "off", false);
  on->create_publisher("t");
  off->create_publisher("t");
  auto s_on = on->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto s_off = off->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto durable = QoSProfile::reliable();
  durable.durability = Durability::transient_local;
  auto s_durable = on->create_subscription("t", durable, nullptr);
  EXPECT_EQ(ctx->intra_process().publisher_count(), 1u);
  EXPECT_EQ(ctx->intra_process().subscription_count(), 1u);
}

TEST(IpcDeliver, NonIpcSubscriptionStillReceivesViaSerialization) {
  auto ctx = local_context();
  auto on = make_node(ctx, "on", true);
  auto off = make_node(ctx, "off", false);
  auto fast = on->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto slow = off->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto pub = on->create_publisher("t");
  pub->publish(Bytes(32, std::byte{7}));
  EXPECT_EQ(ctx->stats().serializations, 1u);
  EXPECT_TRUE(std::holds_alternative<PayloadRef>(*fast->take()));
  auto d = slow->take();
  ASSERT_TRUE(d);
  auto msg = std::get<std::shared_ptr<const SerializedMessage>>(*d);
  EXPECT_EQ(deserialize(*msg).data, Bytes(32, std::byte{7}));
}

TEST(IpcDeliver, PayloadReclaimedAfterLastHolderReleases) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n", true);
  auto a = node->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto b = node->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto pub = node->create_publisher("t");
  std::weak_ptr<const Payload> watch = pub->publish_shared(Bytes(16));
  EXPECT_FALSE(watch.expired());
  a->take();
  EXPECT_FALSE(watch.expired());
  b->take();
  EXPECT_TRUE(watch.expired());
}

TEST(IpcDeliver, ZeroCopyAcrossManyMessages) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n", true);
  std::atomic<int> calls{0};
  std::vector<std::shared_ptr<Subscription>> subs;
  for (int i = 0; i < 3; ++i)
    subs.push_back(node->create_subscription("t", QoSProfile::reliable(), [&](const ReceivedMessage& m) {
      EXPECT_EQ(m.path, ReceivedMessage::Path::intra_process);
      ++calls;
    }));
  auto pub = node->create_publisher("t");
  Executor exec(ExecutorKind::single_threaded, ctx);
  exec.add_node(node);
  for (int i = 0; i < 1000; ++i) {
    pub->publish(Bytes(256));
    exec.spin_some();
  }
  EXPECT_EQ(calls.load(), 3000);
  EXPECT_EQ(ctx->stats().serializations, 0u);
  EXPECT_EQ(ctx->stats().payload_bytes_copied, 0u);
  EXPECT_EQ(ctx->stats().ipc_deliveries, 3000u);
}

TEST(Take, FifoPerPublisher) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n", true);
  auto sub = node->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto pub = node->create_publisher("t");
  auto a = pub->publish_shared(Bytes(1));
  auto b = pub->publish_shared(Bytes(1));
  EXPECT_EQ(std::get<PayloadRef>(*sub->take()), a);
  EXPECT_EQ(std::get<PayloadRef>(*sub->take()), b);
  EXPECT_FALSE(sub->take());
}

TEST(LatencyProbe, ZeroMessagesIsEmpty) {
  auto s = ipc_latency_probe(1000, 0);
  EXPECT_EQ(s.count, 0u);
}

TEST(LatencyProbe, IntraProcessIsFlatAcrossSizes) {
  auto small = ipc_latency_probe(1000, 200);
  auto large = ipc_latency_probe(5'000'000, 200);
  EXPECT_EQ(small.count, 200u);
  EXPECT_EQ(large.count, 200u);
  EXPECT_GT(small.mean_ns, 0);
  auto ratio = std::max(small.mean_ns, large.mean_ns) / std::min(small.mean_ns, large.mean_ns);
  EXPECT_LE(ratio, 2.0);
}

TEST(LatencyProbe, LoopbackGrowsWithSize) {
  auto small = ipc_latency_probe(1000, 50, ProbePath::serialized_loopback);
  auto large = ipc_latency_probe(5'000'000, 10, ProbePath::serialized_loopback);
  EXPECT_GE(large.mean_ns, 10 * small.mean_ns);
}
