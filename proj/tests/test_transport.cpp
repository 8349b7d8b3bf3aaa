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
#include <mutex>
#include <random>
#include <set>

#include "test_support.hpp"

using namespace cbench;
using namespace cbench::testing;
using namespace std::chrono_literals;

namespace {

EndpointInfo endpoint(EntityId id, const std::string& topic, Direction d, QoSProfile q = QoSProfile::reliable()) {
  return EndpointInfo{id, topic, d, q};
}

}  // namespace

TEST(Discovery, FootprintOfLoneParticipantIsConstant) {
  DiscoveryDatabase db(1);
  EXPECT_EQ(db.footprint_bytes(), kParticipantFootprint);
  db.add_local(endpoint(1, "/t", Direction::publisher));
  EXPECT_EQ(db.footprint_bytes(), kParticipantFootprint);
}

TEST(Discovery, OnePairPerSide) {
  DiscoveryDatabase a(1), b(2);
  a.add_local(endpoint(1, "/t", Direction::publisher));
  b.add_local(endpoint(1, "/t", Direction::subscription));
  a.upsert_remote({2, 0, 0, 0, 1, 1, b.local_endpoints()});
  b.upsert_remote({1, 0, 0, 0, 1, 1, a.local_endpoints()});
  EXPECT_EQ(a.matched_record_count(), 1u);
  EXPECT_EQ(b.matched_record_count(), 1u);
  EXPECT_EQ(a.footprint_bytes(), 8192 + kParticipantFootprint);
  ASSERT_EQ(a.remote_targets(1).size(), 1u);
  EXPECT_EQ(b.local_readers_for(1, 1), std::vector<EntityId>{1});
}

TEST(Discovery, IncompatibleQosDoesNotMatch) {
  DiscoveryDatabase a(1);
  a.add_local(endpoint(1, "/t", Direction::subscription, QoSProfile::reliable()));
  a.upsert_remote({2, 0, 0, 0, 1, 1, {endpoint(5, "/t", Direction::publisher, QoSProfile::best_effort())}});
  EXPECT_EQ(a.matched_record_count(), 0u);
}

TEST(Discovery, StaleRevisionIgnoredAndRemovalClears) {
  DiscoveryDatabase a(1);
  a.add_local(endpoint(1, "/t", Direction::subscription));
  a.upsert_remote({2, 0, 0, 0, 1, 5, {endpoint(5, "/t", Direction::publisher)}});
  a.upsert_remote({2, 0, 0, 0, 1, 4, {}});
  EXPECT_EQ(a.matched_record_count(), 1u);
  a.upsert_remote({2, 0, 0, 0, 1, 6, {}});
  EXPECT_EQ(a.matched_record_count(), 0u);
  a.upsert_remote({2, 0, 0, 0, 1, 7, {endpoint(5, "/t", Direction::publisher)}});
  a.remove_local(1);
  EXPECT_EQ(a.matched_record_count(), 0u);
  a.add_local(endpoint(1, "/t", Direction::subscription));
  EXPECT_EQ(a.matched_record_count(), 1u);
  a.remove_remote(2);
  EXPECT_EQ(a.matched_record_count(), 0u);
  EXPECT_EQ(a.participant_count(), 1u);
}

TEST(Discovery, MeshCountsMatchBruteForceInAnyOrder) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 6);
    std::vector<ParticipantInfo> infos;
    for (int p = 0; p < n; ++p) {
      ParticipantInfo info{static_cast<std::uint64_t>(p + 1), 0, 0, 0, 1, 1, {}};
      const int eps = 1 + static_cast<int>(rng() % 5);
      for (int e = 0; e < eps; ++e)
        info.endpoints.push_back(endpoint(static_cast<EntityId>(e + 1), "/t" + std::to_string(rng() % 3),
                                          rng() % 2 ? Direction::publisher : Direction::subscription,
                                          rng() % 2 ? QoSProfile::reliable() : QoSProfile::best_effort()));
      infos.push_back(info);
    }
    std::size_t total = 0, brute = 0;
    for (int p = 0; p < n; ++p) {
      DiscoveryDatabase db(infos[p].id);
      for (const auto& e : infos[p].endpoints) db.add_local(e);
      std::vector<int> order;
      for (int q = 0; q < n; ++q) order.push_back(q);
      std::shuffle(order.begin(), order.end(), rng);
      for (int q : order) db.upsert_remote(infos[q]);
      total += db.matched_record_count();
      for (int q = 0; q < n; ++q) {
        if (q == p) continue;
        for (const auto& l : infos[p].endpoints)
          for (const auto& r : infos[q].endpoints) brute += endpoints_match(l, r) ? 1 : 0;
      }
    }
    EXPECT_EQ(total, brute);
  }
}

TEST(Codec, AnnounceRoundTrip) {
  ParticipantInfo info{42, 7, 0x7f000001, 4000, 3, 9,
                       {endpoint(1, "/a", Direction::publisher), endpoint(2, "/b", Direction::subscription,
                                                                          QoSProfile::best_effort(3))}};
  EXPECT_EQ(decode_announce(encode_announce(info)), info);
  EXPECT_THROW(decode_announce(Bytes(3)), CorruptionError);
}

TEST(Codec, PacketHeaderIsTwentyBytes) {
  Bytes out;
  encode_packet_header({PacketKind::ack, 1, 2}, out);
  EXPECT_EQ(out.size(), kTransportHeaderSize);
  wire::Reader r(out);
  auto h = decode_packet_header(r);
  EXPECT_EQ(h.kind, PacketKind::ack);
  EXPECT_EQ(h.participant, 1u);
  EXPECT_EQ(h.writer, 2u);
  out[0] = std::byte{0};
  wire::Reader bad(out);
  EXPECT_THROW(decode_packet_header(bad), CorruptionError);
}

TEST(Codec, LoanNoticeIsSmall) {
  auto wire = encode_loan(1, 2, LoanNotice{3, 4, 5, 6, 5'000'000});
  EXPECT_LT(wire.size(), 100u);
}

TEST(SocketAddress, Parse) {
  auto a = SocketAddress::parse("127.0.0.1:17400");
  EXPECT_EQ(a.to_string(), "127.0.0.1:17400");
  EXPECT_EQ(SocketAddress::parse("localhost:1").address, 0x7f000001u);
  EXPECT_THROW(SocketAddress::parse("nope"), InvalidArgument);
  EXPECT_THROW(SocketAddress::parse("1.2.3.4:99999"), InvalidArgument);
}

TEST(Segment, BorrowExhaustRelease) {
  auto seg = SharedSegment::create("/cbench-test-seg-" + std::to_string(::getpid()), 100, 4);
  EXPECT_EQ(seg->borrow(), 0u);
  EXPECT_EQ(seg->borrow(), 1u);
  EXPECT_EQ(seg->borrow(), 2u);
  EXPECT_EQ(seg->borrow(), 3u);
  EXPECT_THROW(seg->borrow(), BackpressureError);
  seg->add_refs(2, 2);
  seg->release(2);
  EXPECT_EQ(seg->refcount(2), 2u);
  seg->release(2);
  seg->release(2);
  EXPECT_EQ(seg->free_slots(), 1u);
  EXPECT_EQ(seg->borrow(), 2u);
  EXPECT_EQ(seg->slot(0).size(), 100u);
  EXPECT_EQ(reinterpret_cast<std::uintptr_t>(seg->slot(1).data()) % 64, 0u);
}

TEST(Segment, SecondMappingSharesSlots) {
  auto name = "/cbench-test-seg2-" + std::to_string(::getpid());
  auto seg = SharedSegment::create(name, 16, 2);
  auto slot = seg->borrow();
  seg->slot(slot)[3] = std::byte{0x5a};
  auto view = SharedSegment::open(name);
  EXPECT_EQ(view->slot_size(), 16u);
  EXPECT_EQ(view->slot(slot)[3], std::byte{0x5a});
  view->release(slot);
  EXPECT_EQ(seg->refcount(slot), 0u);
  EXPECT_THROW(SharedSegment::open("/cbench-does-not-exist"), SystemError);
}

class TransportPair : public ::testing::Test {
 protected:
  DiscoveryBroker broker;
  std::shared_ptr<Context> a = networked_context(broker);
  std::shared_ptr<Context> b = networked_context(broker);
};

TEST_F(TransportPair, OneKilobyteIsOneDatagram) {
  auto talker = make_node(a, "talker");
  auto listener = make_node(b, "listener");
  auto sub = listener->create_subscription("t", QoSProfile::reliable(), nullptr);
  auto pub = talker->create_publisher("t");
  ASSERT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
  auto before = a->stats().datagrams_sent;
  pub->publish(Bytes(1000));
  // Announcements may interleave; count only data datagrams via the receiver.
  ASSERT_TRUE(sub->wait_for_message(2s));
  EXPECT_GE(a->stats().datagrams_sent - before, 1u);
  auto frags = fragment_count(1000 + kSerializedHeaderSize, kMaxUdpPayload - kTransportHeaderSize);
  EXPECT_EQ(frags, 1u);
}

TEST_F(TransportPair, FiveHundredKilobytesIsEightDatagrams) {
  auto talker = make_node(a, "talker");
  auto listener = make_node(b, "listener");
  auto sub = listener->create_subscription("t", QoSProfile::best_effort(), nullptr);
  auto pub = talker->create_publisher("t", QoSProfile::best_effort());
  ASSERT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
  // Quiet period so announcements do not land in the measured window.
  auto base = a->stats().datagrams_sent;
  auto announce_free = [&] {
    auto s = a->stats().datagrams_sent;
    pub->publish(Bytes(500'000));
    return a->stats().datagrams_sent - s;
  };
  auto sent = announce_free();
  EXPECT_GE(sent, 8u);
  EXPECT_LE(sent, 9u);
  (void)base;
  ASSERT_TRUE(sub->wait_for_message(2s));
  auto d = sub->take();
  EXPECT_EQ(std::get<std::shared_ptr<const SerializedMessage>>(*d)->data_size(), 500'000u);
}

TEST_F(TransportPair, NoMatchedRemotesNoDatagrams) {
  auto talker = make_node(a, "talker");
  auto pub = talker->create_publisher("lonely");
  std::this_thread::sleep_for(50ms);
  auto before = a->stats();
  pub->publish(Bytes(1000));
  EXPECT_EQ(a->stats().serializations, before.serializations);
  EXPECT_EQ(a->participant()->unacknowledged(pub->id()), 0u);
}

TEST_F(TransportPair, ReliableDeliveryIsCompleteAndOrdered) {
  auto talker = make_node(a, "talker");
  auto listener = make_node(b, "listener");
  std::mutex m;
  std::vector<std::uint64_t> seqs;
  auto sub = listener->create_subscription("t", QoSProfile::reliable(1000), [&](const ReceivedMessage& msg) {
    std::lock_guard lock(m);
    seqs.push_back(msg.sequence);
  });
  auto pub = talker->create_publisher("t", QoSProfile::reliable(1000));
  ASSERT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
  auto exec = std::make_shared<Executor>(ExecutorKind::single_threaded, b);
  exec->add_node(listener);
  ExecutorThread spin(exec);
  const int n = 2000;
  for (int i = 0; i < n; ++i) pub->publish(Bytes(i % 3 == 0 ? 100'000 : 64));
  ASSERT_TRUE(eventually([&] {
    std::lock_guard lock(m);
    return seqs.size() == n;
  }, 30s));
  std::lock_guard lock(m);
  for (int i = 0; i < n; ++i) EXPECT_EQ(seqs[i], static_cast<std::uint64_t>(i + 1));
}

TEST_F(TransportPair, TwoPublishersMatchIndependently) {
  auto t1 = make_node(a, "t1");
  auto t2 = make_node(a, "t2");
  auto listener = make_node(b, "listener");
  auto sub = listener->create_subscription("chatter", QoSProfile::reliable(), nullptr);
  auto p1 = t1->create_publisher("chatter");
  auto p2 = t2->create_publisher("chatter");
  EXPECT_TRUE(eventually([&] {
    return p1->matched_subscription_count() == 1 && p2->matched_subscription_count() == 1 &&
           b->participant()->remote_writer_count(sub->id()) == 2;
  }));
}

TEST_F(TransportPair, DepartureUnmatches) {
  auto listener = make_node(b, "listener");
  auto sub = listener->create_subscription("t", QoSProfile::reliable(), nullptr);
  {
    auto c = networked_context(broker);
    auto talker = make_node(c, "talker");
    auto pub = talker->create_publisher("t");
    ASSERT_TRUE(eventually([&] { return b->participant()->remote_writer_count(sub->id()) == 1; }));
  }
  EXPECT_TRUE(eventually([&] { return b->participant()->remote_writer_count(sub->id()) == 0; }));
}

TEST_F(TransportPair, LoanedPublishSendsOnlyControlBytes) {
  auto talker = make_node(a, "talker");
  auto listener = make_node(b, "listener");
  std::atomic<int> got{0};
  std::atomic<std::size_t> size{0};
  auto sub = listener->create_subscription("big", QoSProfile::reliable(), [&](const ReceivedMessage& m) {
    EXPECT_EQ(m.path, ReceivedMessage::Path::loaned);
    size = m.data.size();
    if (m.data[4'999'999] == std::byte{0x42}) ++got;
  });
  PublisherOptions po;
  po.loaned = true;
  po.loan_slot_size = 5'000'000;
  auto pub = talker->create_publisher("big", QoSProfile::reliable(), po);
  ASSERT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
  auto exec = std::make_shared<Executor>(ExecutorKind::single_threaded, b);
  exec->add_node(listener);
  ExecutorThread spin(exec);

  auto loan = pub->borrow_loaned();
  EXPECT_EQ(loan.slot(), 0u);
  loan.data()[4'999'999] = std::byte{0x42};
  // Hold announcements off the counter by sampling right around the publish.
  auto before = a->stats().datagram_bytes_sent;
  pub->publish_loaned(loan);
  auto sent = a->stats().datagram_bytes_sent - before;
  EXPECT_LT(sent, 100u);
  EXPECT_THROW(pub->publish_loaned(loan), InvalidState);
  ASSERT_TRUE(eventually([&] { return got.load() == 1; }));
  EXPECT_EQ(size.load(), 5'000'000u);
  EXPECT_EQ(a->stats().serializations, 0u);
  EXPECT_TRUE(eventually([&] { return pub->segment()->free_slots() == po.loan_slot_count; }));
}

TEST_F(TransportPair, LoanExhaustionIsBackpressure) {
  auto talker = make_node(a, "talker");
  PublisherOptions po;
  po.loaned = true;
  po.loan_slot_size = 1024;
  po.loan_slot_count = 2;
  auto pub = talker->create_publisher("x", QoSProfile::reliable(), po);
  auto l1 = pub->borrow_loaned();
  auto l2 = pub->borrow_loaned();
  EXPECT_THROW(pub->borrow_loaned(), BackpressureError);
  l1 = LoanedMessage();
  EXPECT_NO_THROW(pub->borrow_loaned());
}

TEST_F(TransportPair, LoanedSlotReusableAfterSubscriberRelease) {
  auto talker = make_node(a, "talker");
  auto listener = make_node(b, "listener");
  auto sub = listener->create_subscription("x", QoSProfile::reliable(), nullptr);
  PublisherOptions po;
  po.loaned = true;
  po.loan_slot_size = 64;
  po.loan_slot_count = 1;
  auto pub = talker->create_publisher("x", QoSProfile::reliable(), po);
  ASSERT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
  auto slot = pub->borrow_loaned_slot();
  pub->publish_loaned_slot(slot);
  EXPECT_THROW(pub->publish_loaned_slot(slot), InvalidState);
  ASSERT_TRUE(sub->wait_for_message(2s));
  EXPECT_EQ(pub->segment()->refcount(slot), 1u);
  EXPECT_THROW(pub->borrow_loaned_slot(), BackpressureError);
  sub->take();
  EXPECT_EQ(pub->segment()->refcount(slot), 0u);
  EXPECT_EQ(pub->borrow_loaned_slot(), slot);
}

TEST(Loaned, OffHostReaderIsUnsupported) {
  DiscoveryBroker broker;
  auto a = networked_context(broker, 1);
  auto b = networked_context(broker, 2);
  auto talker = make_node(a, "talker");
  auto listener = make_node(b, "listener");
  auto sub = listener->create_subscription("x", QoSProfile::reliable(), nullptr);
  PublisherOptions po;
  po.loaned = true;
  po.loan_slot_size = 64;
  auto pub = talker->create_publisher("x", QoSProfile::reliable(), po);
  ASSERT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
  auto loan = pub->borrow_loaned();
  EXPECT_THROW(pub->publish_loaned(loan), Unsupported);
}

TEST(Loaned, PublishRequiresExactSlotSize) {
  auto ctx = local_context();
  auto node = make_node(ctx, "n");
  PublisherOptions po;
  po.loaned = true;
  po.loan_slot_size = 16;
  auto pub = node->create_publisher("x", QoSProfile::reliable(), po);
  EXPECT_THROW(pub->publish(Bytes(15)), InvalidArgument);
  EXPECT_NO_THROW(pub->publish(Bytes(16)));
  PublisherOptions bad;
  bad.loaned = true;
  EXPECT_THROW(node->create_publisher("y", QoSProfile::reliable(), bad), InvalidArgument);
  auto plain = node->create_publisher("z");
  EXPECT_THROW(plain->borrow_loaned(), Unsupported);
}

TEST(Loaned, LatencyFlatAcrossSizes) {
  DiscoveryBroker broker;
  auto a = networked_context(broker);
  auto b = networked_context(broker);
  auto mean_latency = [&](std::size_t size, const std::string& topic) {
    auto talker = make_node(a, "talker" + topic);
    auto listener = make_node(b, "listener" + topic);
    std::mutex m;
    std::vector<std::int64_t> lat;
    auto sub = listener->create_subscription(topic, QoSProfile::reliable(), [&](const ReceivedMessage& msg) {
      std::lock_guard lock(m);
      lat.push_back(b->now_ns() - msg.publish_timestamp_ns);
    });
    PublisherOptions po;
    po.loaned = true;
    po.loan_slot_size = size;
    auto pub = talker->create_publisher(topic, QoSProfile::reliable(), po);
    EXPECT_TRUE(eventually([&] { return pub->matched_subscription_count() == 1; }));
    auto exec = std::make_shared<Executor>(ExecutorKind::single_threaded, b);
    exec->add_node(listener);
    ExecutorThread spin(exec);
    for (int i = 0; i < 30; ++i) {
      auto loan = pub->borrow_loaned();
      pub->publish_loaned(loan);
      std::this_thread::sleep_for(5ms);
    }
    eventually([&] {
      std::lock_guard lock(m);
      return lat.size() == 30;
    });
    spin.stop();
    std::lock_guard lock(m);
    double sum = 0;
    for (auto v : lat) sum += static_cast<double>(v);
    return sum / static_cast<double>(lat.size());
  };
  auto small = mean_latency(1000, "small");
  auto large = mean_latency(5'000'000, "large");
  EXPECT_LE(std::max(small, large) / std::min(small, large), 1.5);
}

// Dropping every handle while datagrams are being delivered can leave the
// receive thread holding the last reference to the context.
TEST(TransportTeardown, ReleaseDuringDeliveryIsSafe) {
  DiscoveryBroker broker;
  auto a = networked_context(broker);
  auto talker = make_node(a, "talker");
  auto pub = talker->create_publisher("burst", QoSProfile::best_effort());
  std::atomic<bool> run{true};
  std::thread sender([&] {
    while (run) {
      pub->publish(Bytes(64));
      std::this_thread::sleep_for(50us);
    }
  });
  for (int i = 0; i < 20; ++i) {
    auto b = networked_context(broker);
    auto listener = make_node(b, "listener");
    auto sub = listener->create_subscription("burst", QoSProfile::best_effort(), nullptr);
    ASSERT_TRUE(sub->wait_for_message(5s));
    listener.reset();
    b.reset();
    sub.reset();
  }
  run = false;
  sender.join();
}
