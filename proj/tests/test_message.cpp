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

#include <algorithm>
#include <random>

#include "cbench/message.hpp"
#include "cbench/ring_buffer.hpp"

using namespace cbench;

namespace {

Payload make_payload(std::size_t n, std::uint64_t seq = 1, std::uint8_t fill = 0) {
  Payload p;
  p.topic = "/chatter";
  p.sequence = seq;
  p.publish_timestamp_ns = 123456789;
  p.data.assign(n, std::byte{fill});
  return p;
}

}  // namespace

TEST(Serialize, BodyLengthIsHeaderPlusData) {
  auto msg = serialize(make_payload(1024));
  EXPECT_EQ(msg.body.size(), 1024 + kSerializedHeaderSize);
  EXPECT_EQ(msg.data_size(), 1024u);
}

TEST(Serialize, RoundTrip) {
  auto p = make_payload(77, 42, 0xab);
  EXPECT_EQ(deserialize(serialize(p)), p);
}

TEST(Serialize, FiveMegabytePayload) {
  auto msg = serialize(make_payload(5'000'000));
  EXPECT_EQ(msg.body.size(), std::size_t{5'000'000} + 24);
}

TEST(Serialize, DistinctFieldsGiveDistinctBodies) {
  auto base = make_payload(8, 1);
  auto other_seq = make_payload(8, 2);
  auto other_ts = base;
  other_ts.publish_timestamp_ns += 1;
  auto other_topic = base;
  other_topic.topic = "/other";
  auto other_data = make_payload(8, 1, 1);
  auto b = serialize(base).body;
  EXPECT_NE(b, serialize(other_seq).body);
  EXPECT_NE(b, serialize(other_ts).body);
  EXPECT_NE(b, serialize(other_topic).body);
  EXPECT_NE(b, serialize(other_data).body);
}

TEST(Serialize, FromBodyRejectsForeignTopic) {
  auto msg = serialize(make_payload(4));
  EXPECT_THROW(SerializedMessage::from_body("/elsewhere", msg.body), CorruptionError);
  EXPECT_EQ(SerializedMessage::from_body("/chatter", msg.body), msg);
}

TEST(QoS, Validation) {
  QoSProfile q;
  q.history_depth = 0;
  EXPECT_THROW(q.validate(), InvalidArgument);
  EXPECT_NO_THROW(QoSProfile::reliable(1).validate());
}

TEST(QoS, IpcCompatibleSubset) {
  EXPECT_TRUE(ipc_compatible(QoSProfile::reliable()));
  EXPECT_TRUE(ipc_compatible(QoSProfile::best_effort()));
  auto durable = QoSProfile::reliable();
  durable.durability = Durability::transient_local;
  EXPECT_FALSE(ipc_compatible(durable));
}

TEST(QoS, ReliableSubscriptionNeedsReliablePublisher) {
  EXPECT_TRUE(qos_compatible(QoSProfile::reliable(), QoSProfile::reliable()));
  EXPECT_TRUE(qos_compatible(QoSProfile::reliable(), QoSProfile::best_effort()));
  EXPECT_TRUE(qos_compatible(QoSProfile::best_effort(), QoSProfile::best_effort()));
  EXPECT_FALSE(qos_compatible(QoSProfile::best_effort(), QoSProfile::reliable()));
}

TEST(Fragment, SmallMessageIsOneFragment) {
  auto msg = serialize(make_payload(1000));
  auto frags = fragment(msg, kMaxUdpPayload);
  ASSERT_EQ(frags.size(), 1u);
  EXPECT_EQ(frags[0].index, 0u);
  EXPECT_EQ(frags[0].count, 1u);
}

TEST(Fragment, HalfMegabyteCountFollowsCeiling) {
  SerializedMessage msg;
  msg.header.topic = "/t";
  msg.body.resize(512'000);
  auto usable = kMaxUdpPayload - kFragmentHeaderSize;
  auto expected = (512'000 + usable - 1) / usable;
  EXPECT_EQ(expected, 8u);
  EXPECT_EQ(fragment(msg, kMaxUdpPayload).size(), expected);
  EXPECT_EQ(fragment_count(512'000, kMaxUdpPayload), expected);
}

TEST(Fragment, EmptyBodyStillOneFragment) {
  SerializedMessage msg;
  msg.header.topic = "/t";
  auto frags = fragment(msg, kMaxUdpPayload);
  ASSERT_EQ(frags.size(), 1u);
  EXPECT_TRUE(frags[0].bytes.empty());
}

TEST(Fragment, LimitTooSmall) {
  auto msg = serialize(make_payload(10));
  EXPECT_THROW(fragment(msg, kFragmentHeaderSize), InvalidArgument);
  EXPECT_THROW(fragment(msg, 3), InvalidArgument);
  EXPECT_NO_THROW(fragment(msg, kFragmentHeaderSize + 1));
}

TEST(Fragment, WireRoundTrip) {
  auto msg = serialize(make_payload(300, 9, 7));
  for (const auto& f : fragment(msg, 100, 55)) {
    auto wire = encode_fragment(f);
    EXPECT_EQ(wire.size(), kFragmentHeaderSize + f.bytes.size());
    EXPECT_EQ(decode_fragment(wire, 55), f);
  }
  EXPECT_THROW(decode_fragment(Bytes(10)), CorruptionError);
}

TEST(Fragment, CountIsMinimal) {
  for (std::size_t limit : {33u, 40u, 100u, 1000u, 65507u})
    for (std::size_t len : {0u, 1u, 7u, 8u, 67u, 68u, 999u, 1000u, 1001u, 200000u}) {
      auto usable = limit - kFragmentHeaderSize;
      auto c = fragment_count(len, limit);
      if (len == 0) {
        EXPECT_EQ(c, 1u);
        continue;
      }
      EXPECT_LT((c - 1) * usable, len);
      EXPECT_LE(len, c * usable);
    }
}

TEST(Reassemble, AnyOrder) {
  SerializedMessage msg;
  msg.header.topic = "/t";
  msg.body.resize(512'000);
  std::mt19937 rng(3);
  for (auto& b : msg.body) b = std::byte(rng() & 0xff);
  auto frags = fragment(msg, kMaxUdpPayload, 1);
  ASSERT_EQ(frags.size(), 8u);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(frags.begin(), frags.end(), rng);
    auto out = reassemble(frags);
    ASSERT_TRUE(out);
    EXPECT_EQ(*out, msg.body);
  }
}

TEST(Reassemble, MissingPieceIsIncomplete) {
  SerializedMessage msg;
  msg.body.resize(512'000);
  auto frags = fragment(msg, kMaxUdpPayload, 1);
  frags.erase(frags.begin() + 3);
  EXPECT_FALSE(reassemble(frags));
}

TEST(Reassemble, DuplicatesAreIdempotent) {
  SerializedMessage msg;
  msg.body.resize(200'000, std::byte{5});
  auto frags = fragment(msg, kMaxUdpPayload, 1);
  auto doubled = frags;
  doubled.push_back(frags[1]);
  EXPECT_EQ(reassemble(doubled), reassemble(frags));
}

TEST(Reassemble, ConflictingCountsAreCorruption) {
  SerializedMessage msg;
  msg.body.resize(200'000);
  auto frags = fragment(msg, kMaxUdpPayload, 1);
  frags[1].count += 1;
  EXPECT_THROW(reassemble(frags), CorruptionError);
}

TEST(Reassembler, IncrementalWithExpiry) {
  SerializedMessage msg;
  msg.body.resize(150'000, std::byte{1});
  auto frags = fragment(msg, kMaxUdpPayload, 9);
  ASSERT_EQ(frags.size(), 3u);
  Reassembler r(std::chrono::seconds(1));
  auto t0 = Reassembler::Clock::now();
  EXPECT_FALSE(r.add(frags[2], t0));
  EXPECT_FALSE(r.add(frags[2], t0));
  EXPECT_FALSE(r.add(frags[0], t0));
  auto out = r.add(frags[1], t0);
  ASSERT_TRUE(out);
  EXPECT_EQ(*out, msg.body);
  EXPECT_EQ(r.pending(), 0u);

  EXPECT_FALSE(r.add(frags[0], t0));
  EXPECT_EQ(r.expire(t0 + std::chrono::milliseconds(500)), 0u);
  EXPECT_EQ(r.expire(t0 + std::chrono::milliseconds(1500)), 1u);
  EXPECT_EQ(r.pending(), 0u);
}

TEST(RingBuffer, FifoAndOverwriteOldest) {
  RingBuffer<int> rb(2);
  EXPECT_THROW(RingBuffer<int>(0), InvalidArgument);
  rb.push(1);
  rb.push(2);
  EXPECT_EQ(rb.take(), 1);
  EXPECT_EQ(rb.take(), 2);
  EXPECT_FALSE(rb.take());

  RingBuffer<char> one(1);
  one.push('A');
  one.push('B');
  EXPECT_EQ(one.take(), 'B');
  EXPECT_EQ(one.drops(), 1u);
  EXPECT_TRUE(one.empty());
}
