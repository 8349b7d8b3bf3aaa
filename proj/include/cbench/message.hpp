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

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cbench/wire.hpp"

namespace cbench {

/// A message body as published: topic, per-publisher sequence number,
/// monotonic publish time and the opaque data bytes.
struct Payload {
  std::string topic;
  std::uint64_t sequence = 0;
  std::int64_t publish_timestamp_ns = 0;
  Bytes data;

  bool operator==(const Payload&) const = default;
};

/// Payloads travel between co-located endpoints as shared immutable references.
using PayloadRef = std::shared_ptr<const Payload>;

enum class Reliability : std::uint8_t { reliable = 0, best_effort = 1 };

// Only `volatile_` carries semantics. `transient_local` is accepted so that
// callers can express a profile the intra-process path refuses.
enum class Durability : std::uint8_t { volatile_ = 0, transient_local = 1 };

struct QoSProfile {
  Reliability reliability = Reliability::reliable;
  std::uint32_t history_depth = 10;
  Durability durability = Durability::volatile_;

  static QoSProfile reliable(std::uint32_t depth = 10) { return {Reliability::reliable, depth, Durability::volatile_}; }
  static QoSProfile best_effort(std::uint32_t depth = 10) {
    return {Reliability::best_effort, depth, Durability::volatile_};
  }

  /// Throws InvalidArgument when history_depth is zero.
  void validate() const;

  bool operator==(const QoSProfile&) const = default;
};

/// Membership in the QoS subset the intra-process path can honor:
/// any reliability, volatile durability, finite (>= 1) history.
bool ipc_compatible(const QoSProfile& qos) noexcept;

/// Reliable subscriptions need a reliable publisher; best-effort ones accept both.
bool qos_compatible(const QoSProfile& pub, const QoSProfile& sub) noexcept;

struct MessageHeader {
  std::string topic;
  std::uint64_t sequence = 0;
  std::int64_t publish_timestamp_ns = 0;

  bool operator==(const MessageHeader&) const = default;
};

/// Body layout: topic hash (8 B) | sequence (8 B) | timestamp (8 B) | data.
inline constexpr std::size_t kSerializedHeaderSize = 24;

struct SerializedMessage {
  MessageHeader header;
  Bytes body;

  std::size_t data_size() const noexcept { return body.size() - kSerializedHeaderSize; }
  ByteView data() const noexcept { return ByteView(body).subspan(kSerializedHeaderSize); }

  /// Rebuilds the header from `body`; the topic hash must match `topic`.
  static SerializedMessage from_body(std::string topic, Bytes body);

  bool operator==(const SerializedMessage&) const = default;
};

SerializedMessage serialize(const Payload& payload);
Payload deserialize(const SerializedMessage& msg);

/// Identifies one message of one publisher.
struct MessageId {
  std::uint64_t publisher = 0;
  std::uint64_t sequence = 0;

  auto operator<=>(const MessageId&) const = default;
};

/// Wire layout: topic hash (8 B) | sequence (8 B) | timestamp (8 B) |
/// index (4 B) | count (4 B) | body bytes.
inline constexpr std::size_t kFragmentHeaderSize = 32;

/// IPv4 UDP maximum payload.
inline constexpr std::size_t kMaxUdpPayload = 65507;

struct Fragment {
  MessageId message_id;
  std::uint64_t topic_hash = 0;
  std::int64_t publish_timestamp_ns = 0;
  std::uint32_t index = 0;
  std::uint32_t count = 0;
  Bytes bytes;

  bool operator==(const Fragment&) const = default;
};

/// Body bytes one fragment can carry under `max_datagram_payload`.
std::size_t usable_fragment_bytes(std::size_t max_datagram_payload);

/// Number of fragments `fragment` produces for a body of `total_length` bytes.
std::size_t fragment_count(std::size_t total_length, std::size_t max_datagram_payload);

/// Splits msg.body into the minimal number of fragments. Throws
/// InvalidArgument when the limit leaves no room for body bytes.
std::vector<Fragment> fragment(const SerializedMessage& msg, std::size_t max_datagram_payload,
                               std::uint64_t publisher_id = 0);

Bytes encode_fragment(const Fragment& f);
void encode_fragment(const Fragment& f, Bytes& out);
/// `publisher_id` is not on the wire; the receiver supplies it from the
/// datagram's transport header.
Fragment decode_fragment(ByteView wire, std::uint64_t publisher_id = 0);

/// Reassembles a complete set; std::nullopt when an index is missing.
/// Duplicates are ignored. Throws CorruptionError on conflicting counts or
/// mixed message ids.
std::optional<Bytes> reassemble(const std::vector<Fragment>& fragments);

/// Incremental reassembly keyed by message id with age-based expiry.
/// Confined to one receiving context.
class Reassembler {
 public:
  using Clock = std::chrono::steady_clock;

  explicit Reassembler(std::chrono::nanoseconds timeout = std::chrono::seconds(1)) : timeout_(timeout) {}

  /// Returns the full body once every index has arrived. Throws
  /// CorruptionError if `f.count` disagrees with earlier fragments.
  std::optional<Bytes> add(Fragment f, Clock::time_point now = Clock::now());

  /// Drops partial messages older than the timeout; returns how many.
  std::size_t expire(Clock::time_point now = Clock::now());

  std::size_t pending() const noexcept { return partial_.size(); }
  std::uint64_t bytes_copied() const noexcept { return bytes_copied_; }

 private:
  struct Partial {
    std::uint32_t count = 0;
    std::uint32_t received = 0;
    std::vector<Bytes> pieces;
    std::vector<bool> have;
    Clock::time_point started;
  };

  std::chrono::nanoseconds timeout_;
  std::map<MessageId, Partial> partial_;
  std::uint64_t bytes_copied_ = 0;
};

}  // namespace cbench
