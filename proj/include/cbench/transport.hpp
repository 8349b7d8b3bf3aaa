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

// Inter-process path: discovery bookkeeping, the rendezvous broker, the
// reliable datagram participant and the shared-memory segment behind
// loaned messages.

#include <netinet/in.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cbench/graph.hpp"
#include "cbench/message.hpp"

namespace cbench {

enum class Direction : std::uint8_t { publisher = 0, subscription = 1 };

struct EndpointInfo {
  EntityId id = 0;
  std::string topic;
  Direction direction = Direction::publisher;
  QoSProfile qos;

  bool operator==(const EndpointInfo&) const = default;
};

struct ParticipantInfo {
  std::uint64_t id = 0;
  std::uint64_t host_id = 0;
  std::uint32_t address = 0;  // IPv4, host order
  std::uint16_t port = 0;
  std::uint32_t node_count = 0;
  std::uint64_t revision = 0;
  std::vector<EndpointInfo> endpoints;

  bool operator==(const ParticipantInfo&) const = default;
};

/// True when a publisher/subscription pair on the same topic may talk.
bool endpoints_match(const EndpointInfo& a, const EndpointInfo& b) noexcept;

/// Charged once per participant by the footprint model.
inline constexpr std::size_t kParticipantFootprint = 64 * 1024;

/// Per-participant record of every compatible (local, remote) endpoint pair.
/// Each record owns a resource block of `block_size` bytes, so with N
/// mutually visible participants the system-wide total grows as N^2.
/// Not synchronized; the participant guards it.
class DiscoveryDatabase {
 public:
  struct RemoteKey {
    std::uint64_t participant;
    EntityId endpoint;
    auto operator<=>(const RemoteKey&) const = default;
  };

  explicit DiscoveryDatabase(std::uint64_t self, std::size_t block_size = 8192)
      : self_(self), block_size_(block_size) {}

  std::uint64_t self() const noexcept { return self_; }

  void add_local(EndpointInfo endpoint);
  void remove_local(EntityId id);
  /// Replaces everything known about `info.id`; ignores self and stale revisions.
  void upsert_remote(ParticipantInfo info);
  void remove_remote(std::uint64_t participant);

  const std::vector<EndpointInfo>& local_endpoints() const noexcept { return local_; }
  std::vector<ParticipantInfo> remotes() const;
  const ParticipantInfo* remote(std::uint64_t participant) const;
  /// Known participants including self.
  std::size_t participant_count() const noexcept { return remotes_.size() + 1; }

  std::size_t matched_record_count() const noexcept { return records_.size(); }
  /// matched records x block size + per-participant constant.
  std::size_t footprint_bytes() const noexcept { return records_.size() * block_size_ + kParticipantFootprint; }

  /// Remote participants hosting readers matched to local writer `writer`.
  struct RemoteTarget {
    std::uint64_t participant;
    std::size_t readers;
    bool any_reliable;
  };
  std::vector<RemoteTarget> remote_targets(EntityId writer) const;
  /// Local readers matched to a remote writer.
  std::vector<EntityId> local_readers_for(std::uint64_t participant, EntityId remote_writer) const;
  std::size_t matched_remote_count(EntityId local) const;

 private:
  void match_local(const EndpointInfo& local);
  void match_remote(const ParticipantInfo& remote);

  std::uint64_t self_;
  std::size_t block_size_;
  std::vector<EndpointInfo> local_;
  std::map<std::uint64_t, ParticipantInfo> remotes_;
  std::map<std::pair<EntityId, RemoteKey>, Bytes> records_;
  std::map<RemoteKey, std::set<EntityId>> by_remote_;
};

// Datagram framing shared by every packet: magic (2 B) | version (1 B) |
// kind (1 B) | source participant (8 B) | writer id (8 B).
inline constexpr std::size_t kTransportHeaderSize = 20;
inline constexpr std::uint16_t kTransportMagic = 0xCB07;

enum class PacketKind : std::uint8_t { data = 1, ack = 2, loan = 3, announce = 4, bye = 5 };

struct PacketHeader {
  PacketKind kind = PacketKind::data;
  std::uint64_t participant = 0;
  EntityId writer = 0;
};

void encode_packet_header(const PacketHeader& h, Bytes& out);
PacketHeader decode_packet_header(wire::Reader& r);

Bytes encode_announce(const ParticipantInfo& info);
ParticipantInfo decode_announce(ByteView body);

/// Control record sent instead of payload bytes on the loaned path.
struct LoanNotice {
  std::uint64_t topic_hash = 0;
  std::uint64_t sequence = 0;
  std::int64_t publish_timestamp_ns = 0;
  std::uint32_t slot = 0;
  std::uint64_t size = 0;
};
Bytes encode_loan(std::uint64_t participant, EntityId writer, const LoanNotice& n);

/// Shared-memory segment of fixed-size slots. Layout, host byte order:
///   magic (8 B) | version (4 B) | slot_count (4 B) | slot_size (8 B) |
///   refcount[slot_count] (4 B each, atomic), padded to 64 B | slots, 64 B aligned.
/// A slot with refcount 0 is free. Borrowing sets it to 1; publishing adds one
/// reference per reader set and drops the publisher's own.
class SharedSegment {
 public:
  static constexpr std::uint64_t kMagic = 0x43424c4f414e5347ULL;  // "CBLOANSG"

  static std::shared_ptr<SharedSegment> create(const std::string& name, std::size_t slot_size,
                                               std::uint32_t slot_count);
  static std::shared_ptr<SharedSegment> open(const std::string& name);
  static std::string name_for(std::uint64_t participant, EntityId writer);

  ~SharedSegment();
  SharedSegment(const SharedSegment&) = delete;
  SharedSegment& operator=(const SharedSegment&) = delete;

  const std::string& name() const noexcept { return name_; }
  std::size_t slot_size() const noexcept { return slot_size_; }
  std::uint32_t slot_count() const noexcept { return slot_count_; }

  std::optional<std::uint32_t> try_borrow() noexcept;
  /// Throws BackpressureError when every slot is referenced.
  std::uint32_t borrow();
  void add_refs(std::uint32_t slot, std::uint32_t n) noexcept;
  void release(std::uint32_t slot) noexcept;
  std::uint32_t refcount(std::uint32_t slot) const noexcept;
  std::uint32_t free_slots() const noexcept;

  std::span<std::byte> slot(std::uint32_t index) const;

 private:
  SharedSegment(std::string name, void* base, std::size_t mapped, bool owner);
  std::atomic<std::uint32_t>* refcounts() const noexcept;

  std::string name_;
  void* base_;
  std::size_t mapped_;
  bool owner_;
  std::size_t slot_size_ = 0;
  std::uint32_t slot_count_ = 0;
  std::size_t slots_offset_ = 0;
};

/// A received loaned message; releases its slot reference on destruction.
struct LoanedSample {
  MessageHeader header;
  std::shared_ptr<SharedSegment> segment;
  std::uint32_t slot = 0;
  std::size_t size = 0;

  LoanedSample(MessageHeader h, std::shared_ptr<SharedSegment> seg, std::uint32_t s, std::size_t n)
      : header(std::move(h)), segment(std::move(seg)), slot(s), size(n) {}
  ~LoanedSample();
  LoanedSample(const LoanedSample&) = delete;
  LoanedSample& operator=(const LoanedSample&) = delete;

  ByteView data() const { return ByteView(segment->slot(slot).data(), size); }
};

struct SocketAddress {
  std::uint32_t address = 0;  // host order
  std::uint16_t port = 0;

  static SocketAddress parse(const std::string& host_port);
  std::string to_string() const;
  sockaddr_in to_sockaddr() const;
  auto operator<=>(const SocketAddress&) const = default;
};

/// Rendezvous for discovery. Relays each participant's announcement to
/// every other participant, replays the known set to newcomers, and
/// announces departure for participants that fall silent.
class DiscoveryBroker {
 public:
  explicit DiscoveryBroker(const std::string& bind = "127.0.0.1:0",
                           std::chrono::milliseconds liveliness_timeout = std::chrono::seconds(5));
  ~DiscoveryBroker();
  DiscoveryBroker(const DiscoveryBroker&) = delete;
  DiscoveryBroker& operator=(const DiscoveryBroker&) = delete;

  std::string address() const;
  std::size_t participant_count() const;
  std::vector<ParticipantInfo> participants() const;

 private:
  void run();

  int fd_ = -1;
  SocketAddress bound_;
  std::chrono::milliseconds timeout_;
  std::atomic<bool> stop_{false};
  mutable std::mutex mutex_;
  struct Entry {
    ParticipantInfo info;
    SocketAddress from;
    SteadyClock::time_point last_seen;
  };
  std::map<std::uint64_t, Entry> entries_;
  std::thread thread_;
};

/// One per context. Owns the datagram socket, the receiver thread, the
/// discovery database and the reliability state of every local writer.
class Participant {
 public:
  Participant(Context& context, const ContextOptions& options);
  ~Participant();
  Participant(const Participant&) = delete;
  Participant& operator=(const Participant&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t host_id() const noexcept { return host_id_; }
  SocketAddress address() const noexcept { return local_; }
  /// True when called from the receive thread, e.g. from inside a delivery.
  bool on_receive_thread() const noexcept { return std::this_thread::get_id() == thread_.get_id(); }

  void add_writer(const Publisher& pub);
  void remove_writer(EntityId id);
  void add_reader(const std::shared_ptr<Subscription>& sub);
  void remove_reader(EntityId id);
  void set_node_count(std::size_t n);

  /// Sends the current endpoint set to the rendezvous.
  void announce();
  /// Sends a departure notice; also done on destruction.
  void leave();

  bool has_remote_readers(EntityId writer) const;
  std::size_t remote_reader_count(EntityId writer) const;
  std::size_t remote_writer_count(EntityId reader) const;
  /// Remote participants with readers of `writer` that live on another host.
  bool has_offhost_readers(EntityId writer) const;

  /// Fragments and sends to every remote participant with matched readers.
  /// Reliable writers keep the message until acknowledged, retransmitting
  /// every 50 ms up to 20 times. With `block`, waits while the writer's
  /// unacknowledged window is full.
  void send(EntityId writer, const QoSProfile& qos, std::shared_ptr<const SerializedMessage> msg, bool block);
  /// Adds one slot reference per remote participant with matched readers,
  /// then sends each the loan notice. Notices are always acknowledged; a
  /// participant that never acknowledges has its reference released here.
  /// Returns how many participants were addressed.
  std::size_t send_loan(EntityId writer, const QoSProfile& qos, const LoanNotice& notice,
                        const std::shared_ptr<SharedSegment>& segment, bool block);

  std::size_t matched_record_count() const;
  std::size_t footprint_bytes() const;
  std::size_t known_participants() const;
  std::vector<ParticipantInfo> remote_participants() const;
  std::size_t unacknowledged(EntityId writer) const;

  /// Waits until `pred(*this)` holds or the timeout elapses.
  template <typename Pred>
  bool wait_until(Pred pred, std::chrono::nanoseconds timeout) const {
    auto deadline = SteadyClock::now() + timeout;
    while (!pred(*this)) {
      if (SteadyClock::now() >= deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
  }

  /// Writer window: at most history_depth messages and this many bytes in flight.
  static constexpr std::size_t kWindowBytes = 512 * 1024;
  static constexpr auto kRetransmitPeriod = std::chrono::milliseconds(50);
  static constexpr int kMaxRetries = 20;

 private:
  struct Pending {
    std::shared_ptr<const SerializedMessage> msg;  // null for loan notices
    Bytes control;                                 // encoded loan notice
    std::shared_ptr<SharedSegment> segment;
    std::uint32_t slot = 0;
    std::set<std::uint64_t> awaiting;
    SteadyClock::time_point last_sent;
    int retries = 0;
    std::size_t bytes = 0;
  };
  struct WriterState {
    EndpointInfo info;
    std::map<std::uint64_t, Pending> pending;
    std::size_t pending_bytes = 0;
  };
  struct ReaderState {
    EndpointInfo info;
    std::weak_ptr<Subscription> sub;
  };
  struct InboundWriter {
    std::uint64_t next_expected = 0;  // 0 until the first message
    std::map<std::uint64_t, Subscription::Delivery> stash;
    SteadyClock::time_point stalled_since;
  };
  struct Target {
    std::uint64_t participant;
    SocketAddress address;
  };

  void run();
  void receive_batch();
  void handle_control(ByteView packet, const sockaddr_in& from);
  void handle_data(const PacketHeader& h, ByteView fragment_header, Bytes body, const sockaddr_in& from);
  void handle_loan(const PacketHeader& h, wire::Reader& r, const sockaddr_in& from);
  void handle_ack(const PacketHeader& h, wire::Reader& r);
  // Returns whether the remote writer expects acknowledgments from us.
  bool inbound_reliable_locked(std::uint64_t participant, EntityId writer) const;
  void accept_inbound(std::uint64_t participant, EntityId writer, std::uint64_t seq, bool reliable,
                      Subscription::Delivery delivery);
  void dispatch(std::uint64_t participant, EntityId writer, const Subscription::Delivery& delivery);
  void send_ack(EntityId writer, std::uint64_t seq, const sockaddr_in& to);
  void transmit(EntityId writer, const SerializedMessage& msg, const SocketAddress& to);
  void transmit_raw(ByteView packet, const SocketAddress& to);
  void retransmit_due();
  void flush_stalled();
  void drop_participant(std::uint64_t participant);
  void release_pending_locked(Pending& p, std::uint64_t participant);
  std::vector<Target> targets_locked(EntityId writer, bool* any_reliable) const;
  bool wait_window_locked(std::unique_lock<std::mutex>& lock, EntityId writer, std::size_t depth,
                          std::size_t bytes, bool block);
  Bytes announcement_locked() const;
  void announce_locked();

  Context& context_;
  std::uint64_t id_;
  std::uint64_t host_id_;
  std::size_t max_datagram_;
  std::chrono::milliseconds announce_period_;
  int fd_ = -1;
  SocketAddress local_;
  SocketAddress rendezvous_;

  mutable std::mutex mutex_;
  std::condition_variable window_cv_;
  DiscoveryDatabase db_;
  std::map<EntityId, WriterState> writers_;
  std::map<EntityId, ReaderState> readers_;
  std::uint32_t node_count_ = 0;
  std::uint64_t revision_ = 0;

  SteadyClock::time_point last_announce_{};

  // Receiver-thread state.
  Reassembler reassembler_;
  Bytes rx_body_;
  std::map<std::pair<std::uint64_t, EntityId>, InboundWriter> inbound_;
  std::map<std::pair<std::uint64_t, EntityId>, std::shared_ptr<SharedSegment>> segments_;

  std::atomic<bool> stop_{false};
  std::thread thread_;
};

/// Stable identifier of the running kernel instance; equal for all
/// processes on one host.
std::uint64_t local_host_id();

}  // namespace cbench
