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

// Graph core: contexts, nodes and their publishers, subscriptions, timers,
// services and callback groups.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cbench/message.hpp"
#include "cbench/ring_buffer.hpp"

namespace cbench {

class Context;
class Node;
class Participant;
class IntraProcessManager;
class SharedSegment;
struct LoanedSample;

using EntityId = std::uint64_t;
using SteadyClock = std::chrono::steady_clock;

enum class EntityKind : std::uint8_t { subscription, timer, service };

/// Counters shared by every path a message can take. Monotonic.
struct TransportStats {
  std::atomic<std::uint64_t> serializations{0};
  std::atomic<std::uint64_t> deserializations{0};
  std::atomic<std::uint64_t> payload_bytes_copied{0};
  std::atomic<std::uint64_t> ipc_deliveries{0};
  std::atomic<std::uint64_t> datagrams_sent{0};
  std::atomic<std::uint64_t> datagram_bytes_sent{0};
  std::atomic<std::uint64_t> datagrams_received{0};
  std::atomic<std::uint64_t> retransmissions{0};
  std::atomic<std::uint64_t> loaned_publishes{0};
};

struct StatsSnapshot {
  std::uint64_t serializations = 0;
  std::uint64_t deserializations = 0;
  std::uint64_t payload_bytes_copied = 0;
  std::uint64_t ipc_deliveries = 0;
  std::uint64_t datagrams_sent = 0;
  std::uint64_t datagram_bytes_sent = 0;
  std::uint64_t datagrams_received = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t loaned_publishes = 0;
};

/// Level-triggered wakeup shared by an executor and everything it services.
class WakeSignal {
 public:
  void notify();
  /// Returns true if notified before `deadline`. Clears the pending flag.
  bool wait_until(SteadyClock::time_point deadline);

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  bool pending_ = false;
};

class CallbackGroup {
 public:
  enum class Kind { mutually_exclusive, reentrant };

  explicit CallbackGroup(Kind kind) : kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  /// Claims a slot; fails only for an occupied mutually exclusive group.
  bool try_enter() noexcept;
  void exit() noexcept;

  int occupancy() const noexcept { return occupancy_.load(); }
  /// Largest occupancy ever observed.
  int max_occupancy() const noexcept { return max_occupancy_.load(); }

 private:
  const Kind kind_;
  std::atomic<int> occupancy_{0};
  std::atomic<int> max_occupancy_{0};
};

namespace detail {
// Slots a publisher has borrowed but not yet published.
struct LoanBook {
  std::mutex mutex;
  std::shared_ptr<SharedSegment> segment;
  std::vector<bool> borrowed;

  /// Claims a borrowed slot for publishing; false if not borrowed.
  bool take(std::uint32_t slot);
  /// Returns an unpublished slot to the segment.
  void give_back(std::uint32_t slot);
};

// Connects a node and its entities to whichever executor currently services them.
struct NodeBinding {
  std::mutex mutex;
  std::shared_ptr<WakeSignal> wake;
  std::function<void()> on_entities_changed;

  void notify();
  void entities_changed();
};
}  // namespace detail

/// Anything an executor can find ready and run.
class Executable {
 public:
  Executable(EntityId id, EntityKind kind, std::shared_ptr<CallbackGroup> group,
             std::shared_ptr<detail::NodeBinding> binding)
      : id_(id), kind_(kind), group_(std::move(group)), binding_(std::move(binding)) {}
  virtual ~Executable() = default;

  Executable(const Executable&) = delete;
  Executable& operator=(const Executable&) = delete;

  EntityId id() const noexcept { return id_; }
  EntityKind kind() const noexcept { return kind_; }
  CallbackGroup& group() const noexcept { return *group_; }
  const std::shared_ptr<CallbackGroup>& group_ptr() const noexcept { return group_; }

  virtual bool is_ready(std::int64_t now_ns) const = 0;
  /// Runs at most one callback; returns false if nothing was ready.
  virtual bool execute(std::int64_t now_ns) = 0;
  virtual std::optional<std::int64_t> next_due_ns() const { return std::nullopt; }

  /// Detached entities are never executed again.
  bool detached() const noexcept { return detached_.load(); }
  void detach() noexcept { detached_ = true; }

 protected:
  void notify() const { binding_->notify(); }

 private:
  EntityId id_;
  EntityKind kind_;
  std::shared_ptr<CallbackGroup> group_;
  std::shared_ptr<detail::NodeBinding> binding_;
  std::atomic<bool> detached_{false};
};

/// What a subscription callback sees. `data` stays valid for the duration
/// of the callback only.
struct ReceivedMessage {
  enum class Path { intra_process, serialized, loaned };

  std::string_view topic;
  std::uint64_t sequence = 0;
  std::int64_t publish_timestamp_ns = 0;
  ByteView data;
  Path path = Path::serialized;
  /// Set for intra-process and serialized deliveries; identifies the instance.
  PayloadRef payload;
};

using SubscriptionCallback = std::function<void(const ReceivedMessage&)>;

struct SubscriptionOptions {
  std::shared_ptr<CallbackGroup> group;
  /// Busy-wait on thread CPU time after the callback returns.
  std::chrono::nanoseconds synthetic_work{0};
};

class Subscription : public Executable {
 public:
  using Delivery = std::variant<PayloadRef, std::shared_ptr<const SerializedMessage>, std::shared_ptr<const LoanedSample>>;

  Subscription(EntityId id, std::shared_ptr<Context> context, std::string topic, QoSProfile qos,
               SubscriptionCallback callback, SubscriptionOptions options,
               std::shared_ptr<detail::NodeBinding> binding, bool ipc_enabled);
  ~Subscription() override;

  const std::string& topic() const noexcept { return topic_; }
  const QoSProfile& qos() const noexcept { return qos_; }
  std::chrono::nanoseconds synthetic_work() const noexcept { return options_.synthetic_work; }
  /// True when this subscription receives co-located messages by reference.
  bool ipc_active() const noexcept { return ipc_active_; }

  bool is_ready(std::int64_t now_ns) const override;
  bool execute(std::int64_t now_ns) override;

  void deliver(Delivery d);

  /// Takes the oldest queued message without invoking the callback.
  std::optional<Delivery> take();

  std::size_t queued() const;
  std::uint64_t drops() const;
  std::uint64_t delivered() const noexcept { return delivered_.load(); }
  std::uint64_t callbacks() const noexcept { return callbacks_.load(); }

  /// Called once before the owning node releases it.
  void withdraw();

  /// Waits until a message is queued or the timeout elapses.
  bool wait_for_message(std::chrono::nanoseconds timeout);

 private:
  std::shared_ptr<Context> context_;
  std::string topic_;
  QoSProfile qos_;
  SubscriptionCallback callback_;
  SubscriptionOptions options_;
  bool ipc_active_;

  mutable std::mutex mutex_;
  std::condition_variable arrived_;
  RingBuffer<Delivery> queue_;
  std::atomic<std::uint64_t> delivered_{0};
  std::atomic<std::uint64_t> callbacks_{0};
  bool withdrawn_ = false;
};

class Timer : public Executable {
 public:
  using Callback = std::function<void()>;

  Timer(EntityId id, std::chrono::nanoseconds period, Callback cb, std::shared_ptr<CallbackGroup> group,
        std::shared_ptr<detail::NodeBinding> binding, std::int64_t first_due_ns);

  std::chrono::nanoseconds period() const noexcept { return period_; }
  std::uint64_t fire_count() const noexcept { return fires_.load(); }

  bool is_ready(std::int64_t now_ns) const override;
  bool execute(std::int64_t now_ns) override;
  std::optional<std::int64_t> next_due_ns() const override {
    if (cancelled_) return std::nullopt;
    return next_due_.load();
  }

  void cancel() noexcept { cancelled_ = true; }

 private:
  std::chrono::nanoseconds period_;
  Callback callback_;
  std::atomic<std::int64_t> next_due_;
  std::atomic<std::uint64_t> fires_{0};
  std::atomic<bool> cancelled_{false};
};

/// Request/reply status carried in the first 4 bytes of every reply body.
enum class ServiceStatus : std::uint32_t { ok = 0, not_found = 1, error = 2, bad_request = 3 };

struct ServiceReply {
  ServiceStatus status = ServiceStatus::ok;
  Bytes body;
};

/// Request wire: request id (8 B) | body. Reply wire: request id (8 B) | status (4 B) | body.
Bytes encode_service_request(std::uint64_t request_id, ByteView body);
Bytes encode_service_reply(std::uint64_t request_id, const ServiceReply& reply);
std::pair<std::uint64_t, Bytes> decode_service_request(ByteView wire);
std::pair<std::uint64_t, ServiceReply> decode_service_reply(ByteView wire);

class Publisher;

/// Serves requests arriving on `<name>` and answers on `<name>/reply`.
class Service : public Executable {
 public:
  using Handler = std::function<ServiceReply(ByteView request)>;

  Service(EntityId id, std::shared_ptr<Subscription> requests, std::shared_ptr<Publisher> replies, Handler handler,
          std::shared_ptr<CallbackGroup> group, std::shared_ptr<detail::NodeBinding> binding);

  bool is_ready(std::int64_t now_ns) const override;
  bool execute(std::int64_t now_ns) override;
  std::uint64_t handled() const noexcept { return handled_.load(); }

 private:
  std::shared_ptr<Subscription> requests_;
  std::shared_ptr<Publisher> replies_;
  Handler handler_;
  std::atomic<std::uint64_t> handled_{0};
};

struct PublisherOptions {
  /// Publish through a shared-memory segment of fixed-size slots.
  bool loaned = false;
  std::size_t loan_slot_size = 0;
  std::size_t loan_slot_count = 16;
  /// Block publish() while the reliable window toward remote readers is full.
  bool block_on_backpressure = true;
};

/// A writable shared-memory slot owned by one publisher until published.
class LoanedMessage {
 public:
  LoanedMessage() = default;
  LoanedMessage(LoanedMessage&& other) noexcept;
  LoanedMessage& operator=(LoanedMessage&& other) noexcept;
  LoanedMessage(const LoanedMessage&) = delete;
  LoanedMessage& operator=(const LoanedMessage&) = delete;
  ~LoanedMessage();

  bool valid() const noexcept { return book_ != nullptr; }
  std::uint32_t slot() const noexcept { return slot_; }
  std::span<std::byte> data() const;

 private:
  friend class Publisher;
  LoanedMessage(std::shared_ptr<detail::LoanBook> book, std::uint32_t slot) : book_(std::move(book)), slot_(slot) {}
  void reset() noexcept;

  std::shared_ptr<detail::LoanBook> book_;
  std::uint32_t slot_ = 0;
};

class Publisher {
 public:
  Publisher(EntityId id, std::shared_ptr<Context> context, std::string topic, QoSProfile qos, PublisherOptions options,
            bool ipc_enabled);
  ~Publisher();

  Publisher(const Publisher&) = delete;
  Publisher& operator=(const Publisher&) = delete;

  EntityId id() const noexcept { return id_; }
  const std::string& topic() const noexcept { return topic_; }
  const QoSProfile& qos() const noexcept { return qos_; }
  bool ipc_active() const noexcept { return ipc_active_; }
  bool loaned() const noexcept { return options_.loaned; }

  /// Stamps sequence and time, then routes to co-located and remote readers.
  /// Throws InvalidState once destroyed.
  void publish(Bytes data);

  /// Same as publish() but returns the shared instance handed to intra-process readers.
  PayloadRef publish_shared(Bytes data);

  /// Hands back the buffer of a payload returned by publish_shared() once no
  /// reader holds it anymore; otherwise returns an empty buffer and leaves
  /// `ref` untouched.
  Bytes reclaim(PayloadRef& ref);

  /// Throws Unsupported unless created loaned; BackpressureError when every slot is in use.
  LoanedMessage borrow_loaned();
  /// Sends the slot index to every reader. Throws InvalidState for a loan that
  /// was already published or does not belong to this publisher.
  void publish_loaned(LoanedMessage& loan);
  /// Borrows the raw slot index; exposed for tests of the segment protocol.
  std::uint32_t borrow_loaned_slot();
  void publish_loaned_slot(std::uint32_t slot);

  std::shared_ptr<SharedSegment> segment() const noexcept { return loans_ ? loans_->segment : nullptr; }

  std::uint64_t published() const noexcept { return sequence_.load(); }
  /// Co-located plus remote matched subscriptions.
  std::size_t matched_subscription_count() const;

  void destroy();
  bool destroyed() const noexcept { return destroyed_.load(); }

 private:
  void route(const PayloadRef& payload);

  EntityId id_;
  std::shared_ptr<Context> context_;
  std::string topic_;
  QoSProfile qos_;
  PublisherOptions options_;
  bool ipc_active_;
  std::atomic<std::uint64_t> sequence_{0};
  std::atomic<bool> destroyed_{false};
  std::shared_ptr<detail::LoanBook> loans_;
};

/// Sends requests and blocks for the matching reply. Not serviced by an executor.
class ServiceClient {
 public:
  ServiceClient(std::shared_ptr<Context> context, std::shared_ptr<Publisher> requests,
                std::shared_ptr<Subscription> replies);

  /// Waits until a server is matched on both directions.
  bool wait_for_service(std::chrono::nanoseconds timeout) const;
  /// Throws Error on timeout.
  ServiceReply call(ByteView request, std::chrono::nanoseconds timeout = std::chrono::seconds(5));

 private:
  std::shared_ptr<Context> context_;
  std::shared_ptr<Publisher> requests_;
  std::shared_ptr<Subscription> replies_;
  std::mutex mutex_;
  std::uint64_t next_request_;
};

struct NodeOptions {
  std::string name;
  std::string namespace_ = "/";
  bool ipc_enabled = false;
  std::map<std::string, std::string> parameters;
  /// Null selects the process default context.
  std::shared_ptr<Context> context;
  /// Creates the per-node parameter-event publisher and subscription every
  /// node of a full middleware carries.
  bool builtin_endpoints = false;

  std::string fully_qualified_name() const;
  std::string parameter(const std::string& key, const std::string& fallback = {}) const;
  std::int64_t parameter_int(const std::string& key, std::int64_t fallback) const;
  double parameter_double(const std::string& key, double fallback) const;
  bool parameter_bool(const std::string& key, bool fallback) const;
};

inline constexpr std::string_view kParameterEventsTopic = "/parameter_events";

class Node : public std::enable_shared_from_this<Node> {
 public:
  /// Throws InvalidArgument for an empty name and AlreadyExists when the
  /// fully qualified name is taken in the context.
  static std::shared_ptr<Node> create(NodeOptions options);
  ~Node();

  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  const NodeOptions& options() const noexcept { return options_; }
  const std::string& name() const noexcept { return options_.name; }
  std::string fully_qualified_name() const { return options_.fully_qualified_name(); }
  Context& context() const noexcept { return *context_; }
  const std::shared_ptr<Context>& context_ptr() const noexcept { return context_; }

  std::shared_ptr<CallbackGroup> default_callback_group() const noexcept { return default_group_; }
  std::shared_ptr<CallbackGroup> create_callback_group(CallbackGroup::Kind kind);

  std::shared_ptr<Publisher> create_publisher(const std::string& topic, QoSProfile qos = {},
                                              PublisherOptions options = {});
  std::shared_ptr<Subscription> create_subscription(const std::string& topic, QoSProfile qos,
                                                    SubscriptionCallback callback, SubscriptionOptions options = {});
  /// Throws InvalidArgument for a non-positive period.
  std::shared_ptr<Timer> create_timer(std::chrono::nanoseconds period, Timer::Callback callback,
                                      std::shared_ptr<CallbackGroup> group = nullptr);
  std::shared_ptr<Service> create_service(const std::string& name, Service::Handler handler,
                                          std::shared_ptr<CallbackGroup> group = nullptr);
  std::shared_ptr<ServiceClient> create_client(const std::string& name);

  void destroy_publisher(const std::shared_ptr<Publisher>& pub);
  void destroy_subscription(const std::shared_ptr<Subscription>& sub);
  void destroy_timer(const std::shared_ptr<Timer>& timer);

  /// Entities an executor services, ordered by registration.
  std::vector<std::shared_ptr<Executable>> executables() const;

  std::size_t publisher_count() const;
  std::size_t subscription_count() const;
  std::size_t timer_count() const;
  std::size_t service_count() const;

  /// Resolves a relative topic against the node namespace.
  std::string resolve_topic(const std::string& topic) const;

  const std::shared_ptr<detail::NodeBinding>& binding() const noexcept { return binding_; }
  /// Executor ownership; a node belongs to at most one executor.
  bool try_claim_executor(const void* executor) noexcept;
  void release_executor(const void* executor) noexcept;
  const void* executor() const noexcept { return executor_.load(); }

 private:
  explicit Node(NodeOptions options);
  void check_group(const std::shared_ptr<CallbackGroup>& group) const;
  void add_executable(std::shared_ptr<Executable> e);
  void remove_executable(EntityId id);

  NodeOptions options_;
  std::shared_ptr<Context> context_;
  std::shared_ptr<CallbackGroup> default_group_;
  std::shared_ptr<detail::NodeBinding> binding_;
  std::atomic<const void*> executor_{nullptr};

  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<CallbackGroup>> groups_;
  std::vector<std::shared_ptr<Publisher>> publishers_;
  std::vector<std::shared_ptr<Subscription>> subscriptions_;
  std::vector<std::shared_ptr<Timer>> timers_;
  std::vector<std::shared_ptr<Service>> services_;
  std::vector<std::shared_ptr<Executable>> executables_;
};

struct ContextOptions {
  /// "host:port" of the discovery broker. Empty reads COMPOSE_BENCH_RENDEZVOUS,
  /// falling back to kDefaultRendezvous.
  std::string rendezvous;
  bool enable_transport = true;
  std::size_t max_datagram_payload = kMaxUdpPayload;
  /// Resource block held per matched remote endpoint.
  std::size_t discovery_block_size = 8192;
  /// Subtracted from the monotonic clock; aligns clock domains across processes.
  std::int64_t clock_offset_ns = 0;
  /// Replaces the clock entirely (deterministic tests).
  std::function<std::int64_t()> clock;
  /// Zero derives the id from the running kernel instance.
  std::uint64_t host_id = 0;
  std::chrono::milliseconds announce_period{1000};
  /// Requested socket receive buffer.
  std::size_t receive_buffer_bytes = 16u << 20;
};

inline constexpr std::string_view kDefaultRendezvous = "127.0.0.1:17400";
inline constexpr std::string_view kRendezvousEnv = "COMPOSE_BENCH_RENDEZVOUS";

/// Process-level graph state: node names, local endpoint registry, the
/// intra-process manager and the participant. One participant per context.
class Context : public std::enable_shared_from_this<Context> {
 public:
  static std::shared_ptr<Context> create(ContextOptions options = {});
  /// Lazily created process-wide context.
  static std::shared_ptr<Context> default_context();
  ~Context();

  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  const ContextOptions& options() const noexcept { return options_; }

  std::int64_t now_ns() const;

  /// Stops every spin; idempotent.
  void shutdown();
  bool ok() const noexcept { return !shutdown_.load(); }
  void add_wake(const std::shared_ptr<WakeSignal>& wake);

  EntityId next_entity_id() noexcept { return next_entity_.fetch_add(1); }

  StatsSnapshot stats() const;
  TransportStats& counters() noexcept { return counters_; }

  /// Null when the transport is disabled.
  Participant* participant() const noexcept { return participant_.get(); }
  IntraProcessManager& intra_process() const noexcept { return *ipc_; }

  std::size_t node_count() const;
  std::vector<std::string> node_names() const;

  // Local endpoint registry.
  void register_node(const std::string& fq_name);
  void unregister_node(const std::string& fq_name);
  void register_subscription(const std::shared_ptr<Subscription>& sub);
  void unregister_subscription(EntityId id);
  void register_publisher(const Publisher& pub);
  void unregister_publisher(EntityId id);
  /// Co-located subscriptions matched to `pub` that the intra-process path does not reach.
  std::vector<std::shared_ptr<Subscription>> serialized_local_targets(const Publisher& pub) const;
  std::size_t local_matched_count(const Publisher& pub) const;
  /// Co-located publishers matched to `sub`.
  std::size_t local_publisher_count(const Subscription& sub) const;

 private:
  explicit Context(ContextOptions options);
  void start();

  ContextOptions options_;
  std::atomic<bool> shutdown_{false};
  std::atomic<EntityId> next_entity_{1};
  TransportStats counters_;
  std::unique_ptr<IntraProcessManager> ipc_;
  std::unique_ptr<Participant> participant_;

  mutable std::shared_mutex mutex_;
  std::vector<std::string> nodes_;
  std::multimap<std::string, std::weak_ptr<Subscription>> subscriptions_;
  struct PublisherEntry {
    EntityId id;
    QoSProfile qos;
  };
  std::multimap<std::string, PublisherEntry> publishers_;
  std::vector<std::weak_ptr<WakeSignal>> wakes_;
};

/// Spins on thread CPU time so the work shows up in CPU accounting.
void busy_work(std::chrono::nanoseconds cpu_time);

}  // namespace cbench
