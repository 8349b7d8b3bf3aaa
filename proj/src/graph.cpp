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

#include "cbench/graph.hpp"

#include <time.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <random>
#include <thread>

#include "cbench/intraprocess.hpp"
#include "cbench/transport.hpp"

namespace cbench {

// ---------------------------------------------------------------------------
// Small pieces

void WakeSignal::notify() {
  {
    std::lock_guard lock(mutex_);
    pending_ = true;
  }
  cv_.notify_all();
}

bool WakeSignal::wait_until(SteadyClock::time_point deadline) {
  std::unique_lock lock(mutex_);
  bool woke = cv_.wait_until(lock, deadline, [&] { return pending_; });
  pending_ = false;
  return woke;
}

bool CallbackGroup::try_enter() noexcept {
  int now;
  if (kind_ == Kind::mutually_exclusive) {
    int expected = 0;
    if (!occupancy_.compare_exchange_strong(expected, 1)) return false;
    now = 1;
  } else {
    now = occupancy_.fetch_add(1) + 1;
  }
  int seen = max_occupancy_.load();
  while (now > seen && !max_occupancy_.compare_exchange_weak(seen, now)) {
  }
  return true;
}

void CallbackGroup::exit() noexcept { occupancy_.fetch_sub(1); }

namespace detail {

bool LoanBook::take(std::uint32_t slot) {
  std::lock_guard lock(mutex);
  if (slot >= borrowed.size() || !borrowed[slot]) return false;
  borrowed[slot] = false;
  return true;
}

void LoanBook::give_back(std::uint32_t slot) {
  if (take(slot)) segment->release(slot);
}

void NodeBinding::notify() {
  std::shared_ptr<WakeSignal> w;
  {
    std::lock_guard lock(mutex);
    w = wake;
  }
  if (w) w->notify();
}

void NodeBinding::entities_changed() {
  std::function<void()> cb;
  {
    std::lock_guard lock(mutex);
    cb = on_entities_changed;
  }
  if (cb) cb();
}

}  // namespace detail

void busy_work(std::chrono::nanoseconds cpu_time) {
  if (cpu_time.count() <= 0) return;
  auto read = [] {
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return std::int64_t{ts.tv_sec} * 1'000'000'000 + ts.tv_nsec;
  };
  const auto end = read() + cpu_time.count();
  while (read() < end) {
  }
}

// ---------------------------------------------------------------------------
// Subscription

namespace {

struct DeliveryView {
  std::string_view topic;
  std::uint64_t sequence;
  std::int64_t timestamp;
  ByteView data;
};

DeliveryView view_of(const Subscription::Delivery& d) {
  struct Visitor {
    DeliveryView operator()(const PayloadRef& p) const {
      return {p->topic, p->sequence, p->publish_timestamp_ns, p->data};
    }
    DeliveryView operator()(const std::shared_ptr<const SerializedMessage>& s) const {
      return {s->header.topic, s->header.sequence, s->header.publish_timestamp_ns, s->data()};
    }
    DeliveryView operator()(const std::shared_ptr<const LoanedSample>& l) const {
      return {l->header.topic, l->header.sequence, l->header.publish_timestamp_ns, l->data()};
    }
  };
  return std::visit(Visitor{}, d);
}

}  // namespace

Subscription::Subscription(EntityId id, std::shared_ptr<Context> context, std::string topic, QoSProfile qos,
                           SubscriptionCallback callback, SubscriptionOptions options,
                           std::shared_ptr<detail::NodeBinding> binding, bool ipc_enabled)
    : Executable(id, EntityKind::subscription, options.group, std::move(binding)),
      context_(std::move(context)),
      topic_(std::move(topic)),
      qos_(qos),
      callback_(std::move(callback)),
      options_(std::move(options)),
      ipc_active_(ipc_enabled && ipc_compatible(qos)),
      queue_(qos.history_depth) {}

Subscription::~Subscription() { withdraw(); }

bool Subscription::is_ready(std::int64_t) const {
  std::lock_guard lock(mutex_);
  return !queue_.empty();
}

void Subscription::deliver(Delivery d) {
  {
    std::lock_guard lock(mutex_);
    if (withdrawn_) return;
    queue_.push(std::move(d));
  }
  delivered_.fetch_add(1);
  arrived_.notify_all();
  notify();
}

std::optional<Subscription::Delivery> Subscription::take() {
  std::lock_guard lock(mutex_);
  return queue_.take();
}

bool Subscription::wait_for_message(std::chrono::nanoseconds timeout) {
  std::unique_lock lock(mutex_);
  return arrived_.wait_for(lock, timeout, [&] { return !queue_.empty() || withdrawn_; }) && !queue_.empty();
}

std::size_t Subscription::queued() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

std::uint64_t Subscription::drops() const {
  std::lock_guard lock(mutex_);
  return queue_.drops();
}

bool Subscription::execute(std::int64_t) {
  auto d = take();
  if (!d) return false;

  ReceivedMessage m;
  if (auto* p = std::get_if<PayloadRef>(&*d)) {
    m.payload = *p;
    m.path = ReceivedMessage::Path::intra_process;
  } else if (auto* s = std::get_if<std::shared_ptr<const SerializedMessage>>(&*d)) {
    m.payload = std::make_shared<const Payload>(deserialize(**s));
    m.path = ReceivedMessage::Path::serialized;
    auto& c = context_->counters();
    c.deserializations.fetch_add(1);
    c.payload_bytes_copied.fetch_add(m.payload->data.size());
  } else {
    m.path = ReceivedMessage::Path::loaned;
  }
  if (m.payload) {
    m.topic = m.payload->topic;
    m.sequence = m.payload->sequence;
    m.publish_timestamp_ns = m.payload->publish_timestamp_ns;
    m.data = m.payload->data;
  } else {
    auto v = view_of(*d);
    m.topic = v.topic;
    m.sequence = v.sequence;
    m.publish_timestamp_ns = v.timestamp;
    m.data = v.data;
  }

  callbacks_.fetch_add(1);
  if (callback_) callback_(m);
  busy_work(options_.synthetic_work);
  return true;
}

void Subscription::withdraw() {
  {
    std::lock_guard lock(mutex_);
    if (withdrawn_) return;
    withdrawn_ = true;
  }
  detach();
  context_->unregister_subscription(id());
  {
    std::lock_guard lock(mutex_);
    queue_.clear();
  }
  arrived_.notify_all();
}

// ---------------------------------------------------------------------------
// Timer

Timer::Timer(EntityId id, std::chrono::nanoseconds period, Callback cb, std::shared_ptr<CallbackGroup> group,
             std::shared_ptr<detail::NodeBinding> binding, std::int64_t first_due_ns)
    : Executable(id, EntityKind::timer, std::move(group), std::move(binding)),
      period_(period),
      callback_(std::move(cb)),
      next_due_(first_due_ns) {}

bool Timer::is_ready(std::int64_t now_ns) const { return !cancelled_ && next_due_.load() <= now_ns; }

bool Timer::execute(std::int64_t now_ns) {
  if (!is_ready(now_ns)) return false;
  next_due_.fetch_add(period_.count());
  fires_.fetch_add(1);
  if (callback_) callback_();
  return true;
}

// ---------------------------------------------------------------------------
// Services

Bytes encode_service_request(std::uint64_t request_id, ByteView body) {
  Bytes out;
  out.reserve(8 + body.size());
  wire::Writer w(out);
  w.u64(request_id);
  w.bytes(body);
  return out;
}

Bytes encode_service_reply(std::uint64_t request_id, const ServiceReply& reply) {
  Bytes out;
  out.reserve(12 + reply.body.size());
  wire::Writer w(out);
  w.u64(request_id);
  w.u32(static_cast<std::uint32_t>(reply.status));
  w.bytes(reply.body);
  return out;
}

std::pair<std::uint64_t, Bytes> decode_service_request(ByteView in) {
  wire::Reader r(in);
  auto id = r.u64();
  auto rest = r.rest();
  return {id, Bytes(rest.begin(), rest.end())};
}

std::pair<std::uint64_t, ServiceReply> decode_service_reply(ByteView in) {
  wire::Reader r(in);
  auto id = r.u64();
  ServiceReply reply;
  reply.status = static_cast<ServiceStatus>(r.u32());
  auto rest = r.rest();
  reply.body.assign(rest.begin(), rest.end());
  return {id, std::move(reply)};
}

Service::Service(EntityId id, std::shared_ptr<Subscription> requests, std::shared_ptr<Publisher> replies,
                 Handler handler, std::shared_ptr<CallbackGroup> group, std::shared_ptr<detail::NodeBinding> binding)
    : Executable(id, EntityKind::service, std::move(group), std::move(binding)),
      requests_(std::move(requests)),
      replies_(std::move(replies)),
      handler_(std::move(handler)) {}

bool Service::is_ready(std::int64_t now_ns) const { return requests_->is_ready(now_ns); }

bool Service::execute(std::int64_t) {
  auto d = requests_->take();
  if (!d) return false;
  auto view = view_of(*d);
  std::uint64_t request_id = 0;
  ServiceReply reply;
  try {
    auto [id, body] = decode_service_request(view.data);
    request_id = id;
    reply = handler_(body);
  } catch (const NotFound& e) {
    reply = {ServiceStatus::not_found, {}};
    auto msg = std::string_view(e.what());
    reply.body.assign(reinterpret_cast<const std::byte*>(msg.data()),
                      reinterpret_cast<const std::byte*>(msg.data() + msg.size()));
  } catch (const CorruptionError&) {
    reply = {ServiceStatus::bad_request, {}};
  } catch (const std::exception& e) {
    reply = {ServiceStatus::error, {}};
    auto msg = std::string_view(e.what());
    reply.body.assign(reinterpret_cast<const std::byte*>(msg.data()),
                      reinterpret_cast<const std::byte*>(msg.data() + msg.size()));
  }
  handled_.fetch_add(1);
  if (!replies_->destroyed()) replies_->publish(encode_service_reply(request_id, reply));
  return true;
}

ServiceClient::ServiceClient(std::shared_ptr<Context> context, std::shared_ptr<Publisher> requests,
                             std::shared_ptr<Subscription> replies)
    : context_(std::move(context)), requests_(std::move(requests)), replies_(std::move(replies)) {
  std::random_device rd;
  next_request_ = (std::uint64_t{rd()} << 32) ^ rd();
}

bool ServiceClient::wait_for_service(std::chrono::nanoseconds timeout) const {
  auto deadline = SteadyClock::now() + timeout;
  for (;;) {
    bool requests_matched = requests_->matched_subscription_count() > 0;
    std::size_t reply_writers = context_->local_publisher_count(*replies_);
    if (auto* part = context_->participant()) reply_writers += part->remote_writer_count(replies_->id());
    if (requests_matched && reply_writers > 0) return true;
    if (SteadyClock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
}

ServiceReply ServiceClient::call(ByteView request, std::chrono::nanoseconds timeout) {
  std::lock_guard lock(mutex_);
  const auto id = next_request_++;
  requests_->publish(encode_service_request(id, request));
  const auto deadline = SteadyClock::now() + timeout;
  for (;;) {
    while (auto d = replies_->take()) {
      auto [reply_id, reply] = decode_service_reply(view_of(*d).data);
      if (reply_id == id) return reply;
    }
    auto now = SteadyClock::now();
    if (now >= deadline) throw Error("service call on '" + requests_->topic() + "' timed out");
    replies_->wait_for_message(std::min<std::chrono::nanoseconds>(deadline - now, std::chrono::milliseconds(10)));
  }
}

// ---------------------------------------------------------------------------
// Publisher

LoanedMessage::LoanedMessage(LoanedMessage&& other) noexcept
    : book_(std::move(other.book_)), slot_(other.slot_) {}

LoanedMessage& LoanedMessage::operator=(LoanedMessage&& other) noexcept {
  if (this != &other) {
    reset();
    book_ = std::move(other.book_);
    slot_ = other.slot_;
  }
  return *this;
}

LoanedMessage::~LoanedMessage() { reset(); }

void LoanedMessage::reset() noexcept {
  if (book_) book_->give_back(slot_);
  book_.reset();
}

std::span<std::byte> LoanedMessage::data() const {
  if (!book_) throw InvalidState("loan is not valid");
  return book_->segment->slot(slot_);
}

Publisher::Publisher(EntityId id, std::shared_ptr<Context> context, std::string topic, QoSProfile qos,
                     PublisherOptions options, bool ipc_enabled)
    : id_(id),
      context_(std::move(context)),
      topic_(std::move(topic)),
      qos_(qos),
      options_(options),
      ipc_active_(ipc_enabled && ipc_compatible(qos) && !options.loaned) {
  if (options_.loaned) {
    if (options_.loan_slot_size == 0) throw InvalidArgument("loaned publisher needs a slot size");
    if (options_.loan_slot_count == 0) throw InvalidArgument("loaned publisher needs at least one slot");
    auto* part = context_->participant();
    auto owner = part ? part->id() : static_cast<std::uint64_t>(::getpid());
    loans_ = std::make_shared<detail::LoanBook>();
    loans_->segment = SharedSegment::create(SharedSegment::name_for(owner, id_), options_.loan_slot_size,
                                            static_cast<std::uint32_t>(options_.loan_slot_count));
    loans_->borrowed.assign(options_.loan_slot_count, false);
  }
}

Publisher::~Publisher() { destroy(); }

void Publisher::destroy() {
  if (destroyed_.exchange(true)) return;
  context_->unregister_publisher(id_);
}

void Publisher::publish(Bytes data) { publish_shared(std::move(data)); }

Bytes Publisher::reclaim(PayloadRef& ref) {
  if (!ref || ref.use_count() != 1 || ref->topic != topic_) return {};
  // publish_shared() allocates the payload non-const; sole ownership makes
  // taking the buffer back safe.
  Bytes out = std::move(const_cast<Payload&>(*ref).data);
  ref.reset();
  return out;
}

PayloadRef Publisher::publish_shared(Bytes data) {
  if (destroyed_) throw InvalidState("publisher on '" + topic_ + "' was destroyed");
  if (options_.loaned) {
    auto loan = borrow_loaned();
    auto slot = loan.data();
    if (data.size() != slot.size())
      throw InvalidArgument("loaned messages must be exactly " + std::to_string(slot.size()) + " bytes");
    std::copy(data.begin(), data.end(), slot.begin());
    publish_loaned(loan);
    return nullptr;
  }
  auto payload = std::make_shared<Payload>();
  payload->topic = topic_;
  payload->data = std::move(data);
  payload->sequence = sequence_.fetch_add(1) + 1;
  payload->publish_timestamp_ns = context_->now_ns();
  PayloadRef ref = std::move(payload);
  route(ref);
  return ref;
}

void Publisher::route(const PayloadRef& payload) {
  auto& ctx = *context_;
  if (ipc_active_) ctx.counters().ipc_deliveries.fetch_add(ctx.intra_process().deliver(*this, payload));

  auto locals = ctx.serialized_local_targets(*this);
  auto* part = ctx.participant();
  const bool remote = part != nullptr && part->has_remote_readers(id_);
  if (locals.empty() && !remote) return;

  auto msg = std::make_shared<const SerializedMessage>(serialize(*payload));
  ctx.counters().serializations.fetch_add(1);
  ctx.counters().payload_bytes_copied.fetch_add(payload->data.size());
  for (auto& s : locals) s->deliver(msg);
  if (remote) part->send(id_, qos_, msg, options_.block_on_backpressure);
}

LoanedMessage Publisher::borrow_loaned() { return LoanedMessage(loans_, borrow_loaned_slot()); }

std::uint32_t Publisher::borrow_loaned_slot() {
  if (destroyed_) throw InvalidState("publisher on '" + topic_ + "' was destroyed");
  if (!loans_) throw Unsupported("publisher on '" + topic_ + "' was not created for loaned messages");
  auto slot = loans_->segment->borrow();
  std::lock_guard lock(loans_->mutex);
  loans_->borrowed[slot] = true;
  return slot;
}

void Publisher::publish_loaned(LoanedMessage& loan) {
  if (!loan.valid() || loan.book_ != loans_) throw InvalidState("loan was already published or is foreign");
  auto slot = loan.slot_;
  publish_loaned_slot(slot);
  loan.book_.reset();
}

void Publisher::publish_loaned_slot(std::uint32_t slot) {
  if (destroyed_) throw InvalidState("publisher on '" + topic_ + "' was destroyed");
  if (!loans_) throw Unsupported("publisher on '" + topic_ + "' was not created for loaned messages");
  auto* part = context_->participant();
  if (part != nullptr && part->has_offhost_readers(id_))
    throw Unsupported("loaned messages cannot reach subscriptions on other hosts");
  if (!loans_->take(slot)) throw InvalidState("slot " + std::to_string(slot) + " is not borrowed");

  auto& segment = *loans_->segment;
  LoanNotice notice{topic_hash(topic_), sequence_.fetch_add(1) + 1, context_->now_ns(), slot, segment.slot_size()};

  auto locals = context_->serialized_local_targets(*this);
  if (!locals.empty()) {
    segment.add_refs(slot, 1);
    auto sample = std::make_shared<const LoanedSample>(
        MessageHeader{topic_, notice.sequence, notice.publish_timestamp_ns}, loans_->segment, slot, notice.size);
    for (auto& s : locals) s->deliver(sample);
  }
  if (part != nullptr) part->send_loan(id_, qos_, notice, loans_->segment, options_.block_on_backpressure);
  segment.release(slot);
  context_->counters().loaned_publishes.fetch_add(1);
}

std::size_t Publisher::matched_subscription_count() const {
  std::size_t n = context_->local_matched_count(*this);
  if (auto* part = context_->participant()) n += part->remote_reader_count(id_);
  return n;
}

// ---------------------------------------------------------------------------
// Node

std::string NodeOptions::fully_qualified_name() const {
  std::string ns = namespace_.empty() ? "/" : namespace_;
  if (ns.front() != '/') ns.insert(ns.begin(), '/');
  if (ns.back() != '/') ns.push_back('/');
  return ns + name;
}

std::string NodeOptions::parameter(const std::string& key, const std::string& fallback) const {
  auto it = parameters.find(key);
  return it == parameters.end() ? fallback : it->second;
}

std::int64_t NodeOptions::parameter_int(const std::string& key, std::int64_t fallback) const {
  auto it = parameters.find(key);
  if (it == parameters.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw InvalidArgument("parameter '" + key + "' is not an integer: " + it->second);
  }
}

double NodeOptions::parameter_double(const std::string& key, double fallback) const {
  auto it = parameters.find(key);
  if (it == parameters.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw InvalidArgument("parameter '" + key + "' is not a number: " + it->second);
  }
}

bool NodeOptions::parameter_bool(const std::string& key, bool fallback) const {
  auto it = parameters.find(key);
  if (it == parameters.end()) return fallback;
  const auto& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("parameter '" + key + "' is not a boolean: " + v);
}

std::shared_ptr<Node> Node::create(NodeOptions options) {
  if (options.name.empty()) throw InvalidArgument("node name must not be empty");
  if (!options.context) options.context = Context::default_context();
  options.context->register_node(options.fully_qualified_name());
  std::shared_ptr<Node> node;
  try {
    node.reset(new Node(std::move(options)));
  } catch (...) {
    options.context->unregister_node(options.fully_qualified_name());
    throw;
  }
  if (node->options_.builtin_endpoints) {
    auto topic = std::string(kParameterEventsTopic);
    node->create_publisher(topic, QoSProfile::reliable(10));
    node->create_subscription(topic, QoSProfile::reliable(10), nullptr);
  }
  return node;
}

Node::Node(NodeOptions options)
    : options_(std::move(options)),
      context_(options_.context),
      default_group_(std::make_shared<CallbackGroup>(CallbackGroup::Kind::mutually_exclusive)),
      binding_(std::make_shared<detail::NodeBinding>()) {
  groups_.push_back(default_group_);
}

Node::~Node() {
  std::vector<std::shared_ptr<Executable>> execs;
  {
    std::lock_guard lock(mutex_);
    execs.swap(executables_);
  }
  for (auto& e : execs) e->detach();
  for (auto& t : timers_) t->cancel();
  for (auto& s : services_) s->detach();
  for (auto& s : subscriptions_) s->withdraw();
  for (auto& p : publishers_) p->destroy();
  context_->unregister_node(fully_qualified_name());
}

std::string Node::resolve_topic(const std::string& topic) const {
  if (topic.empty()) throw InvalidArgument("topic name must not be empty");
  if (topic.front() == '/') return topic;
  std::string ns = options_.namespace_.empty() ? "/" : options_.namespace_;
  if (ns.front() != '/') ns.insert(ns.begin(), '/');
  if (ns.back() != '/') ns.push_back('/');
  return ns + topic;
}

std::shared_ptr<CallbackGroup> Node::create_callback_group(CallbackGroup::Kind kind) {
  auto g = std::make_shared<CallbackGroup>(kind);
  std::lock_guard lock(mutex_);
  groups_.push_back(g);
  return g;
}

void Node::check_group(const std::shared_ptr<CallbackGroup>& group) const {
  std::lock_guard lock(mutex_);
  if (std::find(groups_.begin(), groups_.end(), group) == groups_.end())
    throw InvalidArgument("callback group does not belong to node '" + name() + "'");
}

void Node::add_executable(std::shared_ptr<Executable> e) {
  {
    std::lock_guard lock(mutex_);
    executables_.push_back(std::move(e));
  }
  binding_->entities_changed();
}

void Node::remove_executable(EntityId id) {
  {
    std::lock_guard lock(mutex_);
    std::erase_if(executables_, [&](const auto& e) {
      if (e->id() != id) return false;
      e->detach();
      return true;
    });
  }
  binding_->entities_changed();
}

std::shared_ptr<Publisher> Node::create_publisher(const std::string& topic, QoSProfile qos, PublisherOptions options) {
  qos.validate();
  auto pub = std::make_shared<Publisher>(context_->next_entity_id(), context_, resolve_topic(topic), qos, options,
                                         options_.ipc_enabled);
  context_->register_publisher(*pub);
  std::lock_guard lock(mutex_);
  publishers_.push_back(pub);
  return pub;
}

std::shared_ptr<Subscription> Node::create_subscription(const std::string& topic, QoSProfile qos,
                                                        SubscriptionCallback callback, SubscriptionOptions options) {
  qos.validate();
  if (options.group)
    check_group(options.group);
  else
    options.group = default_group_;
  auto sub = std::make_shared<Subscription>(context_->next_entity_id(), context_, resolve_topic(topic), qos,
                                            std::move(callback), std::move(options), binding_, options_.ipc_enabled);
  context_->register_subscription(sub);
  {
    std::lock_guard lock(mutex_);
    subscriptions_.push_back(sub);
  }
  add_executable(sub);
  return sub;
}

std::shared_ptr<Timer> Node::create_timer(std::chrono::nanoseconds period, Timer::Callback callback,
                                          std::shared_ptr<CallbackGroup> group) {
  if (period.count() <= 0) throw InvalidArgument("timer period must be positive");
  if (group)
    check_group(group);
  else
    group = default_group_;
  auto timer = std::make_shared<Timer>(context_->next_entity_id(), period, std::move(callback), std::move(group),
                                       binding_, context_->now_ns() + period.count());
  {
    std::lock_guard lock(mutex_);
    timers_.push_back(timer);
  }
  add_executable(timer);
  return timer;
}

std::shared_ptr<Service> Node::create_service(const std::string& name, Service::Handler handler,
                                              std::shared_ptr<CallbackGroup> group) {
  if (group)
    check_group(group);
  else
    group = default_group_;
  const auto topic = resolve_topic(name);
  auto requests = std::make_shared<Subscription>(context_->next_entity_id(), context_, topic, QoSProfile::reliable(100),
                                                 nullptr, SubscriptionOptions{group, {}}, binding_,
                                                 options_.ipc_enabled);
  context_->register_subscription(requests);
  auto replies = create_publisher(topic + "/reply", QoSProfile::reliable(100));
  auto service = std::make_shared<Service>(context_->next_entity_id(), requests, replies, std::move(handler),
                                           std::move(group), binding_);
  {
    std::lock_guard lock(mutex_);
    subscriptions_.push_back(requests);
    services_.push_back(service);
  }
  add_executable(service);
  return service;
}

std::shared_ptr<ServiceClient> Node::create_client(const std::string& name) {
  const auto topic = resolve_topic(name);
  auto requests = create_publisher(topic, QoSProfile::reliable(100));
  auto replies = std::make_shared<Subscription>(context_->next_entity_id(), context_, topic + "/reply",
                                                QoSProfile::reliable(100), nullptr,
                                                SubscriptionOptions{default_group_, {}}, binding_,
                                                options_.ipc_enabled);
  context_->register_subscription(replies);
  {
    std::lock_guard lock(mutex_);
    subscriptions_.push_back(replies);
  }
  return std::make_shared<ServiceClient>(context_, std::move(requests), std::move(replies));
}

void Node::destroy_publisher(const std::shared_ptr<Publisher>& pub) {
  {
    std::lock_guard lock(mutex_);
    std::erase(publishers_, pub);
  }
  pub->destroy();
}

void Node::destroy_subscription(const std::shared_ptr<Subscription>& sub) {
  {
    std::lock_guard lock(mutex_);
    std::erase(subscriptions_, sub);
  }
  remove_executable(sub->id());
  sub->withdraw();
}

void Node::destroy_timer(const std::shared_ptr<Timer>& timer) {
  {
    std::lock_guard lock(mutex_);
    std::erase(timers_, timer);
  }
  timer->cancel();
  remove_executable(timer->id());
}

std::vector<std::shared_ptr<Executable>> Node::executables() const {
  std::lock_guard lock(mutex_);
  return executables_;
}

std::size_t Node::publisher_count() const {
  std::lock_guard lock(mutex_);
  return publishers_.size();
}

std::size_t Node::subscription_count() const {
  std::lock_guard lock(mutex_);
  return subscriptions_.size();
}

std::size_t Node::timer_count() const {
  std::lock_guard lock(mutex_);
  return timers_.size();
}

std::size_t Node::service_count() const {
  std::lock_guard lock(mutex_);
  return services_.size();
}

bool Node::try_claim_executor(const void* executor) noexcept {
  const void* expected = nullptr;
  return executor_.compare_exchange_strong(expected, executor);
}

void Node::release_executor(const void* executor) noexcept {
  const void* expected = executor;
  executor_.compare_exchange_strong(expected, nullptr);
}

// ---------------------------------------------------------------------------
// Context

std::shared_ptr<Context> Context::create(ContextOptions options) {
  // A delivery can drop the last reference to a subscription, and with it the
  // context, on the receive thread. That thread cannot join itself, so the
  // teardown moves to a thread of its own.
  std::shared_ptr<Context> ctx(new Context(std::move(options)), [](Context* c) {
    if (c->participant_ && c->participant_->on_receive_thread())
      std::thread([c] { delete c; }).detach();
    else
      delete c;
  });
  ctx->start();
  return ctx;
}

std::shared_ptr<Context> Context::default_context() {
  static std::mutex mutex;
  static std::shared_ptr<Context> instance;
  std::lock_guard lock(mutex);
  if (!instance) instance = create();
  return instance;
}

Context::Context(ContextOptions options)
    : options_(std::move(options)), ipc_(std::make_unique<IntraProcessManager>()) {}

void Context::start() {
  if (options_.enable_transport) participant_ = std::make_unique<Participant>(*this, options_);
}

Context::~Context() {
  shutdown();
  participant_.reset();
}

std::int64_t Context::now_ns() const {
  if (options_.clock) return options_.clock();
  return std::chrono::duration_cast<std::chrono::nanoseconds>(SteadyClock::now().time_since_epoch()).count() -
         options_.clock_offset_ns;
}

void Context::shutdown() {
  shutdown_ = true;
  std::vector<std::shared_ptr<WakeSignal>> wakes;
  {
    std::lock_guard lock(mutex_);
    for (auto& w : wakes_)
      if (auto s = w.lock()) wakes.push_back(std::move(s));
  }
  for (auto& w : wakes) w->notify();
}

void Context::add_wake(const std::shared_ptr<WakeSignal>& wake) {
  std::lock_guard lock(mutex_);
  std::erase_if(wakes_, [](const auto& w) { return w.expired(); });
  wakes_.push_back(wake);
}

StatsSnapshot Context::stats() const {
  StatsSnapshot s;
  s.serializations = counters_.serializations.load();
  s.deserializations = counters_.deserializations.load();
  s.payload_bytes_copied = counters_.payload_bytes_copied.load();
  s.ipc_deliveries = counters_.ipc_deliveries.load();
  s.datagrams_sent = counters_.datagrams_sent.load();
  s.datagram_bytes_sent = counters_.datagram_bytes_sent.load();
  s.datagrams_received = counters_.datagrams_received.load();
  s.retransmissions = counters_.retransmissions.load();
  s.loaned_publishes = counters_.loaned_publishes.load();
  return s;
}

std::size_t Context::node_count() const {
  std::shared_lock lock(mutex_);
  return nodes_.size();
}

std::vector<std::string> Context::node_names() const {
  std::shared_lock lock(mutex_);
  return nodes_;
}

void Context::register_node(const std::string& fq_name) {
  std::size_t count;
  {
    std::unique_lock lock(mutex_);
    if (std::find(nodes_.begin(), nodes_.end(), fq_name) != nodes_.end())
      throw AlreadyExists("node '" + fq_name + "' already exists in this process");
    nodes_.push_back(fq_name);
    count = nodes_.size();
  }
  if (participant_) participant_->set_node_count(count);
}

void Context::unregister_node(const std::string& fq_name) {
  std::size_t count;
  {
    std::unique_lock lock(mutex_);
    std::erase(nodes_, fq_name);
    count = nodes_.size();
  }
  if (participant_) participant_->set_node_count(count);
}

void Context::register_subscription(const std::shared_ptr<Subscription>& sub) {
  {
    std::unique_lock lock(mutex_);
    subscriptions_.emplace(sub->topic(), sub);
  }
  if (sub->ipc_active()) ipc_->add_subscription(sub);
  if (participant_) participant_->add_reader(sub);
}

void Context::unregister_subscription(EntityId id) {
  {
    std::unique_lock lock(mutex_);
    std::erase_if(subscriptions_, [&](const auto& kv) {
      auto s = kv.second.lock();
      return !s || s->id() == id;
    });
  }
  ipc_->remove_subscription(id);
  if (participant_) participant_->remove_reader(id);
}

void Context::register_publisher(const Publisher& pub) {
  {
    std::unique_lock lock(mutex_);
    publishers_.emplace(pub.topic(), PublisherEntry{pub.id(), pub.qos()});
  }
  if (pub.ipc_active()) ipc_->add_publisher(pub.id(), pub.topic(), pub.qos());
  if (participant_) participant_->add_writer(pub);
}

void Context::unregister_publisher(EntityId id) {
  {
    std::unique_lock lock(mutex_);
    std::erase_if(publishers_, [&](const auto& kv) { return kv.second.id == id; });
  }
  ipc_->remove_publisher(id);
  if (participant_) participant_->remove_writer(id);
}

std::vector<std::shared_ptr<Subscription>> Context::serialized_local_targets(const Publisher& pub) const {
  std::vector<std::shared_ptr<Subscription>> out;
  std::shared_lock lock(mutex_);
  auto [lo, hi] = subscriptions_.equal_range(pub.topic());
  for (auto it = lo; it != hi; ++it) {
    auto s = it->second.lock();
    if (!s || !qos_compatible(pub.qos(), s->qos())) continue;
    if (pub.ipc_active() && s->ipc_active()) continue;
    out.push_back(std::move(s));
  }
  return out;
}

std::size_t Context::local_matched_count(const Publisher& pub) const {
  std::size_t n = 0;
  std::shared_lock lock(mutex_);
  auto [lo, hi] = subscriptions_.equal_range(pub.topic());
  for (auto it = lo; it != hi; ++it) {
    auto s = it->second.lock();
    if (s && qos_compatible(pub.qos(), s->qos())) ++n;
  }
  return n;
}

std::size_t Context::local_publisher_count(const Subscription& sub) const {
  std::size_t n = 0;
  std::shared_lock lock(mutex_);
  auto [lo, hi] = publishers_.equal_range(sub.topic());
  for (auto it = lo; it != hi; ++it)
    if (qos_compatible(it->second.qos, sub.qos())) ++n;
  return n;
}

}  // namespace cbench
