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

#include "cbench/bench/components.hpp"

namespace cbench::bench {

DeliverySink& DeliverySink::instance() {
  static DeliverySink sink;
  return sink;
}

void DeliverySink::record(std::int64_t latency_ns, std::size_t payload_bytes) {
  std::lock_guard lock(mutex_);
  ++s_.callbacks_total;
  if (!recording_) return;
  if (s_.messages == 0 || latency_ns < s_.latency_min_ns) s_.latency_min_ns = latency_ns;
  if (s_.messages == 0 || latency_ns > s_.latency_max_ns) s_.latency_max_ns = latency_ns;
  ++s_.messages;
  s_.payload_bytes += payload_bytes;
  s_.latency_sum_ns += static_cast<double>(latency_ns);
}

void DeliverySink::set_recording(bool on) {
  std::lock_guard lock(mutex_);
  const auto now = SteadyClock::now();
  if (on) {
    const auto total = s_.callbacks_total;
    s_ = Snapshot{};
    s_.callbacks_total = total;
    started_ = now;
  } else if (recording_) {
    stopped_ = now;
  }
  recording_ = on;
}

DeliverySink::Snapshot DeliverySink::snapshot() const {
  std::lock_guard lock(mutex_);
  auto out = s_;
  const auto end = recording_ ? SteadyClock::now() : stopped_;
  if (started_ != SteadyClock::time_point{}) out.window_ns = (end - started_).count();
  return out;
}

NodeOptions with_builtin_endpoints(NodeOptions options) {
  options.builtin_endpoints = true;
  return options;
}

QoSProfile qos_from_parameters(const NodeOptions& options) {
  const auto depth = options.parameter_int("depth", 10);
  if (depth < 1) throw InvalidArgument("depth must be at least 1");
  const auto reliability = options.parameter("reliability", "reliable");
  if (reliability == "reliable") return QoSProfile::reliable(static_cast<std::size_t>(depth));
  if (reliability == "best_effort") return QoSProfile::best_effort(static_cast<std::size_t>(depth));
  throw InvalidArgument("unknown reliability '" + reliability + "'");
}

EmptyComponent::EmptyComponent(const NodeOptions& options) : Component(with_builtin_endpoints(options)) {}

TalkerComponent::TalkerComponent(const NodeOptions& options)
    : Component(with_builtin_endpoints(options)),
      size_(static_cast<std::size_t>(options.parameter_int("size_bytes", 1000))),
      loaned_(options.parameter_bool("loaned", false)) {
  const auto freq = options.parameter_double("freq_hz", 50.0);
  if (freq < 0) throw InvalidArgument("freq_hz must not be negative");
  PublisherOptions po;
  po.loaned = loaned_;
  po.loan_slot_size = size_;
  pub_ = node()->create_publisher(options.parameter("topic", "/bench"), qos_from_parameters(options), po);
  const auto period = freq > 0 ? std::chrono::nanoseconds(static_cast<std::int64_t>(1e9 / freq))
                               : std::chrono::nanoseconds(1);
  timer_ = node()->create_timer(period, [this] { tick(); });
}

TalkerComponent::~TalkerComponent() { timer_->cancel(); }

void TalkerComponent::tick() {
  if (loaned_) {
    try {
      auto loan = pub_->borrow_loaned();
      pub_->publish_loaned(loan);
      published_.fetch_add(1);
    } catch (const BackpressureError&) {
      backpressured_.fetch_add(1);
    }
    return;
  }
  // Buffers come back once every reader has dropped them.
  while (!in_flight_.empty() && spare_.empty()) {
    auto b = pub_->reclaim(in_flight_.front());
    if (b.empty() && in_flight_.front()) break;
    in_flight_.pop_front();
    if (b.size() == size_) spare_ = std::move(b);
  }
  Bytes data = spare_.size() == size_ ? std::move(spare_) : Bytes(size_);
  spare_.clear();
  in_flight_.push_back(pub_->publish_shared(std::move(data)));
  if (in_flight_.size() > 8) in_flight_.pop_front();
  published_.fetch_add(1);
}

ListenerComponent::ListenerComponent(const NodeOptions& options) : Component(with_builtin_endpoints(options)) {
  const auto work_us = options.parameter_int("work_us", 0);
  if (work_us < 0) throw InvalidArgument("work_us must not be negative");
  SubscriptionOptions so;
  so.synthetic_work = std::chrono::microseconds(work_us);
  auto* ctx = node()->context_ptr().get();
  sub_ = node()->create_subscription(
      options.parameter("topic", "/bench"), qos_from_parameters(options),
      [this, ctx](const ReceivedMessage& m) {
        DeliverySink::instance().record(ctx->now_ns() - m.publish_timestamp_ns, m.data.size());
        received_.fetch_add(1);
      },
      so);
}

ListenerComponent::~ListenerComponent() = default;

CBENCH_REGISTER_COMPONENT(EmptyComponent, "empty");
CBENCH_REGISTER_COMPONENT(TalkerComponent, "talker");
CBENCH_REGISTER_COMPONENT(ListenerComponent, "listener");

std::size_t bench_component_count() { return 3; }

}  // namespace cbench::bench
