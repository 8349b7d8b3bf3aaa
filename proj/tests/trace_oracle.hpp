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

// Replays one recorded event trace against a fixed graph under a chosen
// executor kind and returns the callback invocation sequence.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cbench/executor.hpp"

namespace cbench::testing {

struct TraceGraph {
  std::vector<std::int64_t> timer_periods_ns;
  std::vector<int> subscription_topics;  // topic index per subscription
  std::vector<std::uint32_t> depths;
  int topics = 1;
};

struct TraceEvent {
  enum class Kind { advance, publish, add_subscription, remove_subscription, spin };
  Kind kind = Kind::spin;
  std::int64_t value = 0;  // advance: ns; publish: topic; add: topic; remove: subscription index
};

struct Trace {
  TraceGraph graph;
  std::vector<TraceEvent> events;
};

inline Trace random_trace(std::mt19937_64& rng, std::size_t max_entities = 10, std::size_t steps = 120) {
  Trace t;
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  t.graph.topics = pick(1, 3);
  const int timers = pick(0, 3);
  const int subs = pick(1, static_cast<int>(max_entities) - timers - 1);
  for (int i = 0; i < timers; ++i) t.graph.timer_periods_ns.push_back(pick(1, 8) * 1'000'000LL);
  for (int i = 0; i < subs; ++i) {
    t.graph.subscription_topics.push_back(pick(0, t.graph.topics - 1));
    t.graph.depths.push_back(static_cast<std::uint32_t>(pick(1, 4)));
  }
  std::size_t live = static_cast<std::size_t>(timers + subs);
  int added = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    switch (pick(0, 9)) {
      case 0:
      case 1:
        t.events.push_back({TraceEvent::Kind::advance, pick(0, 5) * 1'000'000LL});
        break;
      case 2:
      case 3:
      case 4:
        t.events.push_back({TraceEvent::Kind::publish, pick(0, t.graph.topics - 1)});
        break;
      case 5:
        if (live < max_entities) {
          t.events.push_back({TraceEvent::Kind::add_subscription, pick(0, t.graph.topics - 1)});
          ++live;
          ++added;
        }
        break;
      case 6:
        if (subs + added > 0) t.events.push_back({TraceEvent::Kind::remove_subscription, pick(0, subs + added - 1)});
        break;
      default:
        t.events.push_back({TraceEvent::Kind::spin, 0});
    }
  }
  t.events.push_back({TraceEvent::Kind::spin, 0});
  return t;
}

inline std::vector<std::string> replay(const Trace& trace, ExecutorKind kind) {
  std::int64_t now = 1'000'000'000;
  ContextOptions o;
  o.enable_transport = false;
  o.clock = [&now] { return now; };
  auto ctx = Context::create(o);
  NodeOptions no;
  no.name = "trace";
  no.ipc_enabled = true;
  no.context = ctx;
  auto node = Node::create(no);

  std::vector<std::string> log;
  std::vector<std::shared_ptr<Publisher>> pubs;
  for (int i = 0; i < trace.graph.topics; ++i)
    pubs.push_back(node->create_publisher("topic" + std::to_string(i), QoSProfile::reliable(8)));
  for (std::size_t i = 0; i < trace.graph.timer_periods_ns.size(); ++i)
    node->create_timer(std::chrono::nanoseconds(trace.graph.timer_periods_ns[i]),
                       [&log, i] { log.push_back("t" + std::to_string(i)); });
  std::vector<std::shared_ptr<Subscription>> subs;
  auto add_sub = [&](int topic, std::uint32_t depth) {
    auto index = subs.size();
    subs.push_back(node->create_subscription(
        "topic" + std::to_string(topic), QoSProfile::reliable(depth),
        [&log, index](const ReceivedMessage& m) {
          log.push_back("s" + std::to_string(index) + ":" + std::to_string(m.sequence));
        }));
  };
  for (std::size_t i = 0; i < trace.graph.subscription_topics.size(); ++i)
    add_sub(trace.graph.subscription_topics[i], trace.graph.depths[i]);

  Executor exec(kind, ctx);
  exec.add_node(node);
  for (const auto& e : trace.events) {
    switch (e.kind) {
      case TraceEvent::Kind::advance:
        now += e.value;
        break;
      case TraceEvent::Kind::publish:
        pubs[static_cast<std::size_t>(e.value)]->publish(Bytes(4));
        break;
      case TraceEvent::Kind::add_subscription:
        add_sub(static_cast<int>(e.value), 3);
        break;
      case TraceEvent::Kind::remove_subscription: {
        auto& s = subs[static_cast<std::size_t>(e.value)];
        if (s) node->destroy_subscription(s);
        s.reset();
        break;
      }
      case TraceEvent::Kind::spin:
        exec.spin_some();
        break;
    }
  }
  return log;
}

}  // namespace cbench::testing
