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

#include "cbench/bench/worker.hpp"

#include <unistd.h>

#include <iostream>
#include <nlohmann/json.hpp>
#include <string>

#include "cbench/bench/components.hpp"
#include "cbench/bench/experiment.hpp"
#include "cbench/bench/metrics.hpp"

namespace cbench::bench {

namespace {

using nlohmann::json;

std::int64_t monotonic_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(SteadyClock::now().time_since_epoch()).count();
}

ExecutorKind parse_executor(const std::string& s) {
  if (s == "single_threaded") return ExecutorKind::single_threaded;
  if (s == "multi_threaded") return ExecutorKind::multi_threaded;
  if (s == "static_single_threaded") return ExecutorKind::static_single_threaded;
  throw InvalidArgument("unknown executor kind '" + s + "'");
}

class Worker {
 public:
  json handle(const json& req) {
    const auto op = req.at("op").get<std::string>();
    if (op == "hello") return {{"ok", true}, {"pid", ::getpid()}, {"now_ns", monotonic_ns()}};
    if (op == "start") return start(req);
    if (op == "record") {
      DeliverySink::instance().set_recording(req.at("on").get<bool>());
      return {{"ok", true}};
    }
    if (op == "stats") return stats();
    if (op == "quit") {
      stop();
      return {{"ok", true}};
    }
    throw InvalidArgument("unknown op '" + op + "'");
  }

  void stop() {
    image_.reset();
    manager_.reset();
    if (context_) context_->shutdown();
    context_.reset();
  }

 private:
  json start(const json& req) {
    if (context_) throw InvalidState("worker already started");
    ContextOptions co;
    co.rendezvous = req.value("rendezvous", std::string());
    co.clock_offset_ns = req.value("offset_ns", std::int64_t{0});
    context_ = Context::create(co);

    const auto mode = req.at("mode").get<std::string>();
    if (mode == "manual") {
      std::vector<ManualComponent> components;
      for (const auto& n : req.at("nodes")) {
        ManualComponent c;
        c.component = n.at("component").get<std::string>();
        c.options.name = n.at("name").get<std::string>();
        c.options.ipc_enabled = n.value("ipc", false);
        c.options.parameters = n.value("parameters", std::map<std::string, std::string>{});
        c.options.context = context_;
        components.push_back(std::move(c));
      }
      auto plan = single_executor_plan(components.size(), parse_executor(req.value("executor", "single_threaded")));
      plan.front().worker_count = req.value("workers", std::size_t{0});
      image_ = compose_manual(components, plan, context_);
      image_->start();
    } else if (mode == "container") {
      ContainerOptions o;
      o.kind = parse_container(req.value("container", "single"));
      o.name = req.value("name", std::string("ComponentManager"));
      o.context = context_;
      o.worker_count = req.value("workers", std::size_t{0});
      manager_ = ComponentManager::start_container(std::move(o));
    } else {
      throw InvalidArgument("unknown mode '" + mode + "'");
    }
    return {{"ok", true}};
  }

  json stats() const {
    auto s = DeliverySink::instance().snapshot();
    json out = {{"ok", true},
                {"messages", s.messages},
                {"payload_bytes", s.payload_bytes},
                {"latency_sum_ns", s.latency_sum_ns},
                {"latency_min_ns", s.latency_min_ns},
                {"latency_max_ns", s.latency_max_ns},
                {"window_ns", s.window_ns},
                {"callbacks_total", s.callbacks_total}};
    if (context_) {
      auto t = context_->stats();
      out["retransmissions"] = t.retransmissions;
      out["datagrams_sent"] = t.datagrams_sent;
      out["serializations"] = t.serializations;
    }
    if (manager_) out["executors"] = manager_->executor_count();
    return out;
  }

  std::shared_ptr<Context> context_;
  std::unique_ptr<ManualImage> image_;
  std::unique_ptr<ComponentManager> manager_;
};

}  // namespace

int run_worker(std::istream& in, std::ostream& out) {
  // Keeps the measured footprint independent of which code paths have run.
  prefault_program_image();
  Worker worker;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json reply;
    bool quit = false;
    try {
      auto req = json::parse(line);
      quit = req.value("op", "") == "quit";
      reply = worker.handle(req);
    } catch (const std::exception& e) {
      reply = {{"ok", false}, {"error", e.what()}};
    }
    out << reply.dump() << '\n' << std::flush;
    if (quit) return 0;
  }
  worker.stop();
  return 0;
}

}  // namespace cbench::bench
