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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "cbench/graph.hpp"

namespace cbench {

enum class ExecutorKind { single_threaded, multi_threaded, static_single_threaded };

const char* to_string(ExecutorKind kind) noexcept;

struct WaitSetEntry {
  EntityId id = 0;
  EntityKind kind = EntityKind::subscription;
  bool ready = false;
};

/// Array of waitable entities, kept in registration (entity id) order.
class WaitSet {
 public:
  void add(std::shared_ptr<Executable> e);
  bool remove(EntityId id);
  void clear();

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<WaitSetEntry>& entries() const noexcept { return entries_; }
  const std::shared_ptr<Executable>& handle(std::size_t index) const { return handles_.at(index); }
  std::shared_ptr<Executable> find(EntityId id) const;
  bool contains(EntityId id) const { return find(id) != nullptr; }

  void clear_ready() noexcept;
  /// Earliest next-due time among timers.
  std::optional<std::int64_t> next_timer_due() const;

 private:
  friend std::vector<EntityId> collect_ready(WaitSet&, std::int64_t);
  std::vector<WaitSetEntry> entries_;
  std::vector<std::shared_ptr<Executable>> handles_;
};

/// Marks and returns the ready entries at `now_ns`: due timers first, then
/// subscriptions, then services, each group in registration order.
/// Ready flags from a previous call are cleared first.
std::vector<EntityId> collect_ready(WaitSet& waitset, std::int64_t now_ns);

/// Worker count used by the multi-threaded executor when none is given.
std::size_t default_worker_count() noexcept;

/// Services the entities of its nodes. The single-threaded kind rebuilds the
/// wait set from its nodes on every iteration, the static kind keeps one
/// list and edits it as entities come and go, and the multi-threaded kind
/// runs callbacks on a pool subject to callback-group exclusion.
class Executor {
 public:
  Executor(ExecutorKind kind, std::shared_ptr<Context> context = nullptr, std::size_t worker_count = 0);
  virtual ~Executor();

  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  ExecutorKind kind() const noexcept { return kind_; }
  std::size_t worker_count() const noexcept { return workers_; }
  Context& context() const noexcept { return *context_; }

  /// Throws AlreadyExists when the node is serviced by any executor and
  /// InvalidArgument when it belongs to another context.
  void add_node(const std::shared_ptr<Node>& node);
  /// After return no callback of `node` starts on this executor.
  void remove_node(const std::shared_ptr<Node>& node);
  std::vector<std::shared_ptr<Node>> nodes() const;

  /// Runs until the context shuts down or cancel() is called.
  void spin();
  /// One readiness pass without blocking; returns callbacks executed.
  std::size_t spin_some();
  /// Waits up to `timeout` for work, then does one pass.
  std::size_t spin_once(std::chrono::nanoseconds timeout);
  /// Makes every current and future spin return. Sticky.
  void cancel();
  bool cancelled() const noexcept { return cancelled_.load(); }

  /// Current entries (rebuilt for the dynamic kinds).
  WaitSet waitset() const;
  std::size_t entry_count() const { return waitset().size(); }

  /// Readiness collections performed so far.
  std::uint64_t collections() const noexcept { return collections_.load(); }
  std::uint64_t executed() const noexcept { return executed_.load(); }

 private:
  bool running() const noexcept;
  WaitSet build_waitset_locked() const;
  void sync_node_locked(const Node& node);
  std::size_t run_pass();
  void worker_loop();
  void wait_for_work();
  bool run_one(const std::shared_ptr<Executable>& e, std::int64_t now_ns);
  void on_entities_changed(const Node* node);

  const ExecutorKind kind_;
  std::shared_ptr<Context> context_;
  std::size_t workers_;
  std::shared_ptr<WakeSignal> wake_;
  std::atomic<bool> cancelled_{false};
  std::atomic<std::uint64_t> collections_{0};
  std::atomic<std::uint64_t> executed_{0};

  mutable std::mutex mutex_;
  std::condition_variable idle_cv_;
  std::vector<std::shared_ptr<Node>> nodes_;
  std::set<EntityId> members_;
  std::map<const Node*, std::vector<EntityId>> node_entities_;
  WaitSet static_waitset_;
  std::map<EntityId, std::thread::id> inflight_;
  EntityId last_pick_ = 0;
};

std::unique_ptr<Executor> make_executor(ExecutorKind kind, std::shared_ptr<Context> context = nullptr,
                                        std::size_t worker_count = 0);

/// Spins an executor on a dedicated thread; cancels and joins on destruction.
class ExecutorThread {
 public:
  explicit ExecutorThread(std::shared_ptr<Executor> executor);
  ~ExecutorThread();
  ExecutorThread(const ExecutorThread&) = delete;
  ExecutorThread& operator=(const ExecutorThread&) = delete;

  Executor& executor() const noexcept { return *executor_; }
  void stop();

 private:
  std::shared_ptr<Executor> executor_;
  std::thread thread_;
};

}  // namespace cbench
