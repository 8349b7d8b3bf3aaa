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

#include "cbench/executor.hpp"

#include <algorithm>

namespace cbench {

const char* to_string(ExecutorKind kind) noexcept {
  switch (kind) {
    case ExecutorKind::single_threaded:
      return "single_threaded";
    case ExecutorKind::multi_threaded:
      return "multi_threaded";
    case ExecutorKind::static_single_threaded:
      return "static_single_threaded";
  }
  return "unknown";
}

std::size_t default_worker_count() noexcept {
  return std::max<std::size_t>(std::thread::hardware_concurrency(), 2);
}

// ---------------------------------------------------------------------------
// WaitSet

void WaitSet::add(std::shared_ptr<Executable> e) {
  auto pos = std::lower_bound(entries_.begin(), entries_.end(), e->id(),
                              [](const WaitSetEntry& a, EntityId id) { return a.id < id; });
  auto index = pos - entries_.begin();
  if (pos != entries_.end() && pos->id == e->id()) {
    handles_[static_cast<std::size_t>(index)] = std::move(e);
    return;
  }
  entries_.insert(pos, WaitSetEntry{e->id(), e->kind(), false});
  handles_.insert(handles_.begin() + index, std::move(e));
}

bool WaitSet::remove(EntityId id) {
  auto pos = std::lower_bound(entries_.begin(), entries_.end(), id,
                              [](const WaitSetEntry& a, EntityId v) { return a.id < v; });
  if (pos == entries_.end() || pos->id != id) return false;
  auto index = pos - entries_.begin();
  entries_.erase(pos);
  handles_.erase(handles_.begin() + index);
  return true;
}

void WaitSet::clear() {
  entries_.clear();
  handles_.clear();
}

std::shared_ptr<Executable> WaitSet::find(EntityId id) const {
  auto pos = std::lower_bound(entries_.begin(), entries_.end(), id,
                              [](const WaitSetEntry& a, EntityId v) { return a.id < v; });
  if (pos == entries_.end() || pos->id != id) return nullptr;
  return handles_[static_cast<std::size_t>(pos - entries_.begin())];
}

void WaitSet::clear_ready() noexcept {
  for (auto& e : entries_) e.ready = false;
}

std::optional<std::int64_t> WaitSet::next_timer_due() const {
  std::optional<std::int64_t> due;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].kind != EntityKind::timer || handles_[i]->detached()) continue;
    if (auto d = handles_[i]->next_due_ns(); d && (!due || *d < *due)) due = d;
  }
  return due;
}

std::vector<EntityId> collect_ready(WaitSet& ws, std::int64_t now_ns) {
  ws.clear_ready();
  for (std::size_t i = 0; i < ws.entries_.size(); ++i) {
    const auto& h = ws.handles_[i];
    ws.entries_[i].ready = !h->detached() && h->is_ready(now_ns);
  }
  std::vector<EntityId> out;
  for (auto kind : {EntityKind::timer, EntityKind::subscription, EntityKind::service})
    for (const auto& e : ws.entries_)
      if (e.ready && e.kind == kind) out.push_back(e.id);
  return out;
}

// ---------------------------------------------------------------------------
// Executor

Executor::Executor(ExecutorKind kind, std::shared_ptr<Context> context, std::size_t worker_count)
    : kind_(kind),
      context_(context ? std::move(context) : Context::default_context()),
      workers_(kind == ExecutorKind::multi_threaded ? (worker_count == 0 ? default_worker_count() : worker_count)
                                                    : 1),
      wake_(std::make_shared<WakeSignal>()) {
  if (kind != ExecutorKind::multi_threaded && worker_count > 1)
    throw InvalidArgument(std::string(to_string(kind)) + " executors have exactly one worker");
  context_->add_wake(wake_);
}

Executor::~Executor() {
  cancel();
  std::vector<std::shared_ptr<Node>> nodes;
  {
    std::lock_guard lock(mutex_);
    nodes.swap(nodes_);
  }
  for (auto& n : nodes) {
    auto& b = *n->binding();
    {
      std::lock_guard lock(b.mutex);
      b.wake.reset();
      b.on_entities_changed = nullptr;
    }
    n->release_executor(this);
  }
}

bool Executor::running() const noexcept { return !cancelled_.load() && context_->ok(); }

void Executor::add_node(const std::shared_ptr<Node>& node) {
  if (!node) throw InvalidArgument("null node");
  if (node->context_ptr() != context_)
    throw InvalidArgument("node '" + node->name() + "' belongs to a different context");
  if (!node->try_claim_executor(this))
    throw AlreadyExists("node '" + node->name() + "' is already serviced by an executor");
  {
    std::lock_guard lock(mutex_);
    nodes_.push_back(node);
    if (kind_ == ExecutorKind::static_single_threaded) sync_node_locked(*node);
  }
  {
    auto& b = *node->binding();
    std::lock_guard lock(b.mutex);
    b.wake = wake_;
    const Node* raw = node.get();
    b.on_entities_changed = [this, raw] { on_entities_changed(raw); };
  }
  wake_->notify();
}

void Executor::remove_node(const std::shared_ptr<Node>& node) {
  if (!node) return;
  std::vector<EntityId> ids;
  {
    std::lock_guard lock(mutex_);
    auto it = std::find(nodes_.begin(), nodes_.end(), node);
    if (it == nodes_.end()) throw NotFound("node '" + node->name() + "' is not in this executor");
    nodes_.erase(it);
    auto known = node_entities_.find(node.get());
    if (known != node_entities_.end()) {
      ids = known->second;
      node_entities_.erase(known);
    }
    for (const auto& e : node->executables()) ids.push_back(e->id());
    for (auto id : ids) {
      members_.erase(id);
      static_waitset_.remove(id);
    }
  }
  {
    auto& b = *node->binding();
    std::lock_guard lock(b.mutex);
    b.wake.reset();
    b.on_entities_changed = nullptr;
  }
  {
    std::unique_lock lock(mutex_);
    const auto self = std::this_thread::get_id();
    idle_cv_.wait(lock, [&] {
      for (auto id : ids) {
        auto it = inflight_.find(id);
        if (it != inflight_.end() && it->second != self) return false;
      }
      return true;
    });
  }
  node->release_executor(this);
}

std::vector<std::shared_ptr<Node>> Executor::nodes() const {
  std::lock_guard lock(mutex_);
  return nodes_;
}

void Executor::sync_node_locked(const Node& node) {
  auto& known = node_entities_[&node];
  std::vector<EntityId> now;
  for (const auto& e : node.executables()) {
    now.push_back(e->id());
    if (!static_waitset_.contains(e->id())) static_waitset_.add(e);
    members_.insert(e->id());
  }
  for (auto id : known)
    if (std::find(now.begin(), now.end(), id) == now.end()) {
      static_waitset_.remove(id);
      members_.erase(id);
    }
  known = std::move(now);
}

void Executor::on_entities_changed(const Node* node) {
  {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(nodes_.begin(), nodes_.end(), [&](const auto& n) { return n.get() == node; });
    if (it == nodes_.end()) return;
    if (kind_ == ExecutorKind::static_single_threaded) sync_node_locked(**it);
  }
  wake_->notify();
}

WaitSet Executor::build_waitset_locked() const {
  WaitSet ws;
  for (const auto& n : nodes_)
    for (auto& e : n->executables()) ws.add(std::move(e));
  return ws;
}

WaitSet Executor::waitset() const {
  std::lock_guard lock(mutex_);
  if (kind_ == ExecutorKind::static_single_threaded) return static_waitset_;
  return build_waitset_locked();
}

bool Executor::run_one(const std::shared_ptr<Executable>& e, std::int64_t now_ns) {
  {
    std::lock_guard lock(mutex_);
    if (!members_.count(e->id()) || e->detached() || inflight_.count(e->id())) return false;
    if (!e->group().try_enter()) return false;
    inflight_[e->id()] = std::this_thread::get_id();
  }
  bool ran = false;
  try {
    ran = e->execute(now_ns);
  } catch (...) {
    e->group().exit();
    std::lock_guard lock(mutex_);
    inflight_.erase(e->id());
    idle_cv_.notify_all();
    throw;
  }
  e->group().exit();
  {
    std::lock_guard lock(mutex_);
    inflight_.erase(e->id());
  }
  idle_cv_.notify_all();
  if (ran) executed_.fetch_add(1);
  return ran;
}

std::size_t Executor::run_pass() {
  std::vector<std::shared_ptr<Executable>> ready;
  std::int64_t now = context_->now_ns();
  {
    std::lock_guard lock(mutex_);
    if (kind_ == ExecutorKind::static_single_threaded) {
      for (auto id : collect_ready(static_waitset_, now)) ready.push_back(static_waitset_.find(id));
    } else {
      auto ws = build_waitset_locked();
      members_.clear();
      for (const auto& entry : ws.entries()) members_.insert(entry.id);
      for (auto id : collect_ready(ws, now)) ready.push_back(ws.find(id));
    }
  }
  collections_.fetch_add(1);
  std::size_t n = 0;
  for (const auto& e : ready) {
    if (!running()) break;
    if (run_one(e, now)) ++n;
  }
  return n;
}

void Executor::wait_for_work() {
  auto limit = SteadyClock::now() + std::chrono::milliseconds(1);
  std::optional<std::int64_t> due;
  {
    std::lock_guard lock(mutex_);
    due = kind_ == ExecutorKind::static_single_threaded ? static_waitset_.next_timer_due()
                                                        : build_waitset_locked().next_timer_due();
  }
  if (due) {
    auto delta = std::chrono::nanoseconds(*due - context_->now_ns());
    if (delta.count() <= 0) return;
    limit = std::min(limit, SteadyClock::now() + delta);
  }
  wake_->wait_until(limit);
}

void Executor::worker_loop() {
  while (running()) {
    std::shared_ptr<Executable> pick;
    std::int64_t now = context_->now_ns();
    {
      std::lock_guard lock(mutex_);
      auto ws = build_waitset_locked();
      members_.clear();
      for (const auto& entry : ws.entries()) members_.insert(entry.id);
      // Scan round-robin from just after the previous pick; always taking
      // the first eligible entity starves later members of a busy
      // mutually exclusive group.
      auto ready = collect_ready(ws, now);
      // Rank in the order collect_ready uses: kind first, then position.
      std::map<EntityId, std::size_t> rank;
      for (auto kind : {EntityKind::timer, EntityKind::subscription, EntityKind::service})
        for (const auto& entry : ws.entries())
          if (entry.kind == kind) rank.emplace(entry.id, rank.size());
      std::size_t start = 0;
      if (auto last = rank.find(last_pick_); last != rank.end()) {
        auto it = std::find_if(ready.begin(), ready.end(), [&](EntityId id) { return rank[id] > last->second; });
        if (it != ready.end()) start = static_cast<std::size_t>(it - ready.begin());
      }
      for (std::size_t k = 0; k < ready.size(); ++k) {
        const auto id = ready[(start + k) % ready.size()];
        auto e = ws.find(id);
        if (inflight_.count(id)) continue;
        if (e->group().kind() == CallbackGroup::Kind::mutually_exclusive && e->group().occupancy() > 0) continue;
        pick = std::move(e);
        last_pick_ = id;
        break;
      }
    }
    collections_.fetch_add(1);
    if (pick && run_one(pick, now)) {
      wake_->notify();
      continue;
    }
    wait_for_work();
  }
}

void Executor::spin() {
  if (kind_ != ExecutorKind::multi_threaded) {
    while (running())
      if (run_pass() == 0 && running()) wait_for_work();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < workers_; ++i) pool.emplace_back([this] { worker_loop(); });
  worker_loop();
  wake_->notify();
  for (auto& t : pool) t.join();
}

std::size_t Executor::spin_some() {
  if (!running()) return 0;
  return run_pass();
}

std::size_t Executor::spin_once(std::chrono::nanoseconds timeout) {
  if (!running()) return 0;
  auto n = run_pass();
  if (n > 0) return n;
  const auto deadline = SteadyClock::now() + timeout;
  while (running()) {
    wait_for_work();
    n = run_pass();
    if (n > 0 || SteadyClock::now() >= deadline) return n;
  }
  return 0;
}

void Executor::cancel() {
  cancelled_ = true;
  wake_->notify();
}

std::unique_ptr<Executor> make_executor(ExecutorKind kind, std::shared_ptr<Context> context,
                                        std::size_t worker_count) {
  return std::make_unique<Executor>(kind, std::move(context), worker_count);
}

ExecutorThread::ExecutorThread(std::shared_ptr<Executor> executor) : executor_(std::move(executor)) {
  thread_ = std::thread([e = executor_] { e->spin(); });
}

ExecutorThread::~ExecutorThread() { stop(); }

void ExecutorThread::stop() {
  if (!thread_.joinable()) return;
  executor_->cancel();
  thread_.join();
}

}  // namespace cbench
