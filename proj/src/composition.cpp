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

#include "cbench/composition.hpp"

#include <dlfcn.h>

#include <algorithm>

#include "cbench/wire.hpp"

namespace cbench {

Component::Component(const NodeOptions& options) : node_(Node::create(options)) {}

Component::~Component() = default;

// ---------------------------------------------------------------------------
// Index

ComponentIndex& ComponentIndex::global() {
  static ComponentIndex index;
  return index;
}

void ComponentIndex::add(std::string name, ComponentFactory factory) {
  if (name.empty()) throw InvalidArgument("component name must not be empty");
  if (!factory) throw InvalidArgument("component '" + name + "' has no factory");
  std::lock_guard lock(mutex_);
  if (records_.count(name)) throw AlreadyExists("component '" + name + "' is already registered");
  records_.emplace(name, ComponentRecord{name, std::move(factory)});
}

const ComponentRecord& ComponentIndex::lookup(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = records_.find(name);
  if (it == records_.end()) throw NotFound("no component named '" + name + "'");
  return it->second;
}

bool ComponentIndex::contains(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return records_.count(name) > 0;
}

std::vector<std::string> ComponentIndex::names() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [name, _] : records_) out.push_back(name);
  return out;
}

std::size_t ComponentIndex::load_module(const std::string& path) {
  void* handle = ::dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (!handle) throw NotFound("cannot load component module '" + path + "': " + ::dlerror());
  using Entry = void (*)(ComponentIndex&);
  auto entry = reinterpret_cast<Entry>(::dlsym(handle, "cbench_register_components"));
  if (!entry) {
    ::dlclose(handle);
    throw InvalidArgument("'" + path + "' does not export cbench_register_components");
  }
  const auto before = names().size();
  entry(*this);
  return names().size() - before;
}

void register_component(ComponentIndex& index, std::string name, ComponentFactory factory) {
  index.add(std::move(name), std::move(factory));
}

detail::ComponentRegistrar::ComponentRegistrar(const char* name, ComponentFactory factory) {
  ComponentIndex::global().add(name, std::move(factory));
}

// ---------------------------------------------------------------------------
// Manual composition

ManualImage::~ManualImage() {
  stop();
  executors_.clear();
  while (!components_.empty()) components_.pop_back();
}

void ManualImage::start() {
  if (!threads_.empty()) return;
  for (auto& e : executors_) threads_.push_back(std::make_unique<ExecutorThread>(e));
}

void ManualImage::stop() {
  for (auto& t : threads_) t->stop();
  threads_.clear();
}

std::unique_ptr<ManualImage> compose_manual(const std::vector<ManualComponent>& components,
                                            const std::vector<ExecutorAssignment>& plan,
                                            std::shared_ptr<Context> context, const ComponentIndex& index) {
  if (components.empty()) throw InvalidArgument("manual composition needs at least one component");
  std::vector<int> owner(components.size(), 0);
  for (const auto& a : plan)
    for (auto i : a.members) {
      if (i >= components.size()) throw InvalidArgument("executor plan names component " + std::to_string(i));
      ++owner[i];
    }
  for (std::size_t i = 0; i < owner.size(); ++i)
    if (owner[i] != 1)
      throw InvalidArgument("component " + std::to_string(i) + " is assigned to " + std::to_string(owner[i]) +
                            " executors; the plan must partition the components");
  // Resolve everything before constructing anything.
  std::vector<const ComponentRecord*> records;
  for (const auto& c : components) records.push_back(&index.lookup(c.component));

  std::unique_ptr<ManualImage> image(new ManualImage());
  image->context_ = context ? std::move(context) : Context::default_context();
  for (std::size_t i = 0; i < components.size(); ++i) {
    auto options = components[i].options;
    if (!options.context) options.context = image->context_;
    image->components_.push_back(records[i]->factory(options));
  }
  for (const auto& a : plan) {
    auto exec = std::make_shared<Executor>(a.kind, image->context_, a.worker_count);
    for (auto i : a.members) exec->add_node(image->components_[i]->node());
    image->executors_.push_back(std::move(exec));
  }
  return image;
}

std::vector<ExecutorAssignment> single_executor_plan(std::size_t component_count, ExecutorKind kind) {
  ExecutorAssignment a;
  a.kind = kind;
  for (std::size_t i = 0; i < component_count; ++i) a.members.push_back(i);
  return {a};
}

// ---------------------------------------------------------------------------
// Wire

Bytes encode_load_request(const std::string& component, const NodeOptions& options) {
  Bytes out;
  wire::Writer w(out);
  w.str(component);
  w.str(options.name);
  w.str(options.namespace_);
  w.u8(options.ipc_enabled ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(options.parameters.size()));
  for (const auto& [k, v] : options.parameters) {
    w.str(k);
    w.str(v);
  }
  return out;
}

std::pair<std::string, NodeOptions> decode_load_request(ByteView wire) {
  wire::Reader r(wire);
  auto component = r.str();
  NodeOptions o;
  o.name = r.str();
  o.namespace_ = r.str();
  o.ipc_enabled = r.u8() != 0;
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = r.str();
    o.parameters[k] = r.str();
  }
  if (r.remaining() != 0) throw CorruptionError("trailing bytes in load request");
  return {std::move(component), std::move(o)};
}

Bytes encode_component_list(const std::vector<ComponentEntry>& entries) {
  Bytes out;
  wire::Writer w(out);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.component);
    w.u64(e.id);
  }
  return out;
}

std::vector<ComponentEntry> decode_component_list(ByteView wire) {
  wire::Reader r(wire);
  std::vector<ComponentEntry> out(r.u32());
  for (auto& e : out) {
    e.component = r.str();
    e.id = r.u64();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Containers

const char* to_string(ContainerKind kind) noexcept {
  switch (kind) {
    case ContainerKind::shared_single_threaded:
      return "shared_single_threaded";
    case ContainerKind::shared_multi_threaded:
      return "shared_multi_threaded";
    case ContainerKind::isolated_single_threaded:
      return "isolated_single_threaded";
  }
  return "unknown";
}

ComponentManager::ComponentManager(ContainerOptions options) : options_(std::move(options)) {}

std::unique_ptr<ComponentManager> ComponentManager::start_container(ContainerOptions options) {
  std::unique_ptr<ComponentManager> m(new ComponentManager(std::move(options)));
  auto& o = m->options_;
  if (!o.index) o.index = &ComponentIndex::global();
  m->context_ = o.context ? o.context : Context::default_context();

  NodeOptions node_options;
  node_options.name = o.name;
  node_options.context = m->context_;
  m->node_ = Node::create(std::move(node_options));
  auto* self = m.get();
  const std::string base = "/" + o.name;
  m->node_->create_service(base + "/_load", [self](ByteView r) { return self->handle_load(r); });
  m->node_->create_service(base + "/_unload", [self](ByteView r) { return self->handle_unload(r); });
  m->node_->create_service(base + "/_list", [self](ByteView r) { return self->handle_list(r); });

  const auto exec_kind =
      o.kind == ContainerKind::shared_multi_threaded ? ExecutorKind::multi_threaded : ExecutorKind::single_threaded;
  m->executor_ = std::make_shared<Executor>(exec_kind, m->context_,
                                            o.kind == ContainerKind::shared_multi_threaded ? o.worker_count : 0);
  m->executor_->add_node(m->node_);
  m->thread_ = std::make_unique<ExecutorThread>(m->executor_);
  return m;
}

ComponentManager::~ComponentManager() { stop(); }

void ComponentManager::stop() {
  if (thread_) thread_->stop();
  std::vector<std::uint64_t> ids;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, _] : loaded_) ids.push_back(id);
  }
  std::reverse(ids.begin(), ids.end());
  for (auto id : ids) unload(id);
  thread_.reset();
  if (executor_ && node_) {
    executor_->remove_node(node_);
    executor_.reset();
  }
  node_.reset();
}

std::uint64_t ComponentManager::load(const std::string& component, NodeOptions options) {
  const auto& record = options_.index->lookup(component);
  if (!options.context) options.context = context_;
  if (options.context != context_)
    throw InvalidArgument("components must live in the container's context");
  Loaded entry;
  entry.component = component;
  entry.instance = record.factory(options);
  if (options_.kind == ContainerKind::isolated_single_threaded) {
    entry.executor = std::make_shared<Executor>(ExecutorKind::single_threaded, context_);
    entry.executor->add_node(entry.instance->node());
    entry.thread = std::make_unique<ExecutorThread>(entry.executor);
  } else {
    entry.executor = executor_;
    entry.executor->add_node(entry.instance->node());
  }
  std::lock_guard lock(mutex_);
  const auto id = next_id_++;
  loaded_.emplace(id, std::move(entry));
  return id;
}

void ComponentManager::unload(std::uint64_t id) {
  Loaded entry;
  {
    std::lock_guard lock(mutex_);
    auto it = loaded_.find(id);
    if (it == loaded_.end()) throw NotFound("no component with id " + std::to_string(id));
    entry = std::move(it->second);
    loaded_.erase(it);
  }
  if (entry.thread) {
    entry.thread->stop();
    entry.thread.reset();
  }
  entry.executor->remove_node(entry.instance->node());
  entry.instance.reset();
}

std::vector<ComponentEntry> ComponentManager::list() const {
  std::lock_guard lock(mutex_);
  std::vector<ComponentEntry> out;
  for (const auto& [id, l] : loaded_) out.push_back({l.component, id});
  return out;
}

std::size_t ComponentManager::executor_count() const {
  if (options_.kind != ContainerKind::isolated_single_threaded) return 1;
  std::lock_guard lock(mutex_);
  return 1 + loaded_.size();
}

Component* ComponentManager::component(std::uint64_t id) const {
  std::lock_guard lock(mutex_);
  auto it = loaded_.find(id);
  return it == loaded_.end() ? nullptr : it->second.instance.get();
}

const Executor* ComponentManager::executor_of(std::uint64_t id) const {
  std::lock_guard lock(mutex_);
  auto it = loaded_.find(id);
  return it == loaded_.end() ? nullptr : it->second.executor.get();
}

ServiceReply ComponentManager::handle_load(ByteView request) {
  auto [component, options] = decode_load_request(request);
  Bytes out;
  wire::Writer w(out);
  w.u64(load(component, std::move(options)));
  return {ServiceStatus::ok, std::move(out)};
}

ServiceReply ComponentManager::handle_unload(ByteView request) {
  wire::Reader r(request);
  unload(r.u64());
  return {};
}

ServiceReply ComponentManager::handle_list(ByteView) { return {ServiceStatus::ok, encode_component_list(list())}; }

// ---------------------------------------------------------------------------

ContainerClient::ContainerClient(const std::shared_ptr<Node>& node, const std::string& container) {
  const std::string base = "/" + container;
  load_ = node->create_client(base + "/_load");
  unload_ = node->create_client(base + "/_unload");
  list_ = node->create_client(base + "/_list");
}

bool ContainerClient::wait_for_container(std::chrono::nanoseconds timeout) const {
  const auto deadline = SteadyClock::now() + timeout;
  for (const auto& c : {load_, unload_, list_}) {
    auto left = deadline - SteadyClock::now();
    if (left <= left.zero() || !c->wait_for_service(left)) return false;
  }
  return true;
}

namespace {

void raise_for(const ServiceReply& reply, const std::string& what) {
  if (reply.status == ServiceStatus::ok) return;
  std::string detail(reinterpret_cast<const char*>(reply.body.data()), reply.body.size());
  auto msg = what + (detail.empty() ? std::string() : ": " + detail);
  switch (reply.status) {
    case ServiceStatus::not_found:
      throw NotFound(msg);
    case ServiceStatus::bad_request:
      throw InvalidArgument(msg + " (malformed request)");
    default:
      throw Error(msg);
  }
}

}  // namespace

std::uint64_t ContainerClient::load(const std::string& component, const NodeOptions& options) {
  auto reply = load_->call(encode_load_request(component, options));
  raise_for(reply, "load of '" + component + "' failed");
  wire::Reader r(reply.body);
  return r.u64();
}

void ContainerClient::unload(std::uint64_t id) {
  Bytes out;
  wire::Writer w(out);
  w.u64(id);
  raise_for(unload_->call(out), "unload of " + std::to_string(id) + " failed");
}

std::vector<ComponentEntry> ContainerClient::list() {
  auto reply = list_->call({});
  raise_for(reply, "list failed");
  return decode_component_list(reply.body);
}

}  // namespace cbench
