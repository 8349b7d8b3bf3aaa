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

// Components, the component index, manual composition and component
// containers managed over request/reply services.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "cbench/executor.hpp"
#include "cbench/graph.hpp"

namespace cbench {

/// A node packaged behind a factory taking only NodeOptions. Subclasses own
/// whatever entities they create on node().
class Component {
 public:
  explicit Component(const NodeOptions& options);
  virtual ~Component();

  Component(const Component&) = delete;
  Component& operator=(const Component&) = delete;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using ComponentFactory = std::function<std::unique_ptr<Component>(const NodeOptions&)>;

struct ComponentRecord {
  std::string component_name;
  ComponentFactory factory;
};

class ComponentIndex {
 public:
  /// Populated by CBENCH_REGISTER_COMPONENT during static initialization.
  static ComponentIndex& global();

  /// Throws AlreadyExists for a duplicate name.
  void add(std::string name, ComponentFactory factory);
  /// Throws NotFound.
  const ComponentRecord& lookup(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  /// dlopen()s a module exporting
  ///   extern "C" void cbench_register_components(cbench::ComponentIndex&);
  /// and lets it register. The module stays loaded for the process lifetime.
  /// Returns the number of components it added.
  std::size_t load_module(const std::string& path);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, ComponentRecord> records_;
};

void register_component(ComponentIndex& index, std::string name, ComponentFactory factory);

namespace detail {
struct ComponentRegistrar {
  ComponentRegistrar(const char* name, ComponentFactory factory);
};
}  // namespace detail

#define CBENCH_COMPONENT_CONCAT_(a, b) a##b
#define CBENCH_COMPONENT_CONCAT(a, b) CBENCH_COMPONENT_CONCAT_(a, b)

/// Registers `Type` (constructible from `const NodeOptions&`) under `name`.
#define CBENCH_REGISTER_COMPONENT(Type, name)                                                      \
  static const ::cbench::detail::ComponentRegistrar CBENCH_COMPONENT_CONCAT(cbench_registrar_,     \
                                                                            __COUNTER__){          \
      name, [](const ::cbench::NodeOptions& o) -> std::unique_ptr<::cbench::Component> {          \
        return std::make_unique<Type>(o);                                                          \
      }}

// ---------------------------------------------------------------------------
// Manual composition

struct ManualComponent {
  std::string component;
  NodeOptions options;
};

struct ExecutorAssignment {
  ExecutorKind kind = ExecutorKind::single_threaded;
  /// Indices into the component list.
  std::vector<std::size_t> members;
  std::size_t worker_count = 0;
};

/// Components built directly into one process, with executors over fixed
/// subsets and no manager node.
class ManualImage {
 public:
  ~ManualImage();

  ManualImage(const ManualImage&) = delete;
  ManualImage& operator=(const ManualImage&) = delete;

  /// Spins each executor on its own thread.
  void start();
  void stop();

  const std::shared_ptr<Context>& context() const noexcept { return context_; }
  std::size_t component_count() const noexcept { return components_.size(); }
  Component& component(std::size_t i) const { return *components_.at(i); }
  std::size_t executor_count() const noexcept { return executors_.size(); }
  const Executor& executor(std::size_t i) const { return *executors_.at(i); }

 private:
  friend std::unique_ptr<ManualImage> compose_manual(const std::vector<ManualComponent>&,
                                                     const std::vector<ExecutorAssignment>&,
                                                     std::shared_ptr<Context>, const ComponentIndex&);
  ManualImage() = default;

  std::shared_ptr<Context> context_;
  std::vector<std::unique_ptr<Component>> components_;
  std::vector<std::shared_ptr<Executor>> executors_;
  std::vector<std::unique_ptr<ExecutorThread>> threads_;
};

/// Throws InvalidArgument for an empty component list or a plan that does not
/// partition it, and NotFound for an unknown component name. Component
/// options without a context are placed in `context` (or the default one).
std::unique_ptr<ManualImage> compose_manual(const std::vector<ManualComponent>& components,
                                            const std::vector<ExecutorAssignment>& plan,
                                            std::shared_ptr<Context> context = nullptr,
                                            const ComponentIndex& index = ComponentIndex::global());

/// One executor of `kind` over every component.
std::vector<ExecutorAssignment> single_executor_plan(std::size_t component_count,
                                                     ExecutorKind kind = ExecutorKind::single_threaded);

// ---------------------------------------------------------------------------
// Containers

enum class ContainerKind { shared_single_threaded, shared_multi_threaded, isolated_single_threaded };

const char* to_string(ContainerKind kind) noexcept;

struct ContainerOptions {
  ContainerKind kind = ContainerKind::shared_single_threaded;
  std::string name = "ComponentManager";
  std::shared_ptr<Context> context;
  /// multi-threaded kind only; zero selects the default.
  std::size_t worker_count = 0;
  const ComponentIndex* index = nullptr;
};

struct ComponentEntry {
  std::string component;
  std::uint64_t id = 0;
  bool operator==(const ComponentEntry&) const = default;
};

/// Service topics: "/<name>/_load", "/<name>/_unload", "/<name>/_list".
///   _load request:   component (str) | node name (str) | namespace (str) |
///                    ipc (u8) | parameter count (u32) | (key, value)*
///   _load reply:     id (u64)
///   _unload request: id (u64)
///   _list reply:     count (u32) | (component (str), id (u64))*
/// Strings are u16 length + bytes; integers big-endian.
class ComponentManager {
 public:
  /// The manager node is serviced before this returns.
  static std::unique_ptr<ComponentManager> start_container(ContainerOptions options);
  ~ComponentManager();

  ComponentManager(const ComponentManager&) = delete;
  ComponentManager& operator=(const ComponentManager&) = delete;

  /// Throws NotFound for an unknown component; construction errors propagate.
  std::uint64_t load(const std::string& component, NodeOptions options);
  /// Returns once no callback of the component is running or will run.
  /// Throws NotFound for an unknown id.
  void unload(std::uint64_t id);
  std::vector<ComponentEntry> list() const;

  ContainerKind kind() const noexcept { return options_.kind; }
  const std::string& name() const noexcept { return options_.name; }
  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  const std::shared_ptr<Context>& context() const noexcept { return context_; }
  std::size_t executor_count() const;
  /// Worker count of the executor servicing the manager.
  std::size_t manager_worker_count() const noexcept { return executor_->worker_count(); }
  Component* component(std::uint64_t id) const;
  /// Executor servicing a loaded component, or null.
  const Executor* executor_of(std::uint64_t id) const;

  void stop();

 private:
  struct Loaded {
    std::string component;
    std::unique_ptr<Component> instance;
    std::shared_ptr<Executor> executor;
    std::unique_ptr<ExecutorThread> thread;
  };

  explicit ComponentManager(ContainerOptions options);

  ServiceReply handle_load(ByteView request);
  ServiceReply handle_unload(ByteView request);
  ServiceReply handle_list(ByteView request);

  ContainerOptions options_;
  std::shared_ptr<Context> context_;
  std::shared_ptr<Node> node_;
  std::shared_ptr<Executor> executor_;
  std::unique_ptr<ExecutorThread> thread_;
  mutable std::mutex mutex_;
  std::map<std::uint64_t, Loaded> loaded_;
  std::uint64_t next_id_ = 1;
};

Bytes encode_load_request(const std::string& component, const NodeOptions& options);
std::pair<std::string, NodeOptions> decode_load_request(ByteView wire);
Bytes encode_component_list(const std::vector<ComponentEntry>& entries);
std::vector<ComponentEntry> decode_component_list(ByteView wire);

/// Talks to a container's services from another node, possibly in another
/// process. Remote failures surface as the matching error type.
class ContainerClient {
 public:
  ContainerClient(const std::shared_ptr<Node>& node, const std::string& container);

  bool wait_for_container(std::chrono::nanoseconds timeout) const;
  std::uint64_t load(const std::string& component, const NodeOptions& options);
  void unload(std::uint64_t id);
  std::vector<ComponentEntry> list();

 private:
  std::shared_ptr<ServiceClient> load_, unload_, list_;
};

}  // namespace cbench
