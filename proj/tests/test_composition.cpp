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

#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "cbench/composition.hpp"
#include "test_support.hpp"

using namespace cbench;
using namespace cbench::testing;
using namespace std::chrono_literals;

namespace {

// Counts messages on "/ping" and optionally publishes from a fast timer.
class PingComponent : public Component {
 public:
  explicit PingComponent(const NodeOptions& o) : Component(o), work_us_(o.parameter_int("work_us", 0)) {
    sub_ = node()->create_subscription("/ping", QoSProfile::reliable(100), [this](const ReceivedMessage&) {
      active_.fetch_add(1);
      if (auto* alive = alive_.load(); alive && !*alive) violations().fetch_add(1);
      std::this_thread::sleep_for(std::chrono::microseconds(work_us_));
      received_.fetch_add(1);
      active_.fetch_sub(1);
    });
    if (o.parameter_bool("publish", false)) {
      pub_ = node()->create_publisher("/ping", QoSProfile::reliable(100));
      timer_ = node()->create_timer(1ms, [this] { pub_->publish(Bytes(16)); });
    }
  }
  ~PingComponent() override {
    if (auto* alive = alive_.load()) *alive = false;
  }

  std::uint64_t received() const { return received_.load(); }
  /// `alive` must outlive the component.
  void watch(std::atomic<bool>* alive) { alive_ = alive; }
  static std::atomic<int>& violations() {
    static std::atomic<int> v{0};
    return v;
  }

 private:
  const std::int64_t work_us_;
  std::shared_ptr<Subscription> sub_;
  std::shared_ptr<Publisher> pub_;
  std::shared_ptr<Timer> timer_;
  std::atomic<std::uint64_t> received_{0};
  std::atomic<int> active_{0};
  std::atomic<std::atomic<bool>*> alive_{nullptr};
};

class Plain : public Component {
 public:
  using Component::Component;
};

void populate(ComponentIndex& index) {
  index.add("ping", [](const NodeOptions& o) { return std::make_unique<PingComponent>(o); });
  index.add("plain", [](const NodeOptions& o) { return std::make_unique<Plain>(o); });
}

NodeOptions named(const std::string& name, bool ipc = false) {
  NodeOptions o;
  o.name = name;
  o.ipc_enabled = ipc;
  return o;
}

}  // namespace

CBENCH_REGISTER_COMPONENT(Plain, "test_plain");

TEST(ComponentIndex, StaticRegistrationIsVisible) {
  EXPECT_TRUE(ComponentIndex::global().contains("test_plain"));
}

TEST(ComponentIndex, DuplicateNameRejected) {
  ComponentIndex index;
  populate(index);
  EXPECT_THROW(index.add("ping", [](const NodeOptions& o) { return std::make_unique<Plain>(o); }), AlreadyExists);
  EXPECT_THROW(index.add("", [](const NodeOptions& o) { return std::make_unique<Plain>(o); }), InvalidArgument);
}

TEST(ComponentIndex, UnknownNameNotFound) {
  ComponentIndex index;
  populate(index);
  EXPECT_THROW(index.lookup("nope"), NotFound);
  EXPECT_EQ(index.names(), (std::vector<std::string>{"ping", "plain"}));
}

TEST(ComponentIndex, LoadModuleRegistersItsComponents) {
  ComponentIndex index;
  EXPECT_EQ(index.load_module(CBENCH_TEST_MODULE), 1u);
  EXPECT_TRUE(index.contains("module_plain"));
  auto ctx = local_context();
  auto o = named("from_module");
  o.context = ctx;
  auto c = index.lookup("module_plain").factory(o);
  EXPECT_EQ(c->node()->name(), "from_module");
}

TEST(ComponentIndex, LoadModuleMissingFile) {
  ComponentIndex index;
  EXPECT_THROW(index.load_module("/nonexistent/module.so"), NotFound);
}

// ---------------------------------------------------------------------------

TEST(ManualComposition, OneParticipantNoManager) {
  ComponentIndex index;
  populate(index);
  ContextOptions co;
  co.enable_transport = false;
  auto ctx = Context::create(co);
  auto image = compose_manual({{"plain", named("a")}, {"plain", named("b")}}, single_executor_plan(2), ctx, index);
  EXPECT_EQ(image->component_count(), 2u);
  EXPECT_EQ(image->executor_count(), 1u);
  EXPECT_EQ(ctx->node_count(), 2u);
  EXPECT_EQ(ctx->node_names(), (std::vector<std::string>{"/a", "/b"}));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(&image->component(i).node()->context(), ctx.get());
}

TEST(ManualComposition, EmptyListRejected) {
  ComponentIndex index;
  populate(index);
  EXPECT_THROW(compose_manual({}, {}, local_context(), index), InvalidArgument);
}

TEST(ManualComposition, PlanMustPartition) {
  ComponentIndex index;
  populate(index);
  std::vector<ManualComponent> two{{"plain", named("a")}, {"plain", named("b")}};
  ExecutorAssignment only_first{ExecutorKind::single_threaded, {0}, 0};
  EXPECT_THROW(compose_manual(two, {only_first}, local_context(), index), InvalidArgument);
  ExecutorAssignment both{ExecutorKind::single_threaded, {0, 1}, 0};
  EXPECT_THROW(compose_manual(two, {both, only_first}, local_context(), index), InvalidArgument);
  ExecutorAssignment out_of_range{ExecutorKind::single_threaded, {0, 1, 2}, 0};
  EXPECT_THROW(compose_manual(two, {out_of_range}, local_context(), index), InvalidArgument);
}

TEST(ManualComposition, UnknownComponentBuildsNothing) {
  ComponentIndex index;
  populate(index);
  auto ctx = local_context();
  EXPECT_THROW(compose_manual({{"plain", named("a")}, {"nope", named("b")}}, single_executor_plan(2), ctx, index),
               NotFound);
  EXPECT_EQ(ctx->node_count(), 0u);
}

TEST(ManualComposition, SplitExecutorsDeliver) {
  ComponentIndex index;
  populate(index);
  auto ctx = local_context();
  auto pub = named("pub", true);
  pub.parameters["publish"] = "true";
  std::vector<ExecutorAssignment> plan{{ExecutorKind::single_threaded, {0}, 0},
                                       {ExecutorKind::static_single_threaded, {1}, 0}};
  auto image = compose_manual({{"ping", pub}, {"ping", named("sub", true)}}, plan, ctx, index);
  EXPECT_EQ(image->executor_count(), 2u);
  image->start();
  auto& sub = static_cast<PingComponent&>(image->component(1));
  EXPECT_TRUE(eventually([&] { return sub.received() >= 20; }));
  image->stop();
  EXPECT_EQ(ctx->stats().serializations, 0u);
}

// ---------------------------------------------------------------------------

class Containers : public ::testing::Test {
 protected:
  Containers() { populate(index_); }

  std::unique_ptr<ComponentManager> start(ContainerKind kind, std::size_t workers = 0) {
    ContainerOptions o;
    o.kind = kind;
    o.context = ctx_;
    o.index = &index_;
    o.worker_count = workers;
    return ComponentManager::start_container(std::move(o));
  }

  ComponentIndex index_;
  std::shared_ptr<Context> ctx_ = local_context();
};

TEST_F(Containers, ExecutorCountsPerKind) {
  auto single = start(ContainerKind::shared_single_threaded);
  for (int i = 0; i < 3; ++i) single->load("plain", named("s" + std::to_string(i)));
  EXPECT_EQ(single->executor_count(), 1u);
  EXPECT_EQ(single->manager_worker_count(), 1u);
  single->stop();

  auto multi = start(ContainerKind::shared_multi_threaded);
  for (int i = 0; i < 3; ++i) multi->load("plain", named("m" + std::to_string(i)));
  EXPECT_EQ(multi->executor_count(), 1u);
  EXPECT_EQ(multi->manager_worker_count(),
            std::max<std::size_t>(std::thread::hardware_concurrency(), 2));
  multi->stop();

  auto isolated = start(ContainerKind::isolated_single_threaded);
  for (int i = 0; i < 3; ++i) isolated->load("plain", named("i" + std::to_string(i)));
  EXPECT_EQ(isolated->executor_count(), 4u);
}

TEST_F(Containers, ManagerNodeAndServices) {
  auto m = start(ContainerKind::shared_single_threaded);
  EXPECT_EQ(m->node()->name(), "ComponentManager");
  EXPECT_EQ(m->node()->service_count(), 3u);
  EXPECT_EQ(ctx_->node_count(), 1u);
}

TEST_F(Containers, LoadListUnload) {
  auto m = start(ContainerKind::shared_single_threaded);
  auto a = m->load("plain", named("a"));
  auto b = m->load("ping", named("b"));
  EXPECT_EQ(a, 1u);
  EXPECT_EQ(b, 2u);
  EXPECT_EQ(m->list(), (std::vector<ComponentEntry>{{"plain", 1}, {"ping", 2}}));
  m->unload(a);
  EXPECT_EQ(m->list(), (std::vector<ComponentEntry>{{"ping", 2}}));
  EXPECT_EQ(m->load("plain", named("a")), 3u);
  EXPECT_EQ(m->component(a), nullptr);
  EXPECT_THROW(m->unload(a), NotFound);
  EXPECT_THROW(m->load("nope", named("x")), NotFound);
  EXPECT_THROW(m->load("plain", named("a")), AlreadyExists);
}

TEST_F(Containers, ForeignContextRejected) {
  auto m = start(ContainerKind::shared_single_threaded);
  auto o = named("x");
  o.context = local_context();
  EXPECT_THROW(m->load("plain", o), InvalidArgument);
}

TEST_F(Containers, NoCallbackAfterUnloadDuringBurst) {
  for (auto kind : {ContainerKind::shared_single_threaded, ContainerKind::shared_multi_threaded,
                    ContainerKind::isolated_single_threaded}) {
    PingComponent::violations() = 0;
    auto m = start(kind);
    auto pub = named("pub", true);
    pub.parameters["publish"] = "true";
    m->load("ping", pub);
    auto sub = named("sub", true);
    sub.parameters["work_us"] = "200";
    auto id = m->load("ping", sub);
    auto alive = std::make_shared<std::atomic<bool>>(true);
    auto* c = static_cast<PingComponent*>(m->component(id));
    c->watch(alive.get());
    ASSERT_TRUE(eventually([&] { return c->received() >= 10; })) << to_string(kind);
    m->unload(id);
    EXPECT_FALSE(*alive);
    std::this_thread::sleep_for(20ms);
    EXPECT_EQ(PingComponent::violations(), 0) << to_string(kind);
    m->stop();
  }
}

TEST_F(Containers, IsolatedExecutorsNeverShare) {
  auto m = start(ContainerKind::isolated_single_threaded);
  std::vector<std::uint64_t> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(m->load("plain", named("n" + std::to_string(i))));
  std::set<const Executor*> seen;
  for (auto id : ids) {
    const auto* e = m->executor_of(id);
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->nodes().size(), 1u);
    EXPECT_TRUE(seen.insert(e).second);
  }
}

TEST_F(Containers, SharedKindsUseOneExecutor) {
  auto m = start(ContainerKind::shared_multi_threaded, 3);
  auto a = m->load("plain", named("a"));
  auto b = m->load("plain", named("b"));
  EXPECT_EQ(m->executor_of(a), m->executor_of(b));
  EXPECT_EQ(m->executor_of(a)->worker_count(), 3u);
  EXPECT_EQ(m->executor_of(a)->nodes().size(), 3u);
}

// The same component source runs unchanged standalone, manually composed and
// in every container kind.
TEST(SameComponentEverywhere, DeliversOnEveryPath) {
  ComponentIndex index;
  populate(index);
  auto pub = named("pub", true);
  pub.parameters["publish"] = "true";
  auto sub = named("sub", true);

  {
    auto ctx = local_context();
    auto p = pub, s = sub;
    p.context = s.context = ctx;
    auto pc = index.lookup("ping").factory(p);
    auto sc = index.lookup("ping").factory(s);
    auto exec = std::make_shared<Executor>(ExecutorKind::single_threaded, ctx);
    exec->add_node(pc->node());
    exec->add_node(sc->node());
    ExecutorThread t(exec);
    EXPECT_TRUE(eventually([&] { return static_cast<PingComponent&>(*sc).received() >= 10; })) << "standalone";
    t.stop();
    exec->remove_node(pc->node());
    exec->remove_node(sc->node());
  }
  {
    auto image = compose_manual({{"ping", pub}, {"ping", sub}}, single_executor_plan(2), local_context(), index);
    image->start();
    EXPECT_TRUE(eventually([&] { return static_cast<PingComponent&>(image->component(1)).received() >= 10; }))
        << "manual";
    image->stop();
  }
  for (auto kind : {ContainerKind::shared_single_threaded, ContainerKind::shared_multi_threaded,
                    ContainerKind::isolated_single_threaded}) {
    ContainerOptions o;
    o.kind = kind;
    o.context = local_context();
    o.index = &index;
    auto m = ComponentManager::start_container(std::move(o));
    m->load("ping", pub);
    auto id = m->load("ping", sub);
    auto* c = static_cast<PingComponent*>(m->component(id));
    EXPECT_TRUE(eventually([&] { return c->received() >= 10; })) << to_string(kind);
    m->stop();
  }
}

// ---------------------------------------------------------------------------

TEST(ContainerWire, LoadRequestRoundTrip) {
  auto o = named("talker", true);
  o.namespace_ = "/bench";
  o.parameters = {{"size_bytes", "1000"}, {"topic", "/x"}};
  auto [component, back] = decode_load_request(encode_load_request("talker", o));
  EXPECT_EQ(component, "talker");
  EXPECT_EQ(back.name, "talker");
  EXPECT_EQ(back.namespace_, "/bench");
  EXPECT_TRUE(back.ipc_enabled);
  EXPECT_EQ(back.parameters, o.parameters);
}

TEST(ContainerWire, TrailingBytesRejected) {
  auto wire = encode_load_request("plain", named("a"));
  wire.push_back(std::byte{0});
  EXPECT_THROW(decode_load_request(wire), CorruptionError);
}

TEST(ContainerWire, ListRoundTrip) {
  std::vector<ComponentEntry> entries{{"a", 1}, {"b", 7}};
  EXPECT_EQ(decode_component_list(encode_component_list(entries)), entries);
  EXPECT_TRUE(decode_component_list(encode_component_list({})).empty());
}

TEST(ContainerWire, ClientOverServices) {
  ComponentIndex index;
  populate(index);
  auto ctx = local_context();
  ContainerOptions o;
  o.context = ctx;
  o.index = &index;
  o.name = "box";
  auto m = ComponentManager::start_container(std::move(o));

  auto caller = make_node(ctx, "caller");
  ContainerClient client(caller, "box");
  ASSERT_TRUE(client.wait_for_container(2s));
  auto id = client.load("plain", named("remote_a"));
  EXPECT_EQ(client.list(), (std::vector<ComponentEntry>{{"plain", id}}));
  EXPECT_THROW(client.load("nope", named("x")), NotFound);
  client.unload(id);
  EXPECT_THROW(client.unload(id), NotFound);
  EXPECT_TRUE(client.list().empty());
}

TEST(ContainerWire, ClientAcrossProcessesOverTransport) {
  DiscoveryBroker broker;
  ComponentIndex index;
  populate(index);
  auto server_ctx = networked_context(broker);
  auto client_ctx = networked_context(broker);
  ContainerOptions o;
  o.context = server_ctx;
  o.index = &index;
  auto m = ComponentManager::start_container(std::move(o));

  auto caller = make_node(client_ctx, "caller");
  ContainerClient client(caller, "ComponentManager");
  ASSERT_TRUE(client.wait_for_container(5s));
  auto id = client.load("plain", named("over_udp"));
  EXPECT_EQ(client.list().size(), 1u);
  EXPECT_EQ(server_ctx->node_count(), 2u);
  client.unload(id);
  EXPECT_EQ(server_ctx->node_count(), 1u);
}
