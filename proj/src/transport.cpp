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

#include "cbench/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <poll.h>
#include <sys/mman.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/uio.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <tuple>

namespace cbench {

namespace {

constexpr std::uint8_t kTransportVersion = 1;
constexpr std::uint32_t kSegmentVersion = 1;
constexpr std::size_t kSegmentHeaderSize = 24;
constexpr std::size_t kCacheLine = 64;
constexpr std::size_t kRecvHeaderArea = kTransportHeaderSize + kFragmentHeaderSize;
constexpr auto kStallTimeout = std::chrono::seconds(1);

std::size_t align_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

std::uint64_t random_u64() {
  std::random_device rd;
  std::uint64_t v = 0;
  while (v == 0) v = (std::uint64_t{rd()} << 32) ^ rd();
  return v;
}

// Distinguishes writers of different participants in one reassembler.
std::uint64_t writer_key(std::uint64_t participant, EntityId writer) {
  return participant * 0x9E3779B97F4A7C15ULL ^ writer;
}

int open_udp_socket(const SocketAddress& bind_to, std::size_t rcvbuf) {
  int fd = ::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw SystemError("socket", errno);
  if (rcvbuf > 0) {
    int size = static_cast<int>(std::min<std::size_t>(rcvbuf, 1u << 30));
    if (::setsockopt(fd, SOL_SOCKET, SO_RCVBUFFORCE, &size, sizeof size) != 0)
      ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &size, sizeof size);
    int snd = 4 << 20;
    if (::setsockopt(fd, SOL_SOCKET, SO_SNDBUFFORCE, &snd, sizeof snd) != 0)
      ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &snd, sizeof snd);
  }
  auto addr = bind_to.to_sockaddr();
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int err = errno;
    ::close(fd);
    throw SystemError("bind " + bind_to.to_string(), err);
  }
  return fd;
}

SocketAddress bound_address(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw SystemError("getsockname", errno);
  return {ntohl(addr.sin_addr.s_addr), ntohs(addr.sin_port)};
}

SocketAddress from_sockaddr(const sockaddr_in& a) { return {ntohl(a.sin_addr.s_addr), ntohs(a.sin_port)}; }

void send_to(int fd, ByteView packet, const SocketAddress& to) {
  auto addr = to.to_sockaddr();
  for (;;) {
    auto n = ::sendto(fd, packet.data(), packet.size(), 0, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    if (n >= 0 || errno != EINTR) return;
  }
}

Bytes header_only(PacketKind kind, std::uint64_t participant, EntityId writer = 0) {
  Bytes out;
  encode_packet_header({kind, participant, writer}, out);
  return out;
}

void write_endpoint(wire::Writer& w, const EndpointInfo& e) {
  w.u64(e.id);
  w.str(e.topic);
  w.u8(static_cast<std::uint8_t>(e.direction));
  w.u8(static_cast<std::uint8_t>(e.qos.reliability));
  w.u32(e.qos.history_depth);
  w.u8(static_cast<std::uint8_t>(e.qos.durability));
}

EndpointInfo read_endpoint(wire::Reader& r) {
  EndpointInfo e;
  e.id = r.u64();
  e.topic = r.str();
  auto dir = r.u8();
  auto rel = r.u8();
  e.qos.history_depth = r.u32();
  auto dur = r.u8();
  if (dir > 1 || rel > 1 || dur > 1) throw CorruptionError("bad endpoint encoding");
  e.direction = static_cast<Direction>(dir);
  e.qos.reliability = static_cast<Reliability>(rel);
  e.qos.durability = static_cast<Durability>(dur);
  return e;
}

}  // namespace

// ---------------------------------------------------------------------------
// Discovery bookkeeping

bool endpoints_match(const EndpointInfo& a, const EndpointInfo& b) noexcept {
  if (a.topic != b.topic || a.direction == b.direction) return false;
  const auto& pub = a.direction == Direction::publisher ? a : b;
  const auto& sub = a.direction == Direction::publisher ? b : a;
  return qos_compatible(pub.qos, sub.qos);
}

void DiscoveryDatabase::add_local(EndpointInfo endpoint) {
  remove_local(endpoint.id);
  local_.push_back(std::move(endpoint));
  match_local(local_.back());
}

void DiscoveryDatabase::remove_local(EntityId id) {
  auto it = std::find_if(local_.begin(), local_.end(), [&](const auto& e) { return e.id == id; });
  if (it == local_.end()) return;
  local_.erase(it);
  auto lo = records_.lower_bound({id, RemoteKey{0, 0}});
  while (lo != records_.end() && lo->first.first == id) {
    auto rk = by_remote_.find(lo->first.second);
    if (rk != by_remote_.end()) {
      rk->second.erase(id);
      if (rk->second.empty()) by_remote_.erase(rk);
    }
    lo = records_.erase(lo);
  }
}

void DiscoveryDatabase::upsert_remote(ParticipantInfo info) {
  if (info.id == self_) return;
  auto it = remotes_.find(info.id);
  if (it != remotes_.end()) {
    if (info.revision < it->second.revision) return;
    if (info == it->second) return;
    if (info.revision == it->second.revision && info.endpoints == it->second.endpoints) {
      it->second = std::move(info);
      return;
    }
  }
  remove_remote(info.id);
  auto& stored = remotes_[info.id] = std::move(info);
  match_remote(stored);
}

void DiscoveryDatabase::remove_remote(std::uint64_t participant) {
  auto it = remotes_.find(participant);
  if (it == remotes_.end()) return;
  for (const auto& e : it->second.endpoints) {
    RemoteKey key{participant, e.id};
    auto rk = by_remote_.find(key);
    if (rk == by_remote_.end()) continue;
    for (auto local : rk->second) records_.erase({local, key});
    by_remote_.erase(rk);
  }
  remotes_.erase(it);
}

std::vector<ParticipantInfo> DiscoveryDatabase::remotes() const {
  std::vector<ParticipantInfo> out;
  out.reserve(remotes_.size());
  for (const auto& [id, info] : remotes_) out.push_back(info);
  return out;
}

const ParticipantInfo* DiscoveryDatabase::remote(std::uint64_t participant) const {
  auto it = remotes_.find(participant);
  return it == remotes_.end() ? nullptr : &it->second;
}

void DiscoveryDatabase::match_local(const EndpointInfo& local) {
  for (const auto& [pid, info] : remotes_)
    for (const auto& remote : info.endpoints)
      if (endpoints_match(local, remote)) {
        RemoteKey key{pid, remote.id};
        records_.emplace(std::pair{local.id, key}, Bytes(block_size_));
        by_remote_[key].insert(local.id);
      }
}

void DiscoveryDatabase::match_remote(const ParticipantInfo& info) {
  for (const auto& remote : info.endpoints)
    for (const auto& local : local_)
      if (endpoints_match(local, remote)) {
        RemoteKey key{info.id, remote.id};
        records_.emplace(std::pair{local.id, key}, Bytes(block_size_));
        by_remote_[key].insert(local.id);
      }
}

std::vector<DiscoveryDatabase::RemoteTarget> DiscoveryDatabase::remote_targets(EntityId writer) const {
  std::vector<RemoteTarget> out;
  for (auto it = records_.lower_bound({writer, RemoteKey{0, 0}}); it != records_.end() && it->first.first == writer;
       ++it) {
    const auto& key = it->first.second;
    const auto* info = remote(key.participant);
    bool reliable = false;
    if (info != nullptr)
      for (const auto& e : info->endpoints)
        if (e.id == key.endpoint) reliable = e.qos.reliability == Reliability::reliable;
    if (out.empty() || out.back().participant != key.participant)
      out.push_back({key.participant, 0, false});
    out.back().readers += 1;
    out.back().any_reliable = out.back().any_reliable || reliable;
  }
  return out;
}

std::vector<EntityId> DiscoveryDatabase::local_readers_for(std::uint64_t participant, EntityId remote_writer) const {
  auto it = by_remote_.find({participant, remote_writer});
  if (it == by_remote_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::size_t DiscoveryDatabase::matched_remote_count(EntityId local) const {
  std::size_t n = 0;
  for (auto it = records_.lower_bound({local, RemoteKey{0, 0}}); it != records_.end() && it->first.first == local;
       ++it)
    ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Packet codec

void encode_packet_header(const PacketHeader& h, Bytes& out) {
  wire::Writer w(out);
  w.u16(kTransportMagic);
  w.u8(kTransportVersion);
  w.u8(static_cast<std::uint8_t>(h.kind));
  w.u64(h.participant);
  w.u64(h.writer);
}

PacketHeader decode_packet_header(wire::Reader& r) {
  if (r.u16() != kTransportMagic) throw CorruptionError("bad packet magic");
  if (r.u8() != kTransportVersion) throw CorruptionError("unsupported packet version");
  auto kind = r.u8();
  if (kind < 1 || kind > 5) throw CorruptionError("unknown packet kind");
  PacketHeader h;
  h.kind = static_cast<PacketKind>(kind);
  h.participant = r.u64();
  h.writer = r.u64();
  return h;
}

Bytes encode_announce(const ParticipantInfo& info) {
  Bytes out;
  wire::Writer w(out);
  w.u64(info.id);
  w.u64(info.host_id);
  w.u32(info.address);
  w.u16(info.port);
  w.u32(info.node_count);
  w.u64(info.revision);
  w.u32(static_cast<std::uint32_t>(info.endpoints.size()));
  for (const auto& e : info.endpoints) write_endpoint(w, e);
  return out;
}

ParticipantInfo decode_announce(ByteView body) {
  wire::Reader r(body);
  ParticipantInfo info;
  info.id = r.u64();
  info.host_id = r.u64();
  info.address = r.u32();
  info.port = r.u16();
  info.node_count = r.u32();
  info.revision = r.u64();
  auto n = r.u32();
  if (n > r.remaining()) throw CorruptionError("endpoint count exceeds announcement");
  info.endpoints.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) info.endpoints.push_back(read_endpoint(r));
  return info;
}

Bytes encode_loan(std::uint64_t participant, EntityId writer, const LoanNotice& n) {
  Bytes out;
  encode_packet_header({PacketKind::loan, participant, writer}, out);
  wire::Writer w(out);
  w.u64(n.topic_hash);
  w.u64(n.sequence);
  w.i64(n.publish_timestamp_ns);
  w.u32(n.slot);
  w.u64(n.size);
  return out;
}

// ---------------------------------------------------------------------------
// Shared segment

SharedSegment::SharedSegment(std::string name, void* base, std::size_t mapped, bool owner)
    : name_(std::move(name)), base_(base), mapped_(mapped), owner_(owner) {
  std::memcpy(&slot_count_, static_cast<const char*>(base_) + 12, 4);
  std::memcpy(&slot_size_, static_cast<const char*>(base_) + 16, 8);
  slots_offset_ = align_up(kSegmentHeaderSize + 4 * std::size_t{slot_count_}, kCacheLine);
}

std::shared_ptr<SharedSegment> SharedSegment::create(const std::string& name, std::size_t slot_size,
                                                     std::uint32_t slot_count) {
  if (slot_size == 0 || slot_count == 0) throw InvalidArgument("segment needs a positive slot size and count");
  const auto offset = align_up(kSegmentHeaderSize + 4 * std::size_t{slot_count}, kCacheLine);
  const auto total = offset + align_up(slot_size, kCacheLine) * slot_count;
  int fd = ::shm_open(name.c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
  if (fd < 0 && errno == EEXIST) {
    ::shm_unlink(name.c_str());
    fd = ::shm_open(name.c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
  }
  if (fd < 0) throw SystemError("shm_open " + name, errno);
  if (::ftruncate(fd, static_cast<off_t>(total)) != 0) {
    int err = errno;
    ::close(fd);
    ::shm_unlink(name.c_str());
    throw SystemError("ftruncate " + name, err);
  }
  void* base = ::mmap(nullptr, total, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
  int err = errno;
  ::close(fd);
  if (base == MAP_FAILED) {
    ::shm_unlink(name.c_str());
    throw SystemError("mmap " + name, err);
  }
  auto* bytes = static_cast<char*>(base);
  const std::uint64_t magic = kMagic;
  const std::uint64_t size64 = slot_size;
  std::memcpy(bytes + 8, &kSegmentVersion, 4);
  std::memcpy(bytes + 12, &slot_count, 4);
  std::memcpy(bytes + 16, &size64, 8);
  auto* refs = reinterpret_cast<std::atomic<std::uint32_t>*>(bytes + kSegmentHeaderSize);
  for (std::uint32_t i = 0; i < slot_count; ++i) new (&refs[i]) std::atomic<std::uint32_t>(0);
  std::atomic_thread_fence(std::memory_order_release);
  std::memcpy(bytes, &magic, 8);
  return std::shared_ptr<SharedSegment>(new SharedSegment(name, base, total, true));
}

std::shared_ptr<SharedSegment> SharedSegment::open(const std::string& name) {
  int fd = ::shm_open(name.c_str(), O_RDWR, 0600);
  if (fd < 0) throw SystemError("shm_open " + name, errno);
  struct stat st{};
  if (::fstat(fd, &st) != 0) {
    int err = errno;
    ::close(fd);
    throw SystemError("fstat " + name, err);
  }
  auto total = static_cast<std::size_t>(st.st_size);
  if (total < kSegmentHeaderSize) {
    ::close(fd);
    throw CorruptionError("segment " + name + " is truncated");
  }
  void* base = ::mmap(nullptr, total, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
  int err = errno;
  ::close(fd);
  if (base == MAP_FAILED) throw SystemError("mmap " + name, err);
  std::uint64_t magic = 0;
  std::uint32_t version = 0, count = 0;
  std::uint64_t size = 0;
  std::memcpy(&magic, base, 8);
  std::memcpy(&version, static_cast<char*>(base) + 8, 4);
  std::memcpy(&count, static_cast<char*>(base) + 12, 4);
  std::memcpy(&size, static_cast<char*>(base) + 16, 8);
  const auto expected = align_up(kSegmentHeaderSize + 4 * std::size_t{count}, kCacheLine) +
                        align_up(size, kCacheLine) * count;
  if (magic != kMagic || version != kSegmentVersion || count == 0 || expected > total) {
    ::munmap(base, total);
    throw CorruptionError("segment " + name + " has a bad header");
  }
  return std::shared_ptr<SharedSegment>(new SharedSegment(name, base, total, false));
}

std::string SharedSegment::name_for(std::uint64_t participant, EntityId writer) {
  std::ostringstream os;
  os << "/cbench-" << std::hex << participant << "-" << std::dec << writer;
  return os.str();
}

SharedSegment::~SharedSegment() {
  ::munmap(base_, mapped_);
  if (owner_) ::shm_unlink(name_.c_str());
}

std::atomic<std::uint32_t>* SharedSegment::refcounts() const noexcept {
  return reinterpret_cast<std::atomic<std::uint32_t>*>(static_cast<char*>(base_) + kSegmentHeaderSize);
}

std::optional<std::uint32_t> SharedSegment::try_borrow() noexcept {
  auto* refs = refcounts();
  for (std::uint32_t i = 0; i < slot_count_; ++i) {
    std::uint32_t expected = 0;
    if (refs[i].compare_exchange_strong(expected, 1, std::memory_order_acq_rel)) return i;
  }
  return std::nullopt;
}

std::uint32_t SharedSegment::borrow() {
  if (auto slot = try_borrow()) return *slot;
  throw BackpressureError("all " + std::to_string(slot_count_) + " loan slots are in use");
}

void SharedSegment::add_refs(std::uint32_t slot, std::uint32_t n) noexcept {
  if (slot < slot_count_ && n > 0) refcounts()[slot].fetch_add(n, std::memory_order_acq_rel);
}

void SharedSegment::release(std::uint32_t slot) noexcept {
  if (slot >= slot_count_) return;
  auto& ref = refcounts()[slot];
  auto cur = ref.load(std::memory_order_acquire);
  while (cur > 0 && !ref.compare_exchange_weak(cur, cur - 1, std::memory_order_acq_rel)) {
  }
}

std::uint32_t SharedSegment::refcount(std::uint32_t slot) const noexcept {
  return slot < slot_count_ ? refcounts()[slot].load(std::memory_order_acquire) : 0;
}

std::uint32_t SharedSegment::free_slots() const noexcept {
  std::uint32_t n = 0;
  for (std::uint32_t i = 0; i < slot_count_; ++i)
    if (refcount(i) == 0) ++n;
  return n;
}

std::span<std::byte> SharedSegment::slot(std::uint32_t index) const {
  if (index >= slot_count_) throw InvalidArgument("slot " + std::to_string(index) + " out of range");
  auto* base = static_cast<std::byte*>(base_) + slots_offset_ + align_up(slot_size_, kCacheLine) * index;
  return {base, slot_size_};
}

LoanedSample::~LoanedSample() {
  if (segment) segment->release(slot);
}

// ---------------------------------------------------------------------------
// Addresses

SocketAddress SocketAddress::parse(const std::string& host_port) {
  auto colon = host_port.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("expected host:port, got '" + host_port + "'");
  auto host = host_port.substr(0, colon);
  if (host == "localhost" || host.empty()) host = "127.0.0.1";
  in_addr a{};
  if (::inet_pton(AF_INET, host.c_str(), &a) != 1) throw InvalidArgument("bad IPv4 address '" + host + "'");
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(host_port.substr(colon + 1), &used);
    if (used != host_port.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw InvalidArgument("bad port in '" + host_port + "'");
  }
  if (port > 65535) throw InvalidArgument("bad port in '" + host_port + "'");
  return {ntohl(a.s_addr), static_cast<std::uint16_t>(port)};
}

std::string SocketAddress::to_string() const {
  in_addr a{htonl(address)};
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &a, buf, sizeof buf);
  return std::string(buf) + ":" + std::to_string(port);
}

sockaddr_in SocketAddress::to_sockaddr() const {
  sockaddr_in s{};
  s.sin_family = AF_INET;
  s.sin_addr.s_addr = htonl(address);
  s.sin_port = htons(port);
  return s;
}

std::uint64_t local_host_id() {
  std::ifstream in("/proc/sys/kernel/random/boot_id");
  std::string id;
  if (in && std::getline(in, id) && !id.empty()) return topic_hash(id);
  return static_cast<std::uint64_t>(::gethostid()) | 1;
}

// ---------------------------------------------------------------------------
// Broker

DiscoveryBroker::DiscoveryBroker(const std::string& bind, std::chrono::milliseconds liveliness_timeout)
    : timeout_(liveliness_timeout) {
  fd_ = open_udp_socket(SocketAddress::parse(bind), 4u << 20);
  bound_ = bound_address(fd_);
  thread_ = std::thread([this] { run(); });
}

DiscoveryBroker::~DiscoveryBroker() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
  ::close(fd_);
}

std::string DiscoveryBroker::address() const { return bound_.to_string(); }

std::size_t DiscoveryBroker::participant_count() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<ParticipantInfo> DiscoveryBroker::participants() const {
  std::lock_guard lock(mutex_);
  std::vector<ParticipantInfo> out;
  for (const auto& [id, e] : entries_) out.push_back(e.info);
  return out;
}

void DiscoveryBroker::run() {
  Bytes buf(kMaxUdpPayload + 1);
  auto last_sweep = SteadyClock::now();
  while (!stop_) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, 20) > 0) {
      for (;;) {
        sockaddr_in from{};
        socklen_t len = sizeof from;
        auto n = ::recvfrom(fd_, buf.data(), buf.size(), MSG_DONTWAIT, reinterpret_cast<sockaddr*>(&from), &len);
        if (n < 0) break;
        ByteView packet(buf.data(), static_cast<std::size_t>(n));
        try {
          wire::Reader r(packet);
          auto h = decode_packet_header(r);
          std::lock_guard lock(mutex_);
          if (h.kind == PacketKind::announce) {
            auto info = decode_announce(r.rest());
            auto [it, fresh] = entries_.try_emplace(info.id);
            it->second.info = std::move(info);
            it->second.from = from_sockaddr(from);
            it->second.last_seen = SteadyClock::now();
            for (auto& [id, e] : entries_) {
              if (id == h.participant) continue;
              send_to(fd_, packet, e.from);
              if (fresh) {
                Bytes replay = header_only(PacketKind::announce, id);
                auto body = encode_announce(e.info);
                replay.insert(replay.end(), body.begin(), body.end());
                send_to(fd_, replay, it->second.from);
              }
            }
          } else if (h.kind == PacketKind::bye) {
            if (entries_.erase(h.participant) > 0)
              for (auto& [id, e] : entries_) send_to(fd_, packet, e.from);
          }
        } catch (const Error&) {
          // Malformed datagrams are ignored.
        }
      }
    }
    auto now = SteadyClock::now();
    if (now - last_sweep >= std::chrono::milliseconds(100)) {
      last_sweep = now;
      std::lock_guard lock(mutex_);
      std::vector<std::uint64_t> dead;
      for (auto& [id, e] : entries_)
        if (now - e.last_seen > timeout_) dead.push_back(id);
      for (auto id : dead) {
        entries_.erase(id);
        auto bye = header_only(PacketKind::bye, id);
        for (auto& [other, e] : entries_) send_to(fd_, bye, e.from);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Participant

Participant::Participant(Context& context, const ContextOptions& options)
    : context_(context),
      id_(random_u64()),
      host_id_(options.host_id != 0 ? options.host_id : local_host_id()),
      max_datagram_(options.max_datagram_payload),
      announce_period_(options.announce_period),
      db_(id_, options.discovery_block_size) {
  if (max_datagram_ <= kTransportHeaderSize + kFragmentHeaderSize || max_datagram_ > kMaxUdpPayload)
    throw InvalidArgument("max datagram payload must be in (" +
                          std::to_string(kTransportHeaderSize + kFragmentHeaderSize) + ", " +
                          std::to_string(kMaxUdpPayload) + "]");
  std::string rendezvous = options.rendezvous;
  if (rendezvous.empty()) {
    const char* env = std::getenv(std::string(kRendezvousEnv).c_str());
    rendezvous = env != nullptr && *env != '\0' ? env : std::string(kDefaultRendezvous);
  }
  rendezvous_ = SocketAddress::parse(rendezvous);
  fd_ = open_udp_socket(SocketAddress{0x7f000001, 0}, options.receive_buffer_bytes);
  local_ = bound_address(fd_);
  {
    std::lock_guard lock(mutex_);
    announce_locked();
  }
  thread_ = std::thread([this] { run(); });
}

Participant::~Participant() {
  leave();
  stop_ = true;
  window_cv_.notify_all();
  if (thread_.joinable()) thread_.join();
  ::close(fd_);
}

void Participant::leave() {
  auto bye = header_only(PacketKind::bye, id_);
  transmit_raw(bye, rendezvous_);
}

Bytes Participant::announcement_locked() const {
  ParticipantInfo info;
  info.id = id_;
  info.host_id = host_id_;
  info.address = local_.address;
  info.port = local_.port;
  info.node_count = node_count_;
  info.revision = revision_;
  info.endpoints = db_.local_endpoints();
  Bytes packet = header_only(PacketKind::announce, id_);
  auto body = encode_announce(info);
  packet.insert(packet.end(), body.begin(), body.end());
  return packet;
}

void Participant::announce_locked() {
  transmit_raw(announcement_locked(), rendezvous_);
  last_announce_ = SteadyClock::now();
}

void Participant::announce() {
  std::lock_guard lock(mutex_);
  announce_locked();
}

void Participant::add_writer(const Publisher& pub) {
  std::lock_guard lock(mutex_);
  EndpointInfo e{pub.id(), pub.topic(), Direction::publisher, pub.qos()};
  writers_[pub.id()] = WriterState{e, {}, 0};
  db_.add_local(e);
  ++revision_;
  announce_locked();
}

void Participant::remove_writer(EntityId id) {
  std::lock_guard lock(mutex_);
  auto it = writers_.find(id);
  if (it != writers_.end()) {
    for (auto& [seq, p] : it->second.pending)
      for (auto part : p.awaiting) release_pending_locked(p, part);
    writers_.erase(it);
  }
  db_.remove_local(id);
  ++revision_;
  announce_locked();
  window_cv_.notify_all();
}

void Participant::add_reader(const std::shared_ptr<Subscription>& sub) {
  std::lock_guard lock(mutex_);
  EndpointInfo e{sub->id(), sub->topic(), Direction::subscription, sub->qos()};
  readers_[sub->id()] = ReaderState{e, sub};
  db_.add_local(e);
  ++revision_;
  announce_locked();
}

void Participant::remove_reader(EntityId id) {
  std::lock_guard lock(mutex_);
  readers_.erase(id);
  db_.remove_local(id);
  ++revision_;
  announce_locked();
}

void Participant::set_node_count(std::size_t n) {
  std::lock_guard lock(mutex_);
  node_count_ = static_cast<std::uint32_t>(n);
  ++revision_;
  announce_locked();
}

bool Participant::has_remote_readers(EntityId writer) const {
  std::lock_guard lock(mutex_);
  return db_.matched_remote_count(writer) > 0;
}

std::size_t Participant::remote_reader_count(EntityId writer) const {
  std::lock_guard lock(mutex_);
  return db_.matched_remote_count(writer);
}

std::size_t Participant::remote_writer_count(EntityId reader) const {
  std::lock_guard lock(mutex_);
  return db_.matched_remote_count(reader);
}

bool Participant::has_offhost_readers(EntityId writer) const {
  std::lock_guard lock(mutex_);
  for (const auto& t : db_.remote_targets(writer)) {
    const auto* info = db_.remote(t.participant);
    if (info != nullptr && info->host_id != host_id_) return true;
  }
  return false;
}

std::size_t Participant::matched_record_count() const {
  std::lock_guard lock(mutex_);
  return db_.matched_record_count();
}

std::size_t Participant::footprint_bytes() const {
  std::lock_guard lock(mutex_);
  return db_.footprint_bytes();
}

std::size_t Participant::known_participants() const {
  std::lock_guard lock(mutex_);
  return db_.participant_count();
}

std::vector<ParticipantInfo> Participant::remote_participants() const {
  std::lock_guard lock(mutex_);
  return db_.remotes();
}

std::size_t Participant::unacknowledged(EntityId writer) const {
  std::lock_guard lock(mutex_);
  auto it = writers_.find(writer);
  return it == writers_.end() ? 0 : it->second.pending.size();
}

std::vector<Participant::Target> Participant::targets_locked(EntityId writer, bool* any_reliable) const {
  std::vector<Target> out;
  for (const auto& t : db_.remote_targets(writer)) {
    const auto* info = db_.remote(t.participant);
    if (info == nullptr) continue;
    out.push_back({t.participant, SocketAddress{info->address, info->port}});
    if (any_reliable != nullptr) any_reliable[out.size() - 1] = t.any_reliable;
  }
  return out;
}

bool Participant::wait_window_locked(std::unique_lock<std::mutex>& lock, EntityId writer, std::size_t depth,
                                     std::size_t bytes, bool block) {
  auto full = [&] {
    auto it = writers_.find(writer);
    if (it == writers_.end()) return false;
    const auto& w = it->second;
    if (w.pending.empty()) return false;
    return w.pending.size() >= depth || w.pending_bytes + bytes > kWindowBytes;
  };
  if (!full()) return true;
  if (!block) throw BackpressureError("reliable send window is full");
  window_cv_.wait(lock, [&] { return stop_.load() || !full(); });
  return !stop_;
}

void Participant::send(EntityId writer, const QoSProfile& qos, std::shared_ptr<const SerializedMessage> msg,
                       bool block) {
  std::unique_lock lock(mutex_);
  if (!writers_.count(writer)) return;
  const bool reliable_writer = qos.reliability == Reliability::reliable;
  if (reliable_writer && !wait_window_locked(lock, writer, qos.history_depth, msg->body.size(), block)) return;

  auto remote = db_.remote_targets(writer);
  std::vector<Target> targets;
  std::set<std::uint64_t> awaiting;
  for (const auto& t : remote) {
    const auto* info = db_.remote(t.participant);
    if (info == nullptr) continue;
    targets.push_back({t.participant, SocketAddress{info->address, info->port}});
    if (reliable_writer && t.any_reliable) awaiting.insert(t.participant);
  }
  if (targets.empty()) return;
  if (!awaiting.empty()) {
    auto w = writers_.find(writer);
    if (w != writers_.end()) {
      Pending p;
      p.msg = msg;
      p.awaiting = std::move(awaiting);
      p.last_sent = SteadyClock::now();
      p.bytes = msg->body.size();
      w->second.pending_bytes += p.bytes;
      w->second.pending[msg->header.sequence] = std::move(p);
    }
  }
  lock.unlock();
  for (const auto& t : targets) transmit(writer, *msg, t.address);
}

std::size_t Participant::send_loan(EntityId writer, const QoSProfile& qos, const LoanNotice& notice,
                                   const std::shared_ptr<SharedSegment>& segment, bool block) {
  std::unique_lock lock(mutex_);
  if (!writers_.count(writer)) return 0;
  auto control = encode_loan(id_, writer, notice);
  if (!wait_window_locked(lock, writer, qos.history_depth, control.size(), block)) return 0;
  auto targets = targets_locked(writer, nullptr);
  if (targets.empty()) return 0;
  segment->add_refs(notice.slot, static_cast<std::uint32_t>(targets.size()));
  Pending p;
  p.control = control;
  p.segment = segment;
  p.slot = notice.slot;
  for (const auto& t : targets) p.awaiting.insert(t.participant);
  p.last_sent = SteadyClock::now();
  p.bytes = control.size();
  auto& w = writers_[writer];
  w.pending_bytes += p.bytes;
  w.pending[notice.sequence] = std::move(p);
  lock.unlock();
  for (const auto& t : targets) transmit_raw(control, t.address);
  return targets.size();
}

void Participant::transmit(EntityId writer, const SerializedMessage& msg, const SocketAddress& to) {
  const auto limit = max_datagram_ - kTransportHeaderSize;
  const auto usable = usable_fragment_bytes(limit);
  const auto total = msg.body.size();
  const auto count = static_cast<std::uint32_t>(fragment_count(total, limit));
  const auto hash = topic_hash(msg.header.topic);

  Bytes header;
  header.reserve(kRecvHeaderArea);
  auto addr = to.to_sockaddr();
  std::uint64_t bytes_sent = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto offset = std::size_t{i} * usable;
    const auto len = std::min(usable, total - std::min(total, offset));
    header.clear();
    encode_packet_header({PacketKind::data, id_, writer}, header);
    wire::Writer w(header);
    w.u64(hash);
    w.u64(msg.header.sequence);
    w.i64(msg.header.publish_timestamp_ns);
    w.u32(i);
    w.u32(count);
    iovec iov[2];
    iov[0].iov_base = header.data();
    iov[0].iov_len = header.size();
    iov[1].iov_base = const_cast<std::byte*>(msg.body.data() + offset);
    iov[1].iov_len = len;
    msghdr mh{};
    mh.msg_name = &addr;
    mh.msg_namelen = sizeof addr;
    mh.msg_iov = iov;
    mh.msg_iovlen = len > 0 ? 2 : 1;
    for (int attempt = 0;; ++attempt) {
      auto n = ::sendmsg(fd_, &mh, 0);
      if (n >= 0) {
        bytes_sent += static_cast<std::uint64_t>(n);
        break;
      }
      if (errno == EINTR) continue;
      if ((errno == EAGAIN || errno == ENOBUFS) && attempt < 100) {
        std::this_thread::sleep_for(std::chrono::microseconds(50));
        continue;
      }
      break;
    }
  }
  context_.counters().datagrams_sent.fetch_add(count);
  context_.counters().datagram_bytes_sent.fetch_add(bytes_sent);
}

void Participant::transmit_raw(ByteView packet, const SocketAddress& to) {
  send_to(fd_, packet, to);
  if (!packet.empty()) {
    context_.counters().datagrams_sent.fetch_add(1);
    context_.counters().datagram_bytes_sent.fetch_add(packet.size());
  }
}

void Participant::send_ack(EntityId writer, std::uint64_t seq, const sockaddr_in& to) {
  Bytes packet;
  encode_packet_header({PacketKind::ack, id_, writer}, packet);
  wire::Writer w(packet);
  w.u64(seq);
  auto addr = to;
  ::sendto(fd_, packet.data(), packet.size(), 0, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
}

void Participant::run() {
  // The receive buffer is sized up front so the footprint of a participant
  // does not jump when its first peer starts sending.
  rx_body_.resize(kMaxUdpPayload);
  auto last_expire = SteadyClock::now();
  while (!stop_) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, 5) > 0) receive_batch();
    auto now = SteadyClock::now();
    retransmit_due();
    flush_stalled();
    if (now - last_expire >= std::chrono::milliseconds(100)) {
      reassembler_.expire(now);
      last_expire = now;
    }
    std::unique_lock lock(mutex_);
    if (now - last_announce_ >= announce_period_) announce_locked();
  }
}

void Participant::receive_batch() {
  std::array<std::byte, kRecvHeaderArea> head{};
  for (int i = 0; i < 256 && !stop_; ++i) {
    if (rx_body_.size() != kMaxUdpPayload) rx_body_.resize(kMaxUdpPayload);
    sockaddr_in from{};
    iovec iov[2];
    iov[0].iov_base = head.data();
    iov[0].iov_len = head.size();
    iov[1].iov_base = rx_body_.data();
    iov[1].iov_len = rx_body_.size();
    msghdr mh{};
    mh.msg_name = &from;
    mh.msg_namelen = sizeof from;
    mh.msg_iov = iov;
    mh.msg_iovlen = 2;
    auto n = ::recvmsg(fd_, &mh, MSG_DONTWAIT);
    if (n < 0) return;
    context_.counters().datagrams_received.fetch_add(1);
    const auto size = static_cast<std::size_t>(n);
    try {
      if (size >= kRecvHeaderArea) {
        wire::Reader r(ByteView(head.data(), kTransportHeaderSize));
        auto h = decode_packet_header(r);
        if (h.kind == PacketKind::data) {
          Bytes body = std::move(rx_body_);
          body.resize(size - kRecvHeaderArea);
          rx_body_ = Bytes();
          handle_data(h, ByteView(head.data() + kTransportHeaderSize, kFragmentHeaderSize), std::move(body), from);
          continue;
        }
      }
      Bytes packet(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(std::min(size, head.size())));
      if (size > head.size()) packet.insert(packet.end(), rx_body_.begin(), rx_body_.begin() + (size - head.size()));
      handle_control(packet, from);
    } catch (const Error&) {
      // Malformed or foreign datagrams are dropped.
    }
  }
}

void Participant::handle_control(ByteView packet, const sockaddr_in& from) {
  wire::Reader r(packet);
  auto h = decode_packet_header(r);
  switch (h.kind) {
    case PacketKind::announce: {
      auto info = decode_announce(r.rest());
      if (info.id == id_) return;
      std::lock_guard lock(mutex_);
      db_.upsert_remote(std::move(info));
      window_cv_.notify_all();
      return;
    }
    case PacketKind::bye:
      if (h.participant != id_) drop_participant(h.participant);
      return;
    case PacketKind::ack:
      handle_ack(h, r);
      return;
    case PacketKind::loan:
      handle_loan(h, r, from);
      return;
    case PacketKind::data:
      return;
  }
}

bool Participant::inbound_reliable_locked(std::uint64_t participant, EntityId writer) const {
  const auto* info = db_.remote(participant);
  if (info == nullptr) return false;
  bool writer_reliable = false;
  for (const auto& e : info->endpoints)
    if (e.id == writer) writer_reliable = e.qos.reliability == Reliability::reliable;
  if (!writer_reliable) return false;
  for (auto id : db_.local_readers_for(participant, writer)) {
    auto it = readers_.find(id);
    if (it != readers_.end() && it->second.info.qos.reliability == Reliability::reliable) return true;
  }
  return false;
}

void Participant::handle_data(const PacketHeader& h, ByteView fragment_header, Bytes body, const sockaddr_in& from) {
  wire::Reader r(fragment_header);
  Fragment f;
  f.topic_hash = r.u64();
  f.message_id = {writer_key(h.participant, h.writer), r.u64()};
  f.publish_timestamp_ns = r.i64();
  f.index = r.u32();
  f.count = r.u32();
  f.bytes = std::move(body);
  const auto seq = f.message_id.sequence;
  const auto hash = f.topic_hash;

  std::optional<Bytes> complete;
  if (f.count == 1 && f.index == 0) {
    complete = std::move(f.bytes);
  } else {
    complete = reassembler_.add(std::move(f));
  }
  if (!complete) return;

  std::string topic;
  bool reliable = false;
  {
    std::lock_guard lock(mutex_);
    for (auto id : db_.local_readers_for(h.participant, h.writer)) {
      auto it = readers_.find(id);
      if (it != readers_.end()) {
        topic = it->second.info.topic;
        break;
      }
    }
    reliable = inbound_reliable_locked(h.participant, h.writer);
  }
  // Not matched yet: stay silent so a reliable writer retransmits.
  if (topic.empty() || topic_hash(topic) != hash) return;
  auto msg = std::make_shared<const SerializedMessage>(SerializedMessage::from_body(std::move(topic), std::move(*complete)));
  if (reliable) send_ack(h.writer, seq, from);
  accept_inbound(h.participant, h.writer, seq, reliable, std::move(msg));
}

void Participant::handle_loan(const PacketHeader& h, wire::Reader& r, const sockaddr_in& from) {
  LoanNotice n;
  n.topic_hash = r.u64();
  n.sequence = r.u64();
  n.publish_timestamp_ns = r.i64();
  n.slot = r.u32();
  n.size = r.u64();

  std::string topic;
  std::shared_ptr<SharedSegment> segment;
  bool duplicate = false;
  {
    std::lock_guard lock(mutex_);
    for (auto id : db_.local_readers_for(h.participant, h.writer)) {
      auto it = readers_.find(id);
      if (it != readers_.end()) {
        topic = it->second.info.topic;
        break;
      }
    }
    if (topic.empty() || topic_hash(topic) != n.topic_hash) return;
    auto key = std::pair{h.participant, h.writer};
    auto in = inbound_.find(key);
    if (in != inbound_.end() &&
        (n.sequence < in->second.next_expected || in->second.stash.count(n.sequence) > 0))
      duplicate = true;
    if (!duplicate) {
      auto& seg = segments_[key];
      if (!seg) seg = SharedSegment::open(SharedSegment::name_for(h.participant, h.writer));
      segment = seg;
    }
  }
  send_ack(h.writer, n.sequence, from);
  if (duplicate) return;
  if (n.size > segment->slot_size()) throw CorruptionError("loan notice larger than its slot");
  auto sample = std::make_shared<const LoanedSample>(MessageHeader{topic, n.sequence, n.publish_timestamp_ns},
                                                     segment, n.slot, static_cast<std::size_t>(n.size));
  accept_inbound(h.participant, h.writer, n.sequence, true, std::move(sample));
}

void Participant::handle_ack(const PacketHeader& h, wire::Reader& r) {
  auto seq = r.u64();
  std::lock_guard lock(mutex_);
  auto w = writers_.find(h.writer);
  if (w == writers_.end()) return;
  auto p = w->second.pending.find(seq);
  if (p == w->second.pending.end()) return;
  p->second.awaiting.erase(h.participant);
  if (p->second.awaiting.empty()) {
    w->second.pending_bytes -= p->second.bytes;
    w->second.pending.erase(p);
    window_cv_.notify_all();
  }
}

void Participant::accept_inbound(std::uint64_t participant, EntityId writer, std::uint64_t seq, bool reliable,
                                 Subscription::Delivery delivery) {
  std::vector<Subscription::Delivery> ready;
  {
    std::lock_guard lock(mutex_);
    auto& in = inbound_[{participant, writer}];
    if (in.next_expected == 0) in.next_expected = seq;
    if (seq < in.next_expected) return;
    if (!reliable) {
      // Best effort: deliver anything newer, never wait for gaps.
      in.next_expected = seq + 1;
      ready.push_back(std::move(delivery));
    } else if (seq == in.next_expected) {
      ready.push_back(std::move(delivery));
      ++in.next_expected;
      for (auto it = in.stash.begin(); it != in.stash.end() && it->first == in.next_expected;) {
        ready.push_back(std::move(it->second));
        it = in.stash.erase(it);
        ++in.next_expected;
      }
    } else {
      if (in.stash.empty()) in.stalled_since = SteadyClock::now();
      in.stash.emplace(seq, std::move(delivery));
    }
  }
  for (auto& d : ready) dispatch(participant, writer, d);
}

void Participant::flush_stalled() {
  std::vector<std::tuple<std::uint64_t, EntityId, std::vector<Subscription::Delivery>>> out;
  {
    std::lock_guard lock(mutex_);
    auto now = SteadyClock::now();
    for (auto& [key, in] : inbound_) {
      if (in.stash.empty() || now - in.stalled_since < kStallTimeout) continue;
      // The writer gave up on the gap; resume from the oldest stashed message.
      std::vector<Subscription::Delivery> ready;
      in.next_expected = in.stash.begin()->first;
      for (auto it = in.stash.begin(); it != in.stash.end() && it->first == in.next_expected;) {
        ready.push_back(std::move(it->second));
        it = in.stash.erase(it);
        ++in.next_expected;
      }
      in.stalled_since = now;
      out.emplace_back(key.first, key.second, std::move(ready));
    }
  }
  for (auto& [p, w, ds] : out)
    for (auto& d : ds) dispatch(p, w, d);
}

void Participant::dispatch(std::uint64_t participant, EntityId writer, const Subscription::Delivery& delivery) {
  std::vector<std::shared_ptr<Subscription>> subs;
  {
    std::lock_guard lock(mutex_);
    for (auto id : db_.local_readers_for(participant, writer)) {
      auto it = readers_.find(id);
      if (it == readers_.end()) continue;
      if (auto s = it->second.sub.lock()) subs.push_back(std::move(s));
    }
  }
  for (auto& s : subs) s->deliver(delivery);
}

void Participant::retransmit_due() {
  struct Resend {
    EntityId writer;
    std::shared_ptr<const SerializedMessage> msg;
    Bytes control;
    SocketAddress to;
  };
  std::vector<Resend> resend;
  {
    std::lock_guard lock(mutex_);
    auto now = SteadyClock::now();
    for (auto& [wid, w] : writers_) {
      for (auto it = w.pending.begin(); it != w.pending.end();) {
        auto& p = it->second;
        if (now - p.last_sent < kRetransmitPeriod) {
          ++it;
          continue;
        }
        if (p.retries >= kMaxRetries) {
          for (auto part : p.awaiting) release_pending_locked(p, part);
          w.pending_bytes -= p.bytes;
          it = w.pending.erase(it);
          window_cv_.notify_all();
          continue;
        }
        ++p.retries;
        p.last_sent = now;
        for (auto part : p.awaiting) {
          const auto* info = db_.remote(part);
          if (info == nullptr) continue;
          resend.push_back({wid, p.msg, p.control, SocketAddress{info->address, info->port}});
        }
        ++it;
      }
    }
  }
  for (auto& r : resend) {
    context_.counters().retransmissions.fetch_add(1);
    if (r.msg)
      transmit(r.writer, *r.msg, r.to);
    else
      transmit_raw(r.control, r.to);
  }
}

void Participant::release_pending_locked(Pending& p, std::uint64_t) {
  if (p.segment) p.segment->release(p.slot);
}

void Participant::drop_participant(std::uint64_t participant) {
  std::lock_guard lock(mutex_);
  db_.remove_remote(participant);
  for (auto& [wid, w] : writers_) {
    for (auto it = w.pending.begin(); it != w.pending.end();) {
      auto& p = it->second;
      if (p.awaiting.erase(participant) > 0) release_pending_locked(p, participant);
      if (p.awaiting.empty()) {
        w.pending_bytes -= p.bytes;
        it = w.pending.erase(it);
      } else {
        ++it;
      }
    }
  }
  std::erase_if(inbound_, [&](const auto& kv) { return kv.first.first == participant; });
  std::erase_if(segments_, [&](const auto& kv) { return kv.first.first == participant; });
  window_cv_.notify_all();
}

}  // namespace cbench
