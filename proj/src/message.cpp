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

#include "cbench/message.hpp"

#include <cstring>
#include <system_error>

namespace cbench {

SystemError::SystemError(const std::string& what, int err)
    : Error(what + ": " + std::system_category().message(err)), code_(err) {}

void QoSProfile::validate() const {
  if (history_depth < 1) throw InvalidArgument("history_depth must be >= 1");
}

bool ipc_compatible(const QoSProfile& qos) noexcept {
  return qos.durability == Durability::volatile_ && qos.history_depth >= 1;
}

bool qos_compatible(const QoSProfile& pub, const QoSProfile& sub) noexcept {
  return sub.reliability == Reliability::best_effort || pub.reliability == Reliability::reliable;
}

SerializedMessage serialize(const Payload& payload) {
  SerializedMessage out;
  out.header = {payload.topic, payload.sequence, payload.publish_timestamp_ns};
  out.body.reserve(kSerializedHeaderSize + payload.data.size());
  wire::Writer w(out.body);
  w.u64(topic_hash(payload.topic));
  w.u64(payload.sequence);
  w.i64(payload.publish_timestamp_ns);
  w.bytes(payload.data);
  return out;
}

Payload deserialize(const SerializedMessage& msg) {
  auto data = msg.data();
  return Payload{msg.header.topic, msg.header.sequence, msg.header.publish_timestamp_ns,
                 Bytes(data.begin(), data.end())};
}

SerializedMessage SerializedMessage::from_body(std::string topic, Bytes body) {
  wire::Reader r(body);
  auto hash = r.u64();
  if (hash != topic_hash(topic)) throw CorruptionError("topic hash mismatch for '" + topic + "'");
  SerializedMessage out;
  out.header.topic = std::move(topic);
  out.header.sequence = r.u64();
  out.header.publish_timestamp_ns = r.i64();
  out.body = std::move(body);
  return out;
}

std::size_t usable_fragment_bytes(std::size_t max_datagram_payload) {
  if (max_datagram_payload <= kFragmentHeaderSize)
    throw InvalidArgument("max_datagram_payload " + std::to_string(max_datagram_payload) +
                          " leaves no room for body bytes");
  return max_datagram_payload - kFragmentHeaderSize;
}

std::size_t fragment_count(std::size_t total_length, std::size_t max_datagram_payload) {
  auto usable = usable_fragment_bytes(max_datagram_payload);
  if (total_length == 0) return 1;
  return (total_length + usable - 1) / usable;
}

std::vector<Fragment> fragment(const SerializedMessage& msg, std::size_t max_datagram_payload,
                               std::uint64_t publisher_id) {
  const auto usable = usable_fragment_bytes(max_datagram_payload);
  const auto count = fragment_count(msg.body.size(), max_datagram_payload);
  if (count > 0xffffffffULL) throw InvalidArgument("message needs too many fragments");

  std::vector<Fragment> out;
  out.reserve(count);
  const auto hash = topic_hash(msg.header.topic);
  ByteView body(msg.body);
  for (std::size_t i = 0; i < count; ++i) {
    auto piece = body.subspan(std::min(i * usable, body.size()));
    piece = piece.first(std::min(piece.size(), usable));
    out.push_back(Fragment{{publisher_id, msg.header.sequence},
                           hash,
                           msg.header.publish_timestamp_ns,
                           static_cast<std::uint32_t>(i),
                           static_cast<std::uint32_t>(count),
                           Bytes(piece.begin(), piece.end())});
  }
  return out;
}

void encode_fragment(const Fragment& f, Bytes& out) {
  out.reserve(out.size() + kFragmentHeaderSize + f.bytes.size());
  wire::Writer w(out);
  w.u64(f.topic_hash);
  w.u64(f.message_id.sequence);
  w.i64(f.publish_timestamp_ns);
  w.u32(f.index);
  w.u32(f.count);
  w.bytes(f.bytes);
}

Bytes encode_fragment(const Fragment& f) {
  Bytes out;
  encode_fragment(f, out);
  return out;
}

Fragment decode_fragment(ByteView in, std::uint64_t publisher_id) {
  wire::Reader r(in);
  Fragment f;
  f.topic_hash = r.u64();
  f.message_id = {publisher_id, r.u64()};
  f.publish_timestamp_ns = r.i64();
  f.index = r.u32();
  f.count = r.u32();
  if (f.count == 0 || f.index >= f.count) throw CorruptionError("fragment index out of range");
  auto body = r.rest();
  f.bytes.assign(body.begin(), body.end());
  return f;
}

std::optional<Bytes> reassemble(const std::vector<Fragment>& fragments) {
  if (fragments.empty()) return std::nullopt;
  const auto& first = fragments.front();
  std::vector<const Fragment*> slots(first.count, nullptr);
  for (const auto& f : fragments) {
    if (f.message_id != first.message_id) throw CorruptionError("fragments belong to different messages");
    if (f.count != first.count) throw CorruptionError("conflicting fragment counts");
    if (f.index >= f.count) throw CorruptionError("fragment index out of range");
    slots[f.index] = &f;
  }
  std::size_t total = 0;
  for (auto* s : slots) {
    if (s == nullptr) return std::nullopt;
    total += s->bytes.size();
  }
  Bytes out;
  out.reserve(total);
  for (auto* s : slots) out.insert(out.end(), s->bytes.begin(), s->bytes.end());
  return out;
}

std::optional<Bytes> Reassembler::add(Fragment f, Clock::time_point now) {
  if (f.count == 0 || f.index >= f.count) throw CorruptionError("fragment index out of range");
  if (f.count == 1) return std::move(f.bytes);

  auto [it, inserted] = partial_.try_emplace(f.message_id);
  auto& p = it->second;
  if (inserted) {
    p.count = f.count;
    p.pieces.resize(f.count);
    p.have.assign(f.count, false);
    p.started = now;
  } else if (p.count != f.count) {
    throw CorruptionError("conflicting fragment counts");
  }
  if (p.have[f.index]) return std::nullopt;
  p.have[f.index] = true;
  p.pieces[f.index] = std::move(f.bytes);
  ++p.received;
  if (p.received < p.count) return std::nullopt;

  std::size_t total = 0;
  for (auto& piece : p.pieces) total += piece.size();
  Bytes out;
  out.reserve(total);
  for (auto& piece : p.pieces) out.insert(out.end(), piece.begin(), piece.end());
  bytes_copied_ += total;
  partial_.erase(it);
  return out;
}

std::size_t Reassembler::expire(Clock::time_point now) {
  return std::erase_if(partial_, [&](const auto& kv) { return now - kv.second.started > timeout_; });
}

}  // namespace cbench
