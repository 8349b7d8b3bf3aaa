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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cbench/error.hpp"

namespace cbench {

/// Fixed-capacity FIFO that overwrites its oldest entry when full and counts
/// every overwrite as a drop. Not synchronized; the owner guards it.
template <typename T>
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity) : slots_(capacity) {
    if (capacity == 0) throw InvalidArgument("ring buffer capacity must be >= 1");
  }

  /// Returns true when an older entry was overwritten.
  bool push(T value) {
    bool dropped = false;
    if (size() == capacity()) {
      slots_[tail_ % capacity()].reset();
      ++tail_;
      ++drops_;
      dropped = true;
    }
    slots_[head_ % capacity()].emplace(std::move(value));
    ++head_;
    return dropped;
  }

  std::optional<T> take() {
    if (empty()) return std::nullopt;
    auto& slot = slots_[tail_ % capacity()];
    std::optional<T> out(std::move(*slot));
    slot.reset();
    ++tail_;
    return out;
  }

  void clear() {
    while (take()) {
    }
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(head_ - tail_); }
  bool empty() const noexcept { return head_ == tail_; }
  std::size_t capacity() const noexcept { return slots_.size(); }
  std::uint64_t drops() const noexcept { return drops_; }

 private:
  std::vector<std::optional<T>> slots_;
  std::uint64_t head_ = 0;
  std::uint64_t tail_ = 0;
  std::uint64_t drops_ = 0;
};

}  // namespace cbench
