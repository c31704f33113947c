/*
 * Copyright 2026 The tailcopy Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <deque>

#include "tailcopy/sim/sim.hpp"

namespace tailcopy::file {

/// Decides when a reader should stop waiting for the cache and read the
/// durable log instead. The durable length is recorded each call; once the
/// cache has trailed some recorded durable position for longer than
/// max_delay_ms, fall back (and reset, so the next fallback needs a fresh
/// overage). Keeps durable reads near zero while the cache is healthy, at
/// the price of up to max_delay_ms of extra latency when it is not.
class DelayedReadPolicy {
 public:
  explicit DelayedReadPolicy(sim::TimeMs max_delay_ms = 1000)
      : max_delay_ms_(max_delay_ms) {}

  bool should_read_durable(int64_t cache_size, int64_t durable_size,
                           sim::TimeMs now) {
    record_.push_back({now, durable_size});
    while (!record_.empty() && record_.front().size <= cache_size) {
      record_.pop_front();  // cache has caught up to these positions
    }
    if (record_.empty()) return false;
    if (now > record_.front().time + max_delay_ms_) {
      record_.clear();
      return true;
    }
    return false;  // cache may catch up soon
  }

 private:
  struct Entry {
    sim::TimeMs time;
    int64_t size;
  };
  sim::TimeMs max_delay_ms_;
  std::deque<Entry> record_;
};

}  // namespace tailcopy::file
