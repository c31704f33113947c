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
#include <functional>
#include <string>

#include "tailcopy/cache/instance.hpp"
#include "tailcopy/file/codec.hpp"
#include "tailcopy/file/geometry.hpp"
#include "tailcopy/log/durable_log.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::file {

struct RangeReadOptions {
  Geometry geom;
  sim::TimeMs hedge_ms = 30;          // second relaxed read after silence
  sim::TimeMs phase_timeout_ms = 100; // give up on the cache for a chunk
  bool durable_only = false;          // skip the cache entirely
};

struct RangeReadResult {
  /// The longest correct prefix of the requested range that could be
  /// assembled; shorter than asked when data simply isn't there yet (poll
  /// again) or when the durable read was throttled.
  std::string bytes;
  bool throttled = false;
  sim::TimeMs retry_after_ms = 0;
  int cache_chunks = 0;    // chunks fully served from the cache
  int durable_chunks = 0;  // chunks that fell back to the durable log
  int hedged = 0;          // second relaxed reads issued
  int escalated = 0;       // consistent reads issued
  int64_t durable_bytes = 0;
  // Composition of `bytes` by serving layer; the two always sum to
  // bytes.size(). Lets callers account every delivered byte exactly once.
  int64_t bytes_from_cache = 0;
  int64_t bytes_from_durable = 0;
};

/// Reads [offset, offset+len) of `path` against a metadata snapshot.
///
/// Per chunk: one relaxed read; on silence past hedge_ms a second relaxed
/// read to a different replica (first answer wins); a short or missing
/// answer escalates to a consistent read; chunks the cache cannot serve
/// are fetched from the durable log in one combined read spanning first to
/// last missing chunk, cached middles kept. The caller's own process must
/// stay alive for the callback to fire.
void start_range_read(sim::Sim& sim, cache::Instance& data_cache,
                      log::DurableLog& durable, const std::string& path,
                      int64_t offset, int64_t len, FileMeta meta,
                      RangeReadOptions opts, sim::Pid client,
                      std::function<void(RangeReadResult)> cb);

}  // namespace tailcopy::file
