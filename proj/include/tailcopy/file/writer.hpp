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
#include <map>
#include <string>
#include <string_view>

#include "tailcopy/cache/instance.hpp"
#include "tailcopy/file/codec.hpp"
#include "tailcopy/file/geometry.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::file {

/// Turns one in-order byte stream into data-cache chunk writes.
///
/// Complete chunks are written in parallel (each is written exactly once).
/// The trailing partial chunk is rewritten from its beginning on every
/// extension, and those rewrites are serialized per chunk so a reader
/// always sees a correct prefix. The acked frontier — the position below
/// which every chunk write has at least one ack — is what may be published
/// as the cache length, and it only moves forward.
///
/// Used by the producer's shadow-write path and by every copy-hop cache
/// writer; the base position must be chunk-aligned (writers resume from a
/// chunk boundary and rebuild the boundary chunk whole).
class ChunkAssembler {
 public:
  struct Config {
    Geometry geom;
    sim::TimeMs retry_ms = 50;  // zero-ack chunk put retry
  };

  ChunkAssembler(sim::Sim& sim, cache::Instance& data_cache, std::string path,
                 Config cfg, cache::VersionSource& versions, sim::Pid client,
                 int64_t base, std::function<void(int64_t)> on_advance);

  /// Contiguous next bytes of the stream (position fed_end()).
  void feed(std::string_view bytes);

  int64_t base() const { return base_; }
  int64_t fed_end() const { return fed_end_; }
  int64_t acked_frontier() const { return frontier_; }
  bool idle() const;  // no outstanding or pending chunk writes

  struct Stats {
    int64_t chunk_puts = 0;
    int64_t failed_puts = 0;  // zero-ack, retried
  };
  const Stats& stats() const { return stats_; }

 private:
  struct Chunk {
    std::string content;     // from chunk start; freed once fully acked
    int64_t acked_fill = 0;
    bool outstanding = false;
    bool dirty = false;      // grew while a put was in flight
    bool retry_queued = false;
  };

  void issue(int64_t seq);
  void on_put_done(int64_t seq, int64_t wrote, int acked);
  void advance_frontier();

  sim::Sim& sim_;
  cache::Instance& cache_;
  std::string path_;
  Config cfg_;
  cache::VersionSource& versions_;
  sim::Pid client_;
  int64_t base_;
  int64_t fed_end_;
  int64_t frontier_;
  std::map<int64_t, Chunk> chunks_;
  std::function<void(int64_t)> on_advance_;
  Stats stats_;
};

/// Owns this writer's view of a file's metadata-cache length record.
///
/// The record is shared: on a downstream cluster the durable-stream writer
/// owns durable_len while the cache-stream writer owns cache_len, and
/// dueling writers overlap outright. Every write is therefore versioned as
/// stored+1, and a write that was acked but applied nowhere (version lost
/// a race) triggers a re-read and a merged retry. Lengths may regress when
/// a younger duelist overwrites an older writer's record — readers are
/// built to tolerate that.
class MetaPublisher {
 public:
  MetaPublisher(sim::Sim& sim, cache::Instance& meta_cache, std::string path,
                sim::Pid client, sim::TimeMs retry_ms = 50);

  /// Sets this writer's fields (pass -1 to leave a field alone) and
  /// pushes the merged record out. Collapses bursts: at most one write in
  /// flight, the latest pending values win.
  void publish(int64_t cache_len, int64_t durable_len);

  const FileMeta& last_written() const { return local_; }
  bool idle() const { return !inflight_ && !dirty_; }

 private:
  void push();

  sim::Sim& sim_;
  cache::Instance& cache_;
  std::string path_;
  cache::Key key_;
  sim::Pid client_;
  sim::TimeMs retry_ms_;
  FileMeta local_;        // merged view: ours authoritative, theirs cached
  uint64_t version_ = 0;  // version of the record we last saw/wrote
  bool owns_cache_len_ = false;
  bool owns_durable_len_ = false;
  bool inflight_ = false;
  bool dirty_ = false;
};

}  // namespace tailcopy::file
