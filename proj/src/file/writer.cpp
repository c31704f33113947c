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
#include "tailcopy/file/writer.hpp"

#include <cassert>

namespace tailcopy::file {

ChunkAssembler::ChunkAssembler(sim::Sim& sim, cache::Instance& data_cache,
                               std::string path, Config cfg,
                               cache::VersionSource& versions, sim::Pid client,
                               int64_t base,
                               std::function<void(int64_t)> on_advance)
    : sim_(sim),
      cache_(data_cache),
      path_(std::move(path)),
      cfg_(cfg),
      versions_(versions),
      client_(client),
      base_(base),
      fed_end_(base),
      frontier_(base),
      on_advance_(std::move(on_advance)) {
  assert(base % cfg_.geom.chunk_size == 0);
}

void ChunkAssembler::feed(std::string_view bytes) {
  if (bytes.empty()) return;
  size_t consumed = 0;
  for (const ChunkRange& cr :
       chunk_span(cfg_.geom, fed_end_, static_cast<int64_t>(bytes.size()))) {
    Chunk& ch = chunks_[cr.seq];
    assert(static_cast<int64_t>(ch.content.size()) == cr.begin);
    ch.content.append(bytes.substr(consumed, cr.end - cr.begin));
    consumed += static_cast<size_t>(cr.end - cr.begin);
    if (ch.outstanding || ch.retry_queued) {
      ch.dirty = true;  // rewrite with the fuller content once it settles
    } else {
      issue(cr.seq);
    }
  }
  fed_end_ += static_cast<int64_t>(bytes.size());
}

void ChunkAssembler::issue(int64_t seq) {
  Chunk& ch = chunks_[seq];
  assert(!ch.outstanding);
  ch.outstanding = true;
  ch.dirty = false;
  ch.retry_queued = false;
  int64_t wrote = static_cast<int64_t>(ch.content.size());
  stats_.chunk_puts++;
  cache_.put(cache::chunk_key(path_, seq), ch.content, versions_.next(),
             client_, [this, seq, wrote](int acked, int /*applied*/) {
               // A write superseded by a newer duelist is acked without
               // being applied; both duelists carry identical upstream
               // bytes, so the frontier may advance regardless.
               on_put_done(seq, wrote, acked);
             });
}

void ChunkAssembler::on_put_done(int64_t seq, int64_t wrote, int acked) {
  auto it = chunks_.find(seq);
  if (it == chunks_.end()) return;
  Chunk& ch = it->second;
  ch.outstanding = false;
  if (acked > 0) {
    if (wrote > ch.acked_fill) ch.acked_fill = wrote;
    if (ch.dirty) {
      issue(seq);
    } else if (ch.acked_fill == cfg_.geom.chunk_size) {
      ch.content.clear();  // complete and confirmed; never rewritten
      ch.content.shrink_to_fit();
    }
    advance_frontier();
    return;
  }
  // Nobody took the write (cache down, migrating, overloaded): hold the
  // frontier and retry; the durable layer stays the source of truth.
  stats_.failed_puts++;
  ch.retry_queued = true;
  sim_.schedule_on(client_, cfg_.retry_ms, [this, seq] {
    auto it2 = chunks_.find(seq);
    if (it2 == chunks_.end() || it2->second.outstanding) return;
    issue(seq);
  });
}

void ChunkAssembler::advance_frontier() {
  int64_t frontier = frontier_;
  while (true) {
    auto it = chunks_.find(frontier / cfg_.geom.chunk_size);
    if (it == chunks_.end()) break;
    const Chunk& ch = it->second;
    int64_t chunk_start = it->first * cfg_.geom.chunk_size;
    if (ch.acked_fill == cfg_.geom.chunk_size) {
      frontier = chunk_start + cfg_.geom.chunk_size;
      continue;
    }
    frontier = std::max(frontier, chunk_start + ch.acked_fill);
    break;
  }
  if (frontier > frontier_) {
    frontier_ = frontier;
    on_advance_(frontier_);
  }
}

bool ChunkAssembler::idle() const {
  for (const auto& [seq, ch] : chunks_) {
    if (ch.outstanding || ch.dirty || ch.retry_queued) return false;
  }
  return true;
}

// --- MetaPublisher ------------------------------------------------------

MetaPublisher::MetaPublisher(sim::Sim& sim, cache::Instance& meta_cache,
                             std::string path, sim::Pid client,
                             sim::TimeMs retry_ms)
    : sim_(sim),
      cache_(meta_cache),
      path_(std::move(path)),
      key_(cache::meta_key(path_)),
      client_(client),
      retry_ms_(retry_ms) {}

void MetaPublisher::publish(int64_t cache_len, int64_t durable_len) {
  if (cache_len >= 0) {
    local_.cache_len = cache_len;
    owns_cache_len_ = true;
  }
  if (durable_len >= 0) {
    local_.durable_len = durable_len;
    owns_durable_len_ = true;
  }
  if (inflight_) {
    dirty_ = true;
    return;
  }
  push();
}

void MetaPublisher::push() {
  inflight_ = true;
  dirty_ = false;
  FileMeta snapshot = local_;
  cache_.put(
      key_, encode_file_meta(snapshot), version_ + 1, client_,
      [this, snapshot](int acked, int applied) {
        if (acked > 0 && applied > 0) {
          version_++;
          inflight_ = false;
          if (dirty_) push();
          return;
        }
        if (acked > 0) {
          // Acked but applied nowhere: someone else wrote version_+1
          // first. Refresh our view of the record, merge, retry.
          cache_.get_consistent(
              key_, client_, [this](cache::Instance::GetResult g) {
                if (g.status == cache::Instance::Status::kHit) {
                  version_ = g.value.version;
                  FileMeta theirs = decode_file_meta(g.value.bytes);
                  // Fields we publish stay ours — even against a duelist,
                  // we must never announce a length we have not acked.
                  // Fields we never set track the other writer's record.
                  if (!owns_cache_len_) local_.cache_len = theirs.cache_len;
                  if (!owns_durable_len_) {
                    local_.durable_len = theirs.durable_len;
                  }
                }
                inflight_ = false;
                push();
              });
          return;
        }
        // Zero acks: metadata cache unreachable right now. Back off.
        sim_.schedule_on(client_, retry_ms_, [this] {
          inflight_ = false;
          push();
        });
      });
}

}  // namespace tailcopy::file
