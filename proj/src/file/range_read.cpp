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
#include "tailcopy/file/range_read.hpp"

#include <map>
#include <memory>

namespace tailcopy::file {

namespace {

struct ChunkSlot {
  ChunkRange range;            // requested in-chunk [begin, end)
  bool cache_eligible = false; // cache expected to cover [0, end)
  bool decided = false;        // either satisfied or sent to durable
  bool satisfied = false;
  bool escalated = false;
  bool responded = false;      // any relaxed answer seen (gates hedge)
  int first_replica = -1;
  std::string bytes;           // chunk content from offset 0 when satisfied
};

struct Job : std::enable_shared_from_this<Job> {
  sim::Sim& sim;
  cache::Instance& cache;
  log::DurableLog& durable;
  std::string path;
  int64_t offset;
  int64_t target_end;
  FileMeta meta;
  RangeReadOptions opts;
  sim::Pid client;
  std::function<void(RangeReadResult)> cb;
  std::map<int64_t, ChunkSlot> slots;
  int undecided = 0;
  bool done = false;
  RangeReadResult result;
  int64_t durable_span_start = 0;
  std::string durable_data;

  Job(sim::Sim& s, cache::Instance& c, log::DurableLog& d, std::string p,
      int64_t off, int64_t end, FileMeta m, RangeReadOptions o, sim::Pid cl,
      std::function<void(RangeReadResult)> f)
      : sim(s), cache(c), durable(d), path(std::move(p)), offset(off),
        target_end(end), meta(m), opts(o), client(cl), cb(std::move(f)) {}

  void reply(sim::TimeMs delay, sim::Sim::EventFn fn) {
    if (client.assigned()) {
      sim.schedule_on(client, delay, std::move(fn));
    } else {
      sim.schedule(delay, std::move(fn));
    }
  }

  void start() {
    if (target_end <= offset) {
      auto self = shared_from_this();
      reply(0, [self] { self->finish(); });  // keep the callback async
      return;
    }
    for (const ChunkRange& cr :
         chunk_span(opts.geom, offset, target_end - offset)) {
      ChunkSlot slot;
      slot.range = cr;
      slot.cache_eligible =
          !opts.durable_only &&
          expected_fill(opts.geom, meta.cache_len, cr.seq) >= cr.end;
      slots[cr.seq] = std::move(slot);
      undecided++;
    }
    auto self = shared_from_this();
    for (auto& [seq, slot] : slots) {
      if (slot.cache_eligible) {
        issue_relaxed(seq, /*exclude=*/-1, /*is_hedge=*/false);
      } else {
        decide(seq, false);  // straight to the durable set
      }
    }
    if (undecided > 0) {
      reply(opts.phase_timeout_ms, [self] {
        for (auto& [seq, slot] : self->slots) {
          if (!slot.decided) self->decide(seq, false);
        }
      });
    }
  }

  void issue_relaxed(int64_t seq, int exclude, bool is_hedge) {
    auto self = shared_from_this();
    if (is_hedge) result.hedged++;
    int chosen = cache.get_relaxed(
        cache::chunk_key(path, seq), client,
        [self, seq](cache::Instance::GetResult g) {
          self->on_cache_answer(seq, std::move(g), /*consistent=*/false);
        },
        exclude);
    if (!is_hedge) {
      ChunkSlot& slot = slots[seq];
      slot.first_replica = chosen;
      reply(opts.hedge_ms, [self, seq] {
        ChunkSlot& s2 = self->slots[seq];
        if (s2.decided || s2.escalated || s2.responded) return;
        self->issue_relaxed(seq, s2.first_replica, /*is_hedge=*/true);
      });
    }
  }

  void on_cache_answer(int64_t seq, cache::Instance::GetResult g,
                       bool consistent) {
    ChunkSlot& slot = slots[seq];
    if (slot.decided) return;
    slot.responded = true;
    bool enough = g.status == cache::Instance::Status::kHit &&
                  static_cast<int64_t>(g.value.bytes.size()) >= slot.range.end;
    if (enough) {
      slot.bytes = std::move(g.value.bytes);
      decide(seq, true);
      return;
    }
    if (consistent) {
      decide(seq, false);  // even the quorum can't serve it: durable
      return;
    }
    if (slot.escalated) return;  // a losing hedge answer, already moved on
    // Fewer bytes than expected (or a miss/error): consistent read.
    slot.escalated = true;
    result.escalated++;
    auto self = shared_from_this();
    cache.get_consistent(cache::chunk_key(path, seq), client,
                         [self, seq](cache::Instance::GetResult gg) {
                           self->on_cache_answer(seq, std::move(gg),
                                                 /*consistent=*/true);
                         });
  }

  void decide(int64_t seq, bool satisfied) {
    ChunkSlot& slot = slots[seq];
    if (slot.decided) return;
    slot.decided = true;
    slot.satisfied = satisfied;
    if (satisfied) result.cache_chunks++;
    if (--undecided == 0) durable_phase();
  }

  void durable_phase() {
    int64_t span_start = -1;
    int64_t span_end = -1;
    for (const auto& [seq, slot] : slots) {
      if (slot.satisfied) continue;
      int64_t cs = seq * opts.geom.chunk_size;
      if (span_start < 0) span_start = cs + slot.range.begin;
      span_end = cs + slot.range.end;
      result.durable_chunks++;
    }
    if (span_start < 0) {
      finish();
      return;
    }
    auto self = shared_from_this();
    durable_span_start = span_start;
    durable.read(path, span_start, span_end - span_start, client,
                 [self](log::DurableLog::ReadResult r) {
                   if (r.throttled) {
                     self->result.throttled = true;
                     self->result.retry_after_ms = r.retry_after_ms;
                   } else if (r.ok) {
                     self->result.durable_bytes =
                         static_cast<int64_t>(r.bytes.size());
                     self->durable_data = std::move(r.bytes);
                   }
                   self->finish();
                 });
  }

  void finish() {
    if (done) return;
    done = true;
    // Assemble the longest correct prefix, chunk by chunk.
    std::string out;
    int64_t pos = offset;
    for (const auto& [seq, slot] : slots) {
      int64_t cs = seq * opts.geom.chunk_size;
      int64_t from = cs + slot.range.begin;
      int64_t to = cs + slot.range.end;
      if (from != pos) break;  // a hole: stop at the prefix
      if (slot.satisfied) {
        out.append(slot.bytes, static_cast<size_t>(slot.range.begin),
                   static_cast<size_t>(slot.range.end - slot.range.begin));
        result.bytes_from_cache += slot.range.end - slot.range.begin;
        pos = to;
        continue;
      }
      // Durable segment must fully cover the chunk's requested range.
      int64_t avail_end =
          durable_span_start + static_cast<int64_t>(durable_data.size());
      if (from < durable_span_start || to > avail_end) break;
      out.append(durable_data,
                 static_cast<size_t>(from - durable_span_start),
                 static_cast<size_t>(to - from));
      result.bytes_from_durable += to - from;
      pos = to;
    }
    result.bytes = std::move(out);
    cb(std::move(result));
  }
};

}  // namespace

void start_range_read(sim::Sim& sim, cache::Instance& data_cache,
                      log::DurableLog& durable, const std::string& path,
                      int64_t offset, int64_t len, FileMeta meta,
                      RangeReadOptions opts, sim::Pid client,
                      std::function<void(RangeReadResult)> cb) {
  int64_t limit = opts.durable_only
                      ? meta.durable_len
                      : std::max(meta.cache_len, meta.durable_len);
  int64_t target_end = std::min(offset + len, limit);
  auto job = std::make_shared<Job>(sim, data_cache, durable, path, offset,
                                   target_end, meta, opts, client,
                                   std::move(cb));
  job->start();
}

}  // namespace tailcopy::file
