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
#include "tailcopy/harness/consumer.hpp"

#include <algorithm>

namespace tailcopy::harness {

Consumer::Consumer(sim::Sim& sim, hop::ClusterRuntime rt, int cluster_id,
                   Config cfg, std::vector<ShardTarget> shards,
                   Monitor& monitor, Metrics& metrics)
    : sim_(sim),
      rt_(rt),
      cluster_id_(cluster_id),
      cfg_(std::move(cfg)),
      monitor_(monitor),
      metrics_(metrics),
      last_budget_(sim.now()) {
  pid_ = sim_.spawn_process(cfg_.name);
  for (auto& t : shards) {
    Shard s;
    s.target = t;
    s.data = std::make_unique<Part>(cfg_.max_delay_ms);
    s.data->path = t.data_path;
    s.index = std::make_unique<Part>(cfg_.max_delay_ms);
    s.index->path = t.index_path;
    shards_.push_back(std::move(s));
  }
  attach_poller();
}

void Consumer::attach_poller() {
  subs_.clear();
  poller_ = std::make_unique<file::MetadataPoller>(
      sim_, *rt_.meta, *rt_.durable, pid_,
      file::MetadataPoller::Config{cfg_.poll_ms, 1000});
  for (auto& s : shards_) {
    // Subscriptions only pin the paths into the poll set; reads pull the
    // merged view via current().
    subs_.push_back(poller_->subscribe(s.target.data_path,
                                       [](const file::FileMeta&) {}));
    subs_.push_back(poller_->subscribe(s.target.index_path,
                                       [](const file::FileMeta&) {}));
  }
  poller_->set_cycle_hook([this] { on_cycle(); });
}

void Consumer::retarget(hop::ClusterRuntime rt, int cluster_id) {
  rt_ = rt;
  cluster_id_ = cluster_id;
  attach_poller();
}

bool Consumer::caught_up(const Monitor& m) const {
  for (const auto& s : shards_) {
    if (s.data->pos < m.produced_len(s.target.data_path)) return false;
    if (s.index->pos < m.produced_len(s.target.index_path)) return false;
    if (!s.frames.empty()) return false;
  }
  return true;
}

void Consumer::on_cycle() {
  if (cfg_.rate_cap_bps > 0) {
    sim::TimeMs now = sim_.now();
    budget_x8000_ = std::min(budget_x8000_ + cfg_.rate_cap_bps *
                                                 (now - last_budget_),
                             cfg_.rate_cap_bps * 1000);  // 1 s burst bucket
    last_budget_ = now;
  }
  for (auto& s : shards_) {
    maybe_read(s, *s.data);
    maybe_read(s, *s.index);
  }
}

void Consumer::maybe_read(Shard& s, Part& part) {
  sim::TimeMs now = sim_.now();
  if (part.inflight || now < part.retry_at) return;
  file::FileMeta meta = poller_->current(part.path);
  int64_t known = std::max(meta.cache_len, meta.durable_len);
  if (known <= part.pos) return;
  // The policy clock runs on every cycle where bytes are owed, so a cache
  // that stays behind the durable log eventually forces a durable read.
  bool durable_only =
      part.policy.should_read_durable(meta.cache_len, meta.durable_len, now);
  int64_t target = durable_only ? meta.durable_len : meta.cache_len;
  if (target <= part.pos) return;  // waiting out the cache's lag
  int64_t len = std::min(target - part.pos, cfg_.max_read_bytes);
  if (cfg_.rate_cap_bps > 0) {
    len = std::min(len, budget_x8000_ / 8000);
    if (len <= 0) return;
    budget_x8000_ -= len * 8000;
  }
  part.inflight = true;
  file::RangeReadOptions opts{cfg_.geom, cfg_.hedge_ms, cfg_.phase_timeout_ms,
                              durable_only};
  Shard* sp = &s;
  Part* pp = &part;
  file::start_range_read(sim_, *rt_.data, *rt_.durable, part.path, part.pos,
                         len, meta, opts, pid_,
                         [this, sp, pp, len, d = meta.durable_len](
                             file::RangeReadResult r) {
                           on_read_done(*sp, *pp, len, d, std::move(r));
                         });
}

void Consumer::on_read_done(Shard& s, Part& part, int64_t asked,
                            int64_t durable_known, file::RangeReadResult r) {
  sim::TimeMs now = sim_.now();
  part.inflight = false;
  int64_t got = static_cast<int64_t>(r.bytes.size());
  if (cfg_.rate_cap_bps > 0 && got < asked) {
    budget_x8000_ += (asked - got) * 8000;  // refund the unread tail
  }
  if (r.throttled) part.retry_at = now + r.retry_after_ms;

  metrics_.consumer_read(cluster_id_, now, r.durable_chunks > 0,
                         r.bytes_from_durable, r.bytes_from_cache,
                         r.durable_bytes, r.hedged, r.escalated, r.throttled);
  if (got == 0) {
    // Zero progress on a range the durable log claimed to cover is a real
    // serving failure; plain cache lag is not.
    if (!r.throttled && part.pos < durable_known) {
      metrics_.read_failure(cluster_id_);
    }
    return;
  }

  if (!monitor_.observe(part.path, part.pos, r.bytes, now, cfg_.name)) {
    return;  // keep positions frozen at the violation point
  }
  part.pos += got;
  consumed_bytes_ += got;
  if (&part == s.index.get()) {
    s.index_tail.append(r.bytes);
    size_t off = 0;
    while (s.index_tail.size() - off >= file::kIndexRecordSize) {
      s.frames.push_back(file::decode_index_record(
          std::string_view(s.index_tail).substr(off, file::kIndexRecordSize)));
      off += file::kIndexRecordSize;
    }
    s.index_tail.erase(0, off);
  }
  pump_emissions(s);
}

void Consumer::pump_emissions(Shard& s) {
  sim::TimeMs now = sim_.now();
  while (!s.frames.empty()) {
    const auto& rec = s.frames.front();
    int64_t end = static_cast<int64_t>(rec.data_offset) + rec.data_len;
    if (end > s.data->pos) break;  // data bytes not here yet
    monitor_.emit(cfg_.name, s.target.data_path, rec.seq, now);
    metrics_.delivery_delay(cluster_id_, now,
                            now - static_cast<sim::TimeMs>(rec.produce_time_ms));
    metrics_.message_delivered(cluster_id_);
    emitted_++;
    s.frames.pop_front();
  }
}

}  // namespace tailcopy::harness
