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
#include "tailcopy/harness/producer.hpp"

#include <algorithm>
#include <cassert>

#include "tailcopy/file/codec.hpp"

namespace tailcopy::harness {

Producer::Producer(sim::Sim& sim, hop::ClusterRuntime source, int cluster_id,
                   Config cfg, uint64_t payload_seed, Monitor& monitor,
                   Metrics& metrics,
                   std::function<void(const std::string&)> notify)
    : sim_(sim),
      src_(source),
      cluster_id_(cluster_id),
      cfg_(std::move(cfg)),
      monitor_(monitor),
      metrics_(metrics),
      notify_(std::move(notify)),
      payload_rng_(payload_seed),
      last_accrual_(cfg_.start_ms) {
  pid_ = sim_.spawn_process("producer/" + cfg_.stream + "/" +
                            std::to_string(cfg_.shard));
  data_handle_ = src_.durable->open_writer_now(cfg_.data_path);
  index_handle_ = src_.durable->open_writer_now(cfg_.index_path);
  versions_ = std::make_unique<cache::VersionSource>(sim_.next_uid());
  file::ChunkAssembler::Config acfg{cfg_.geom, cfg_.retry_ms};
  data_chunks_ = std::make_unique<file::ChunkAssembler>(
      sim_, *src_.data, cfg_.data_path, acfg, *versions_, pid_, 0,
      [this](int64_t f) { on_data_advance(f); });
  index_chunks_ = std::make_unique<file::ChunkAssembler>(
      sim_, *src_.data, cfg_.index_path, acfg, *versions_, pid_, 0,
      [this](int64_t f) { on_index_advance(f); });
  data_meta_ = std::make_unique<file::MetaPublisher>(
      sim_, *src_.meta, cfg_.data_path, pid_, cfg_.retry_ms);
  index_meta_ = std::make_unique<file::MetaPublisher>(
      sim_, *src_.meta, cfg_.index_path, pid_, cfg_.retry_ms);
  accrued_since_ = cfg_.start_ms;
  sim_.schedule_on(pid_, cfg_.start_ms - sim_.now() + cfg_.buffer_ms,
                   [this] { flush_tick(); });
}

void Producer::resume() {
  // Owed bytes kept accruing; the next tick flushes the backlog with
  // produce times spread over the stopped window.
  running_ = true;
}

sim::TimeMs Producer::flushed_at(int64_t offset) const {
  if (offset <= 0) return -1;
  auto it = std::lower_bound(
      flush_points_.begin(), flush_points_.end(), offset,
      [](const auto& p, int64_t off) { return p.first < off; });
  return it == flush_points_.end() ? -1 : it->second;
}

bool Producer::drained() const {
  return data_chunks_->idle() && index_chunks_->idle() &&
         data_meta_->idle() && index_meta_->idle();
}

void Producer::arm() {
  sim_.schedule_on(pid_, cfg_.buffer_ms, [this] { flush_tick(); });
}

void Producer::flush_tick() {
  sim::TimeMs now = sim_.now();
  owed_x8000_ += cfg_.rate_bps * (now - last_accrual_);
  last_accrual_ = now;
  if (!running_) {
    arm();
    return;
  }
  const int64_t per_msg = 8000ll * cfg_.message_bytes;
  int64_t n = owed_x8000_ / per_msg;
  if (n == 0) {
    arm();
    return;
  }
  owed_x8000_ -= n * per_msg;

  std::string data_blob;
  std::string index_blob;
  data_blob.reserve(static_cast<size_t>(n) * cfg_.message_bytes);
  index_blob.reserve(static_cast<size_t>(n) * file::kIndexRecordSize);
  sim::TimeMs span = now - accrued_since_;
  for (int64_t i = 0; i < n; i++) {
    file::IndexRecord rec;
    rec.data_offset = static_cast<uint64_t>(produced_ +
                                            static_cast<int64_t>(data_blob.size()));
    rec.data_len = static_cast<uint32_t>(cfg_.message_bytes);
    rec.produce_time_ms =
        static_cast<uint64_t>(accrued_since_ + ((i + 1) * span) / n);
    rec.seq = seq_++;
    for (int b = 0; b < cfg_.message_bytes; b++) {
      data_blob.push_back(static_cast<char>('a' + payload_rng_.range(0, 25)));
    }
    index_blob.append(file::encode_index_record(rec));
  }
  accrued_since_ = now;

  // The oracle sees every byte before the system does.
  monitor_.record_produced(cfg_.data_path, data_blob);
  monitor_.record_produced(cfg_.index_path, index_blob);

  auto dres = src_.durable->append(data_handle_, data_blob);
  auto ires = src_.durable->append(index_handle_, index_blob);
  assert(dres.ok && ires.ok);  // nothing fences source-cluster files
  produced_ = dres.new_length;
  index_produced_ = ires.new_length;
  data_chunks_->feed(data_blob);
  index_chunks_->feed(index_blob);
  data_meta_->publish(-1, produced_);
  index_meta_->publish(-1, index_produced_);

  flush_points_.emplace_back(produced_, now);
  latency_pending_.emplace_back(produced_, now);

  if (!notified_once_) {
    notified_once_ = true;
    if (notify_) {
      notify_(cfg_.data_path);
      notify_(cfg_.index_path);
    }
    sim_.schedule_on(pid_, cfg_.notify_ms, [this] { notify_tick(); });
  }
  arm();
}

void Producer::notify_tick() {
  // Standing re-announcement so a restarted source scheduler relearns its
  // files without waiting for new production.
  if (notify_) {
    notify_(cfg_.data_path);
    notify_(cfg_.index_path);
  }
  sim_.schedule_on(pid_, cfg_.notify_ms, [this] { notify_tick(); });
}

void Producer::on_data_advance(int64_t frontier) {
  data_meta_->publish(frontier, -1);
  while (!latency_pending_.empty() &&
         latency_pending_.front().first <= frontier) {
    metrics_.write_latency(cluster_id_,
                           sim_.now() - latency_pending_.front().second);
    latency_pending_.pop_front();
  }
}

void Producer::on_index_advance(int64_t frontier) {
  index_meta_->publish(frontier, -1);
}

}  // namespace tailcopy::harness
