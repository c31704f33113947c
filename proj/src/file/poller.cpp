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
#include "tailcopy/file/poller.hpp"

#include <algorithm>
#include <vector>

namespace tailcopy::file {

MetadataPoller::MetadataPoller(sim::Sim& sim, cache::Instance& meta_cache,
                               log::DurableLog& durable, sim::Pid owner,
                               Config cfg)
    : sim_(sim),
      meta_cache_(meta_cache),
      durable_(durable),
      owner_(owner),
      cfg_(cfg) {
  // Phase jitter so co-started pollers spread over the cycle instead of
  // hitting the metadata replicas in lockstep.
  sim_.schedule_on(owner_, sim_.rng().pick(static_cast<uint64_t>(cfg_.poll_ms)),
                   [this] { cycle(); });
  sim_.schedule_on(owner_,
                   sim_.rng().pick(static_cast<uint64_t>(cfg_.durable_poll_ms)),
                   [this] { durable_cycle(); });
}

MetadataPoller::SubId MetadataPoller::subscribe(
    const std::string& path, std::function<void(const FileMeta&)> cb) {
  paths_[path].refs++;
  SubId id = next_sub_++;
  subs_[id] = {path, std::move(cb)};
  return id;
}

void MetadataPoller::unsubscribe(SubId id) {
  auto it = subs_.find(id);
  if (it == subs_.end()) return;
  auto pit = paths_.find(it->second.first);
  if (pit != paths_.end() && --pit->second.refs == 0) paths_.erase(pit);
  subs_.erase(it);
}

FileMeta MetadataPoller::current(const std::string& path) const {
  auto it = paths_.find(path);
  return it == paths_.end() ? FileMeta{} : it->second.merged;
}

void MetadataPoller::arm() {
  sim_.schedule_on(owner_, cfg_.poll_ms, [this] { cycle(); });
}

void MetadataPoller::arm_durable() {
  sim_.schedule_on(owner_, cfg_.durable_poll_ms, [this] { durable_cycle(); });
}

void MetadataPoller::cycle() {
  cycles_++;
  if (paths_.empty()) {
    if (hook_) hook_();
    arm();
    return;
  }
  std::vector<std::string> order;
  std::vector<cache::Key> keys;
  order.reserve(paths_.size());
  keys.reserve(paths_.size());
  for (auto& [path, st] : paths_) {
    order.push_back(path);
    keys.push_back(cache::meta_key(path));
  }
  meta_cache_.bulk_get_consistent(
      keys, owner_,
      [this, order](const std::vector<cache::Instance::GetResult>& rs) {
        bool any_error = false;
        for (size_t i = 0; i < rs.size(); ++i) {
          auto pit = paths_.find(order[i]);
          if (pit == paths_.end()) continue;  // unsubscribed mid-flight
          PathState& st = pit->second;
          if (rs[i].status == cache::Instance::Status::kHit &&
              rs[i].value.bytes.size() == kFileMetaSize) {
            FileMeta rec = decode_file_meta(rs[i].value.bytes);
            st.merged.cache_len = rec.cache_len;
            st.merged.durable_len = std::max(
                {st.merged.durable_len, rec.durable_len, st.direct_durable_len});
          } else if (rs[i].status == cache::Instance::Status::kError) {
            any_error = true;  // keep last known lengths
          }
          // Miss: record not written yet; lengths stay as-is.
        }
        meta_ok_ = !any_error;
        for (auto& [id, sub] : subs_) {
          auto pit = paths_.find(sub.first);
          if (pit != paths_.end()) sub.second(pit->second.merged);
        }
        if (hook_) hook_();
        arm();
      });
}

void MetadataPoller::durable_cycle() {
  for (auto& [path, st] : paths_) {
    st.direct_durable_len = durable_.poll_length(path);
    st.merged.durable_len = std::max(st.merged.durable_len, st.direct_durable_len);
  }
  // When the metadata cache is down this is the only length source, so
  // subscribers must still hear about progress.
  if (!meta_ok_) {
    for (auto& [id, sub] : subs_) {
      auto pit = paths_.find(sub.first);
      if (pit != paths_.end()) sub.second(pit->second.merged);
    }
  }
  arm_durable();
}

}  // namespace tailcopy::file
