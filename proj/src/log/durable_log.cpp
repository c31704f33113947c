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
#include "tailcopy/log/durable_log.hpp"

#include <cassert>
#include <fstream>

#include "json.hpp"

namespace tailcopy::log {

void DurableLog::open_writer(const std::string& path, sim::Pid owner,
                             std::function<void(Handle)> cb) {
  auto work = [this, path, cb = std::move(cb)] {
    cb(open_writer_now(path));
  };
  if (owner.assigned()) {
    sim_.schedule_on(owner, cfg_.open_cost_ms, std::move(work));
  } else {
    sim_.schedule(cfg_.open_cost_ms, std::move(work));
  }
}

DurableLog::Handle DurableLog::open_writer_now(const std::string& path) {
  File& f = file(path);
  f.writer_epoch++;
  return Handle{path, f.writer_epoch};
}

DurableLog::AppendResult DurableLog::append(const Handle& h,
                                            std::string_view bytes) {
  assert(!bytes.empty());
  auto it = files_.find(h.path);
  if (it == files_.end() || it->second.writer_epoch != h.epoch) {
    return {false, 0};  // fenced by a later open; nothing mutated
  }
  it->second.bytes.append(bytes);
  stats_.appends++;
  stats_.bytes_appended += static_cast<int64_t>(bytes.size());
  return {true, static_cast<int64_t>(it->second.bytes.size())};
}

void DurableLog::read(const std::string& path, int64_t offset, int64_t len,
                      sim::Pid owner, std::function<void(ReadResult)> cb) {
  ReadResult r = read_sync(path, offset, len);
  // A throttled read is rejected up front, before any IO happens.
  sim::TimeMs delay = r.throttled ? 0 : cfg_.read_cost_ms;
  auto work = [r = std::move(r), cb = std::move(cb)]() mutable {
    cb(std::move(r));
  };
  if (owner.assigned()) {
    sim_.schedule_on(owner, delay, std::move(work));
  } else {
    sim_.schedule(delay, std::move(work));
  }
}

DurableLog::ReadResult DurableLog::read_sync(const std::string& path,
                                             int64_t offset, int64_t len) {
  assert(offset >= 0 && len >= 0);
  roll_throttle_window();

  auto it = files_.find(path);
  int64_t file_len =
      it == files_.end() ? 0 : static_cast<int64_t>(it->second.bytes.size());
  int64_t take = std::min(len, std::max<int64_t>(0, file_len - offset));

  if ((cfg_.max_reads_per_s > 0 && window_reads_ + 1 > cfg_.max_reads_per_s) ||
      (cfg_.max_read_bytes_per_s > 0 &&
       window_bytes_ + take > cfg_.max_read_bytes_per_s)) {
    stats_.reads_throttled++;
    ReadResult r;
    r.throttled = true;
    r.retry_after_ms = window_start_ + 1000 - sim_.now();
    return r;
  }

  window_reads_++;
  window_bytes_ += take;
  stats_.reads++;
  stats_.bytes_read += take;

  ReadResult r;
  r.ok = true;
  if (take > 0) r.bytes = it->second.bytes.substr(offset, take);
  return r;
}

int64_t DurableLog::poll_length(const std::string& path) const {
  auto it = files_.find(path);
  return it == files_.end() ? 0 : static_cast<int64_t>(it->second.bytes.size());
}

bool DurableLog::handle_stale(const Handle& h) const {
  auto it = files_.find(h.path);
  return it == files_.end() || it->second.writer_epoch != h.epoch;
}

std::vector<std::string> DurableLog::paths() const {
  std::vector<std::string> out;
  out.reserve(files_.size());
  for (const auto& [path, f] : files_) out.push_back(path);
  return out;
}

void DurableLog::roll_throttle_window() {
  sim::TimeMs start = sim_.now() - sim_.now() % 1000;
  if (start != window_start_) {
    window_start_ = start;
    window_reads_ = 0;
    window_bytes_ = 0;
  }
}

void DurableLog::save_snapshot(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::object();
  int idx = 0;
  for (const auto& [path, f] : files_) {
    std::string name = "f" + std::to_string(idx++) + ".bin";
    std::ofstream out(dir / name, std::ios::binary);
    out.write(f.bytes.data(), static_cast<std::streamsize>(f.bytes.size()));
    manifest[path] = {{"file", name},
                      {"length", f.bytes.size()},
                      {"writer_epoch", f.writer_epoch}};
  }
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

void DurableLog::load_snapshot(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(mf);
  files_.clear();
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    File f;
    std::ifstream in(dir / it.value()["file"].get<std::string>(),
                     std::ios::binary);
    std::size_t length = it.value()["length"].get<std::size_t>();
    f.bytes.resize(length);
    in.read(f.bytes.data(), static_cast<std::streamsize>(length));
    f.writer_epoch = it.value()["writer_epoch"].get<uint64_t>();
    files_[it.key()] = std::move(f);
  }
}

}  // namespace tailcopy::log
