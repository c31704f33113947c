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

#include <cassert>
#include <cstdint>
#include <string>
#include <string_view>

namespace tailcopy::file {

namespace detail {
inline void put_le(std::string& out, uint64_t v, int bytes) {
  for (int i = 0; i < bytes; i++) {
    out.push_back(static_cast<char>((v >> (i * 8)) & 0xff));
  }
}
inline uint64_t get_le(std::string_view in, size_t at, int bytes) {
  uint64_t v = 0;
  for (int i = 0; i < bytes; i++) {
    v |= static_cast<uint64_t>(static_cast<unsigned char>(in[at + i]))
         << (i * 8);
  }
  return v;
}
}  // namespace detail

/// One fixed-width index-file record locating a message in the data file.
/// Little-endian on the wire; this layout is load-bearing for replay.
struct IndexRecord {
  uint64_t data_offset = 0;
  uint32_t data_len = 0;
  uint64_t produce_time_ms = 0;
  uint64_t seq = 0;
  bool operator==(const IndexRecord&) const = default;
};

inline constexpr size_t kIndexRecordSize = 8 + 4 + 8 + 8;

inline std::string encode_index_record(const IndexRecord& r) {
  std::string out;
  out.reserve(kIndexRecordSize);
  detail::put_le(out, r.data_offset, 8);
  detail::put_le(out, r.data_len, 4);
  detail::put_le(out, r.produce_time_ms, 8);
  detail::put_le(out, r.seq, 8);
  return out;
}

inline IndexRecord decode_index_record(std::string_view bytes) {
  assert(bytes.size() >= kIndexRecordSize);
  IndexRecord r;
  r.data_offset = detail::get_le(bytes, 0, 8);
  r.data_len = static_cast<uint32_t>(detail::get_le(bytes, 8, 4));
  r.produce_time_ms = detail::get_le(bytes, 12, 8);
  r.seq = detail::get_le(bytes, 20, 8);
  return r;
}

/// Per-file length record in the metadata cache. Both storage layers'
/// lengths live in one record; either may lead the other.
struct FileMeta {
  int64_t cache_len = 0;
  int64_t durable_len = 0;
  bool operator==(const FileMeta&) const = default;
};

inline constexpr size_t kFileMetaSize = 16;

inline std::string encode_file_meta(const FileMeta& m) {
  std::string out;
  out.reserve(kFileMetaSize);
  detail::put_le(out, static_cast<uint64_t>(m.cache_len), 8);
  detail::put_le(out, static_cast<uint64_t>(m.durable_len), 8);
  return out;
}

inline FileMeta decode_file_meta(std::string_view bytes) {
  assert(bytes.size() >= kFileMetaSize);
  FileMeta m;
  m.cache_len = static_cast<int64_t>(detail::get_le(bytes, 0, 8));
  m.durable_len = static_cast<int64_t>(detail::get_le(bytes, 8, 8));
  return m;
}

}  // namespace tailcopy::file
