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
#include <vector>

namespace tailcopy::file {

struct Geometry {
  int64_t chunk_size = 4096;
};

/// In-chunk byte range [begin, end) of chunk `seq`.
struct ChunkRange {
  int64_t seq = 0;
  int64_t begin = 0;
  int64_t end = 0;
  bool operator==(const ChunkRange&) const = default;
};

inline int64_t chunk_seq(const Geometry& g, int64_t pos) {
  return pos / g.chunk_size;
}

inline int64_t chunk_floor(const Geometry& g, int64_t pos) {
  return pos - pos % g.chunk_size;
}

/// Covers [offset, offset+len) exactly, ascending, non-overlapping.
inline std::vector<ChunkRange> chunk_span(const Geometry& g, int64_t offset,
                                          int64_t len) {
  assert(offset >= 0 && len >= 0);
  std::vector<ChunkRange> out;
  int64_t pos = offset;
  const int64_t end = offset + len;
  while (pos < end) {
    int64_t seq = pos / g.chunk_size;
    int64_t begin = pos - seq * g.chunk_size;
    int64_t take = std::min(end - pos, g.chunk_size - begin);
    out.push_back({seq, begin, begin + take});
    pos += take;
  }
  return out;
}

/// How many bytes of chunk `seq` a cache file of length `cache_len` is
/// expected to hold: full below the boundary chunk, the remainder at it,
/// nothing past it.
inline int64_t expected_fill(const Geometry& g, int64_t cache_len,
                             int64_t seq) {
  int64_t boundary = cache_len / g.chunk_size;
  if (seq < boundary) return g.chunk_size;
  if (seq == boundary) return cache_len % g.chunk_size;
  return 0;
}

}  // namespace tailcopy::file
