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
#include <cstring>
#include <string>
#include <string_view>

#include "tailcopy/common/hash.hpp"
#include "tailcopy/sim/sim.hpp"

namespace tailcopy::cache {

/// Cache keys are fixed-width digests. Chunk keys hash the file path plus
/// the chunk sequence number; metadata and lock records hash the path plus
/// a record kind, giving each file exactly two metadata-cache keys.
struct Key {
  uint64_t digest = 0;
  bool operator==(const Key&) const = default;
  auto operator<=>(const Key&) const = default;
};

// Record-kind tags carry a leading NUL (no path can collide with them),
// so they must be sized explicitly: a bare literal would decay to an
// empty string_view and all three key kinds would alias.
inline constexpr std::string_view kChunkTag{"\x00#", 2};
inline constexpr std::string_view kMetaTag{"\x00meta", 5};
inline constexpr std::string_view kLockTag{"\x00lock", 5};

inline Key chunk_key(std::string_view path, int64_t seq) {
  uint64_t h = common::fnv1a64(path);
  h = common::fnv1a64(kChunkTag, h);
  return Key{common::fnv1a64_u64(static_cast<uint64_t>(seq), h)};
}

inline Key meta_key(std::string_view path) {
  return Key{common::fnv1a64(kMetaTag, common::fnv1a64(path))};
}

inline Key lock_key(std::string_view path) {
  return Key{common::fnv1a64(kLockTag, common::fnv1a64(path))};
}

struct Value {
  std::string bytes;
  uint64_t version = 0;
  sim::TimeMs written_at = 0;
};

/// Hands out versions for one writer instance. The epoch (allocated from
/// the sim's global counter when the writer starts) occupies the high bits,
/// so a later-started writer always outversions an earlier one: its puts
/// clobber the older writer's values even when the older writer has issued
/// more of them. Low bits keep one writer's own puts ordered.
class VersionSource {
 public:
  explicit VersionSource(uint64_t epoch) : epoch_(epoch) {}
  uint64_t next() {
    assert(counter_ < (1ull << 24));
    return (epoch_ << 24) | ++counter_;
  }
  uint64_t epoch() const { return epoch_; }

 private:
  uint64_t epoch_;
  uint64_t counter_ = 0;
};

/// Lock owner identity: the hosting worker plus a nonce unique to one
/// operation instance, so two incarnations of the same worker never pass
/// for each other.
struct LockSig {
  uint64_t owner_id = 0;
  uint64_t nonce = 0;
  bool operator==(const LockSig&) const = default;
};

struct LockRecord {
  LockSig sig;
  bool poisoned = false;
  bool released = false;
  sim::TimeMs acquired_at = 0;
};

inline std::string encode_lock(const LockRecord& r) {
  std::string out(26, '\0');
  auto put64 = [&](size_t at, uint64_t v) {
    for (int i = 0; i < 8; i++) out[at + i] = static_cast<char>((v >> (i * 8)) & 0xff);
  };
  put64(0, r.sig.owner_id);
  put64(8, r.sig.nonce);
  out[16] = r.poisoned ? 1 : 0;
  out[17] = r.released ? 1 : 0;
  put64(18, static_cast<uint64_t>(r.acquired_at));
  return out;
}

inline LockRecord decode_lock(std::string_view bytes) {
  assert(bytes.size() == 26);
  auto get64 = [&](size_t at) {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (i * 8);
    return v;
  };
  LockRecord r;
  r.sig.owner_id = get64(0);
  r.sig.nonce = get64(8);
  r.poisoned = bytes[16] != 0;
  r.released = bytes[17] != 0;
  r.acquired_at = static_cast<sim::TimeMs>(get64(18));
  return r;
}

}  // namespace tailcopy::cache
