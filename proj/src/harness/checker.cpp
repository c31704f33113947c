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
#include "tailcopy/harness/checker.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <map>
#include <random>
#include <unordered_set>
#include <utility>

#include "tailcopy/common/hash.hpp"

namespace tailcopy::harness::checker {
namespace {

struct Put {
  int chunk;
  int64_t span_start;  // coverage this put contributes once acked
  int64_t span_end;
  std::string value;  // readers place it at the chunk start
  uint32_t version;
  bool acked = false;
};

struct MetaWrite {
  int64_t value;
  uint32_t version;
};

struct CacheVal {
  std::string value;
  uint32_t version;
};

struct Writer {
  int64_t base = 0;  // prefix it believes was covered before it started
  int64_t fed = 0;
  int64_t issued_end = 0;
  int64_t last_publish = 0;
  uint32_t counter = 0;
  std::vector<Put> puts;  // issue order; spans are contiguous
  std::deque<MetaWrite> pending_meta;
};

struct State {
  ModelConfig cfg;
  int64_t total;
  std::string produced;
  int64_t durable_len = 0;
  std::vector<Writer> writers;
  std::map<int, CacheVal> cache;
  int64_t published_len = 0;
  uint32_t published_version = 0;

  bool byte_violation = false;
  bool publish_violation = false;
  std::string violation_text;
  int64_t last_read_len = -1;

  explicit State(const ModelConfig& c) : cfg(c) {
    total = static_cast<int64_t>(cfg.n_chunks) * cfg.chunk_bytes;
    produced.reserve(total);
    // Cyclic alphabet: any shifted read of it mismatches, chunks being
    // far shorter than the cycle.
    for (int64_t i = 0; i < total; i++) {
      produced += static_cast<char>('a' + i % 26);
    }
    writers.resize(cfg.cache_writers);
    if (cfg.mutation == Mutation::kPartialFromPosition) {
      Writer& m = writers[mutant()];
      m.base = cfg.chunk_bytes / 2;  // resumes mid-chunk
      m.fed = m.base;
      m.issued_end = m.base;
      m.last_publish = 0;
    }
  }

  int mutant() const {
    return cfg.mutation == Mutation::kNone ? -1 : cfg.cache_writers - 1;
  }

  uint32_t next_version(int w) {
    return (static_cast<uint32_t>(w + 1) << 16) | ++writers[w].counter;
  }

  int64_t acked_end(int w) const {
    const Writer& wr = writers[w];
    int64_t end = wr.base;
    for (const Put& p : wr.puts) {
      if (!p.acked || p.span_start != end) break;
      end = p.span_end;
    }
    return end;
  }

  int64_t publish_value(int w) const {
    if (cfg.mutation == Mutation::kEarlyPointer && w == mutant()) {
      return writers[w].issued_end;  // runs ahead of acks
    }
    return acked_end(w);
  }

  bool quiesced() const {
    if (durable_len < total) return false;
    for (int w = 0; w < cfg.cache_writers; w++) {
      const Writer& wr = writers[w];
      if (wr.fed < total || wr.issued_end < wr.fed) return false;
      for (const Put& p : wr.puts) {
        if (!p.acked) return false;
      }
      if (!wr.pending_meta.empty()) return false;
      if (publish_value(w) > wr.last_publish) return false;
    }
    return true;
  }

  void enabled(std::vector<Act>& out, bool progress_only) const {
    out.clear();
    if (durable_len < total) out.push_back({ActKind::kDurableAppend});
    for (int8_t w = 0; w < cfg.cache_writers; w++) {
      const Writer& wr = writers[w];
      if (wr.fed < total) out.push_back({ActKind::kFeed, w});
      if (wr.issued_end < wr.fed) out.push_back({ActKind::kIssuePut, w});
      for (size_t i = 0; i < wr.puts.size(); i++) {
        if (!wr.puts[i].acked) {
          out.push_back({ActKind::kApplyPut, w, static_cast<int16_t>(i)});
        }
      }
      if (publish_value(w) > wr.last_publish) {
        out.push_back({ActKind::kIssuePublish, w});
      }
      if (!wr.pending_meta.empty()) out.push_back({ActKind::kApplyPublish, w});
    }
    if (!progress_only) {
      for (const auto& [c, v] : cache) {
        out.push_back({ActKind::kEvict, -1, static_cast<int16_t>(c)});
      }
      out.push_back({ActKind::kRead});
    }
  }

  bool act_enabled(const Act& a) const {
    const int W = cfg.cache_writers;
    switch (a.kind) {
      case ActKind::kDurableAppend:
        return durable_len < total;
      case ActKind::kFeed:
        return a.writer >= 0 && a.writer < W && writers[a.writer].fed < total;
      case ActKind::kIssuePut:
        return a.writer >= 0 && a.writer < W &&
               writers[a.writer].issued_end < writers[a.writer].fed;
      case ActKind::kApplyPut:
        return a.writer >= 0 && a.writer < W && a.arg >= 0 &&
               a.arg < static_cast<int16_t>(writers[a.writer].puts.size()) &&
               !writers[a.writer].puts[a.arg].acked;
      case ActKind::kIssuePublish:
        return a.writer >= 0 && a.writer < W &&
               publish_value(a.writer) > writers[a.writer].last_publish;
      case ActKind::kApplyPublish:
        return a.writer >= 0 && a.writer < W &&
               !writers[a.writer].pending_meta.empty();
      case ActKind::kEvict:
        return cache.count(a.arg) > 0;
      case ActKind::kRead:
        return true;
    }
    return false;
  }

  void apply(const Act& a) {
    switch (a.kind) {
      case ActKind::kDurableAppend:
        durable_len++;
        break;
      case ActKind::kFeed:
        writers[a.writer].fed++;
        break;
      case ActKind::kIssuePut: {
        Writer& wr = writers[a.writer];
        int c = static_cast<int>(wr.issued_end / cfg.chunk_bytes);
        int64_t cb = static_cast<int64_t>(c) * cfg.chunk_bytes;
        int64_t e = std::min(cb + cfg.chunk_bytes, wr.fed);
        // The seeded bug: a mid-chunk starter assembles the chunk from
        // its own base, so the value misses the chunk head yet still
        // lands at the chunk start.
        int64_t vstart = std::max(cb, wr.base);
        Put p;
        p.chunk = c;
        p.span_start = wr.issued_end;
        p.span_end = e;
        p.value = produced.substr(vstart, e - vstart);
        p.version = next_version(a.writer);
        wr.puts.push_back(std::move(p));
        wr.issued_end = e;
        break;
      }
      case ActKind::kApplyPut: {
        Put& p = writers[a.writer].puts[a.arg];
        p.acked = true;
        auto it = cache.find(p.chunk);
        if (it == cache.end() || p.version > it->second.version) {
          cache[p.chunk] = {p.value, p.version};
        }
        break;
      }
      case ActKind::kIssuePublish: {
        Writer& wr = writers[a.writer];
        int64_t v = publish_value(a.writer);
        if (v > acked_end(a.writer) && !publish_violation) {
          publish_violation = true;
          violation_text = "writer " + std::to_string(a.writer) +
                           " published len=" + std::to_string(v) +
                           " beyond acked=" +
                           std::to_string(acked_end(a.writer));
        }
        wr.pending_meta.push_back({v, next_version(a.writer)});
        wr.last_publish = v;
        break;
      }
      case ActKind::kApplyPublish: {
        Writer& wr = writers[a.writer];
        MetaWrite m = wr.pending_meta.front();
        wr.pending_meta.pop_front();
        if (m.version > published_version) {
          published_version = m.version;
          published_len = m.value;  // a stale snapshot may regress it
        }
        break;
      }
      case ActKind::kEvict:
        cache.erase(a.arg);
        break;
      case ActKind::kRead:
        do_read();
        break;
    }
  }

  /// The production read rule: cache inside the published prefix with
  /// per-byte durable fallback, durable beyond it, stop at a hole.
  void do_read() {
    int64_t got = 0;
    for (int64_t i = 0; i < total; i++) {
      char b;
      if (i < published_len) {
        int c = static_cast<int>(i / cfg.chunk_bytes);
        int64_t off = i - static_cast<int64_t>(c) * cfg.chunk_bytes;
        auto it = cache.find(c);
        if (it != cache.end() &&
            off < static_cast<int64_t>(it->second.value.size())) {
          b = it->second.value[off];
        } else if (i < durable_len) {
          b = produced[i];
        } else {
          break;
        }
      } else if (i < durable_len) {
        b = produced[i];
      } else {
        break;
      }
      if (b != produced[i] && !byte_violation) {
        byte_violation = true;
        violation_text = "read byte " + std::to_string(i) + " got '" +
                         std::string(1, b) + "' want '" +
                         std::string(1, produced[i]) + "'";
      }
      got++;
    }
    last_read_len = got;
  }

  bool violated() const { return byte_violation || publish_violation; }

  std::string serialize() const {
    std::string s;
    s.reserve(256);
    auto num = [&s](int64_t v) {
      s += std::to_string(v);
      s += ',';
    };
    num(durable_len);
    num(published_len);
    num(published_version);
    for (const auto& [c, v] : cache) {
      num(c);
      num(v.version);
      num(static_cast<int64_t>(v.value.size()));
      s += v.value;
      s += ';';
    }
    s += '|';
    for (const Writer& w : writers) {
      num(w.fed);
      num(w.issued_end);
      num(w.last_publish);
      num(w.counter);
      for (const Put& p : w.puts) {
        num(p.chunk);
        num(p.span_start);
        num(p.span_end);
        num(p.version);
        num(p.acked ? 1 : 0);
      }
      s += '/';
      for (const MetaWrite& m : w.pending_meta) {
        num(m.value);
        num(m.version);
      }
      s += '|';
    }
    return s;
  }
};

const char* act_name(ActKind k) {
  switch (k) {
    case ActKind::kDurableAppend:
      return "durable-append";
    case ActKind::kFeed:
      return "feed";
    case ActKind::kIssuePut:
      return "issue-put";
    case ActKind::kApplyPut:
      return "apply-put";
    case ActKind::kIssuePublish:
      return "issue-publish";
    case ActKind::kApplyPublish:
      return "apply-publish";
    case ActKind::kEvict:
      return "evict";
    case ActKind::kRead:
      return "read";
  }
  return "?";
}

std::string render(const std::vector<Act>& trace, const ModelConfig& cfg) {
  std::string out;
  State s(cfg);
  int n = 0;
  for (const Act& a : trace) {
    out += std::to_string(++n);
    out += ". ";
    out += act_name(a.kind);
    if (a.writer >= 0) out += " w" + std::to_string(a.writer);
    if (a.arg >= 0) out += " #" + std::to_string(a.arg);
    s.apply(a);
    if (s.violated() && !s.violation_text.empty()) {
      out += "   <-- " + s.violation_text;
      s.violation_text.clear();
    }
    out += '\n';
  }
  return out;
}

bool replay_violates(const ModelConfig& cfg, const std::vector<Act>& trace) {
  State s(cfg);
  for (const Act& a : trace) {
    if (!s.act_enabled(a)) return false;
    s.apply(a);
  }
  return s.violated();
}

std::vector<Act> minimize(const ModelConfig& cfg, std::vector<Act> trace) {
  bool improved = true;
  while (improved) {
    improved = false;
    for (size_t i = 0; i < trace.size(); i++) {
      std::vector<Act> cand;
      cand.reserve(trace.size() - 1);
      for (size_t j = 0; j < trace.size(); j++) {
        if (j != i) cand.push_back(trace[j]);
      }
      if (replay_violates(cfg, cand)) {
        trace = std::move(cand);
        improved = true;
        break;
      }
    }
  }
  return trace;
}

}  // namespace

TrialStats run_trials(const ModelConfig& cfg, uint64_t seed, int64_t trials) {
  TrialStats st;
  std::vector<Act> acts;
  for (int64_t t = 0; t < trials; t++) {
    State s(cfg);
    std::mt19937_64 rng(common::fnv1a64_u64(seed, static_cast<uint64_t>(t)));
    std::vector<Act> trace;
    st.trials++;
    int guard = 0;
    while (!s.quiesced() && guard++ < 100000) {
      s.enabled(acts, false);
      const Act& a = acts[rng() % acts.size()];
      s.apply(a);
      trace.push_back(a);
      st.steps++;
      if (a.kind == ActKind::kRead) st.reads++;
      if (s.violated()) break;
    }
    if (!s.violated()) {
      s.apply({ActKind::kRead});
      trace.push_back({ActKind::kRead});
      st.reads++;
      st.steps++;
      if (s.last_read_len != s.total) st.termination_failures++;
    }
    if (s.byte_violation) st.byte_violation_trials++;
    if (s.publish_violation) st.publish_violation_trials++;
    if (s.violated() && st.counterexample.empty()) {
      st.counterexample = minimize(cfg, trace);
      st.counterexample_text = render(st.counterexample, cfg);
    }
  }
  return st;
}

ExhaustiveStats run_exhaustive(const ModelConfig& cfg, int64_t max_states) {
  ExhaustiveStats ex;
  ex.ok = true;
  std::unordered_set<uint64_t> seen;
  std::vector<State> stack;
  std::vector<Act> acts;
  State init(cfg);
  init.do_read();
  if (init.violated()) {
    ex.ok = false;
    return ex;
  }
  seen.insert(common::fnv1a64(init.serialize()));
  ex.states = 1;
  stack.push_back(std::move(init));
  while (!stack.empty()) {
    State s = std::move(stack.back());
    stack.pop_back();
    s.enabled(acts, false);
    bool progress = false;
    for (const Act& a : acts) {
      if (a.kind == ActKind::kRead) continue;  // reads are pure; see below
      progress = progress || (a.kind != ActKind::kEvict);
      State t = s;
      t.apply(a);
      ex.transitions++;
      // Safety holds in every state iff every possible read is clean;
      // a full read subsumes the shorter ones.
      t.do_read();
      if (t.violated()) {
        ex.ok = false;
        return ex;
      }
      if (seen.insert(common::fnv1a64(t.serialize())).second) {
        ex.states++;
        if (ex.states >= max_states) return ex;  // complete stays false
        stack.push_back(std::move(t));
      }
    }
    if (!progress && s.last_read_len >= 0 && s.last_read_len != s.total &&
        s.quiesced()) {
      ex.ok = false;  // terminal state that cannot serve every byte
      return ex;
    }
  }
  ex.complete = true;
  return ex;
}

}  // namespace tailcopy::harness::checker
