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
#include "tailcopy/hop/scheduler.hpp"

#include <algorithm>
#include <cassert>
#include <sstream>

namespace tailcopy::hop {

namespace {
constexpr int64_t kAnnounceBytes = 128;
}

Scheduler::Scheduler(sim::Sim& sim, std::string name, SchedulerConfig cfg,
                     Env env)
    : sim_(sim), name_(std::move(name)), cfg_(cfg), env_(std::move(env)) {}

void Scheduler::start() {
  pid_ = sim_.spawn_process(name_);
  budget_ = cfg_.admissions_per_scan;
  arm_timers();
}

void Scheduler::kill() {
  // A crash takes the volatile assignment table with it. The ops keep
  // themselves alive through their own scheduled events and go orphaned.
  sim_.kill_process(pid_);
  slots_.clear();
  duplicates_.clear();
  files_.clear();
  queue_.clear();
}

void Scheduler::restart() {
  pid_ = sim_.restart_process(pid_);
  slots_.clear();
  duplicates_.clear();
  files_.clear();
  queue_.clear();
  budget_ = cfg_.admissions_per_scan;
  arm_timers();
  sim_.trace("sched", "event=restart sched=" + name_);
}

void Scheduler::arm_timers() {
  sim_.schedule_on(pid_, cfg_.scan_ms, [this]() { scan_tick(); });
  sim_.schedule_on(pid_, cfg_.balance_ms, [this]() { balance_tick(); });
  sim_.schedule_on(pid_, cfg_.heartbeat_ms, [this]() { heartbeat_tick(); });
  sim_.schedule_on(pid_, cfg_.announce_ms, [this]() { announce_tick(); });
}

void Scheduler::notify_produced(const std::string& path) {
  if (!files_.insert(path).second) return;  // idempotent
  sim_.trace("sched", "event=learn sched=" + name_ + " path=" + path);
  if (env_.has_upstream) {
    enqueue(SlotKey{path, false}, "start", false);
    enqueue(SlotKey{path, true}, "start", false);
    pump();
  }
  for (const auto& child : env_.children) send_announce(child, path);
}

void Scheduler::force_duplicate_assignment(const std::string& path,
                                           bool cache_op) {
  SlotKey key{path, cache_op};
  sim::Pid ex_writer, ex_reader;
  if (auto it = slots_.find(key); it != slots_.end() && it->second.op) {
    ex_writer = it->second.op->writer();
    ex_reader = it->second.op->reader();
  }
  sim::Pid writer = pick_least_loaded(*env_.writers, ex_writer);
  if (!writer.assigned()) writer = pick_least_loaded(*env_.writers, {});
  sim::Pid reader = pick_least_loaded(*env_.up_readers, ex_reader);
  if (!reader.assigned()) reader = pick_least_loaded(*env_.up_readers, {});
  if (!writer.assigned() || !reader.assigned()) return;
  auto op = make_op(key, reader, writer, /*duplicate=*/true);
  duplicates_.push_back(op);
  ++stats_.duplicates;
  std::ostringstream os;
  os << "event=assign sched=" << name_ << " path=" << key.path
     << " kind=" << (key.cache_op ? "cache" : "durable") << " op=" << op->uid()
     << " reader=" << sim_.process_name(reader)
     << " writer=" << sim_.process_name(writer) << " reason=duplicate";
  sim_.trace("sched", os.str());
  op->start();
}

void Scheduler::set_rate_limited(bool v) {
  rate_limited_ = v;
  for (auto& [key, slot] : slots_) {
    if (slot.op) slot.op->set_rate_limited(v);
  }
  for (auto& op : duplicates_) op->set_rate_limited(v);
}

bool Scheduler::all_caught_up() const {
  for (const auto& path : files_) {
    auto it = slots_.find(SlotKey{path, false});
    if (it == slots_.end() || !it->second.op) return false;
    if (it->second.op->state() == OpState::kDone) return false;
    if (!it->second.caught_up) return false;
  }
  return true;
}

std::shared_ptr<StreamOp> Scheduler::op_for(const std::string& path,
                                            bool cache_op) {
  auto it = slots_.find(SlotKey{path, cache_op});
  return it == slots_.end() ? nullptr : it->second.op;
}

int Scheduler::live_op_count() const {
  int n = 0;
  for (const auto& [key, slot] : slots_) {
    if (slot.op && slot.op->state() != OpState::kDone) n++;
  }
  for (const auto& op : duplicates_) {
    if (op->state() != OpState::kDone) n++;
  }
  return n;
}

int Scheduler::load_of(sim::Pid writer) const {
  int n = 0;
  for (const auto& [key, slot] : slots_) {
    if (slot.op && slot.op->state() != OpState::kDone &&
        slot.op->writer() == writer) {
      n++;
    }
  }
  for (const auto& op : duplicates_) {
    if (op->state() != OpState::kDone && op->writer() == writer) n++;
  }
  return n;
}

void Scheduler::scan_tick() {
  budget_ = cfg_.admissions_per_scan;
  for (auto& [key, slot] : slots_) {
    if (!slot.op || slot.op->state() == OpState::kDone) continue;
    if (sim_.alive(slot.op->reader()) && sim_.alive(slot.op->writer())) {
      continue;
    }
    slot.op->request_stop("worker-died");
    slot.epoch++;
    ++stats_.reschedules;
    enqueue(key, "reschedule", true);
  }
  duplicates_.erase(
      std::remove_if(duplicates_.begin(), duplicates_.end(),
                     [](const std::shared_ptr<StreamOp>& op) {
                       return op->state() == OpState::kDone;
                     }),
      duplicates_.end());
  pump();
  sim_.schedule_on(pid_, cfg_.scan_ms, [this]() { scan_tick(); });
}

void Scheduler::balance_tick() {
  int alive_writers = 0;
  int total = 0;
  for (sim::Pid w : *env_.writers) {
    if (!sim_.alive(w)) continue;
    alive_writers++;
    total += load_of(w);
  }
  if (alive_writers > 0) {
    double threshold =
        cfg_.imbalance_factor * static_cast<double>(total) / alive_writers;
    int sheds = 0;
    for (auto& [key, slot] : slots_) {
      if (sheds >= cfg_.max_sheds_per_balance) break;
      if (!slot.op || slot.op->state() == OpState::kDone) continue;
      int load = load_of(slot.op->writer());
      if (load <= 1 || static_cast<double>(load) <= threshold) continue;
      slot.op->request_stop("shed");
      slot.epoch++;
      ++stats_.sheds;
      ++sheds;
      enqueue(key, "shed-reassign", false);
    }
    if (sheds > 0) pump();
  }
  sim_.schedule_on(pid_, cfg_.balance_ms, [this]() { balance_tick(); });
}

void Scheduler::heartbeat_tick() {
  for (auto& [key, slot] : slots_) {
    if (slot.op) slot.op->heartbeat();
  }
  for (auto& op : duplicates_) op->heartbeat();
  sim_.schedule_on(pid_, cfg_.heartbeat_ms, [this]() { heartbeat_tick(); });
}

void Scheduler::announce_tick() {
  for (const auto& path : files_) {
    for (const auto& child : env_.children) send_announce(child, path);
  }
  sim_.schedule_on(pid_, cfg_.announce_ms, [this]() { announce_tick(); });
}

void Scheduler::send_announce(const Env::Child& child,
                              const std::string& path) {
  ++stats_.announces;
  Scheduler* cs = child.sched;
  sim_.send(child.link, cs->pid(), kAnnounceBytes,
            [cs, path]() { cs->notify_produced(path); });
}

void Scheduler::enqueue(SlotKey key, const char* reason, bool front) {
  if (front) {
    queue_.push_front(Pending{std::move(key), reason});
  } else {
    queue_.push_back(Pending{std::move(key), reason});
  }
}

void Scheduler::pump() {
  while (budget_ > 0 && !queue_.empty()) {
    Pending p = std::move(queue_.front());
    queue_.pop_front();
    Slot& slot = slots_[p.key];
    if (slot.op && slot.op->state() != OpState::kDone) continue;  // races
    sim::Pid reader = pick_least_loaded(*env_.up_readers, {});
    sim::Pid writer = pick_least_loaded(*env_.writers, {});
    if (!reader.assigned() || !writer.assigned()) {
      // No live worker; retry on a later scan.
      queue_.push_front(std::move(p));
      break;
    }
    start_instance(p.key, p.reason);
    --budget_;
  }
}

void Scheduler::start_instance(const SlotKey& key, const char* reason) {
  Slot& slot = slots_[key];
  sim::Pid reader = pick_least_loaded(*env_.up_readers, {});
  sim::Pid writer = pick_least_loaded(*env_.writers, {});
  auto op = make_op(key, reader, writer, /*duplicate=*/false);
  slot.op = op;
  slot.caught_up = false;
  slot.assigned_at = sim_.now();
  ++stats_.assigns;
  std::ostringstream os;
  os << "event=assign sched=" << name_ << " path=" << key.path
     << " kind=" << (key.cache_op ? "cache" : "durable") << " op=" << op->uid()
     << " reader=" << sim_.process_name(reader)
     << " writer=" << sim_.process_name(writer) << " epoch=" << slot.epoch
     << " reason=" << reason;
  sim_.trace("sched", os.str());
  op->start();
}

sim::Pid Scheduler::pick_least_loaded(const std::vector<sim::Pid>& pool,
                                      sim::Pid exclude) const {
  sim::Pid best;
  int best_load = 0;
  for (sim::Pid p : pool) {
    if (!sim_.alive(p)) continue;
    if (p == exclude) continue;
    int load = load_of(p);
    if (!best.assigned() || load < best_load) {
      best = p;
      best_load = load;
    }
  }
  return best;
}

std::shared_ptr<StreamOp> Scheduler::make_op(const SlotKey& key,
                                             sim::Pid reader, sim::Pid writer,
                                             bool duplicate) {
  LengthView view = [f = env_.up_lengths, reader,
                     path = key.path]() { return f(reader, path); };
  OpHooks hooks;
  if (!duplicate) {
    int epoch = slots_[key].epoch;
    hooks.on_failed = [this, key, epoch]() {
      sim_.schedule_on(pid_, cfg_.reschedule_delay_ms, [this, key, epoch]() {
        auto it = slots_.find(key);
        if (it == slots_.end() || it->second.epoch != epoch) return;
        it->second.epoch++;
        ++stats_.reschedules;
        enqueue(key, "reschedule", true);
        pump();
      });
    };
    hooks.on_superseded = [this, key]() {
      // A younger instance (possibly ours, possibly a duplicate or a
      // successor scheduler's) owns the stream now; nothing to do.
      sim_.trace("sched", "event=superseded sched=" + name_ +
                              " path=" + key.path);
    };
    if (!key.cache_op) {
      hooks.on_lag_change = [this, key, epoch](bool caught_up) {
        auto it = slots_.find(key);
        if (it == slots_.end() || it->second.epoch != epoch) return;
        it->second.caught_up = caught_up;
      };
    }
  }
  std::shared_ptr<StreamOp> op;
  if (key.cache_op) {
    op = std::make_shared<CacheStreamOp>(sim_, env_.up, env_.self,
                                         env_.up_link, key.path, cfg_.op,
                                         hooks, reader, writer, view);
  } else {
    op = std::make_shared<DurableStreamOp>(sim_, env_.up, env_.self,
                                           env_.up_link, key.path, cfg_.op,
                                           hooks, reader, writer, view);
  }
  op->set_rate_limited(rate_limited_);
  return op;
}

}  // namespace tailcopy::hop
