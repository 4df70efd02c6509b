#include "core/scheduler.hpp"

#include <spdlog/spdlog.h>

namespace dpws {

Scheduler::Scheduler() : worker_([this] { run(); }) {}

Scheduler::~Scheduler() { stop(); }

void Scheduler::schedule_after(Clock::duration delay, Task task) {
  {
    std::lock_guard lock(mutex_);
    if (stopping_) return;
    queue_.push({Clock::now() + delay, next_seq_++, std::move(task)});
  }
  wake_.notify_one();
}

void Scheduler::every(Clock::duration period, Task task) {
  auto shared = std::make_shared<Task>(std::move(task));
  auto tick = std::make_shared<std::function<void()>>();
  std::weak_ptr<std::function<void()>> weak_tick = tick;
  *tick = [this, period, shared, weak_tick] {
    (*shared)();
    if (auto t = weak_tick.lock()) schedule_after(period, [t] { (*t)(); });
  };
  // The queued copy keeps `tick` alive between runs.
  schedule_after(period, [tick] { (*tick)(); });
}

void Scheduler::stop() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_ && !worker_.joinable()) return;
    stopping_ = true;
    queue_ = {};
  }
  wake_.notify_all();
  if (worker_.joinable() && worker_.get_id() != std::this_thread::get_id()) worker_.join();
}

std::size_t Scheduler::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void Scheduler::run() {
  std::unique_lock lock(mutex_);
  while (!stopping_) {
    if (queue_.empty()) {
      wake_.wait(lock);
      continue;
    }
    auto due = queue_.top().due;
    if (Clock::now() < due) {
      wake_.wait_until(lock, due);
      continue;
    }
    Entry entry = queue_.top();
    queue_.pop();
    lock.unlock();
    try {
      entry.task();
    } catch (const std::exception& e) {
      spdlog::warn("scheduled task failed: {}", e.what());
    }
    lock.lock();
  }
}

}  // namespace dpws
