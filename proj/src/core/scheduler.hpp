#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace dpws {

/// Single background thread running delayed tasks in deadline order.
class Scheduler {
 public:
  using Clock = std::chrono::steady_clock;
  using Task = std::function<void()>;

  Scheduler();
  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  void schedule_after(Clock::duration delay, Task task);
  /// Runs `task` every `period` until the scheduler stops.
  void every(Clock::duration period, Task task);
  /// Drops pending tasks and joins the worker. Idempotent.
  void stop();
  std::size_t pending() const;

 private:
  struct Entry {
    Clock::time_point due;
    std::uint64_t seq;
    Task task;
    bool operator>(const Entry& o) const { return due != o.due ? due > o.due : seq > o.seq; }
  };

  void run();

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace dpws
