#include "seqgen/concurrency.h"

#include <algorithm>

namespace seqgen {

WorkerPool::WorkerPool(size_t threads) {
  threads = std::max<size_t>(threads, 1);
  threads_.reserve(threads);
  for (size_t i = 0; i < threads; ++i) threads_.emplace_back([this] { work(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  wake_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::parallel_for(size_t count, const std::function<void(size_t)>& fn) {
  if (count == 0) return;
  std::unique_lock lock(mutex_);
  job_ = &fn;
  count_ = count;
  next_ = 0;
  pending_ = count;
  ++generation_;
  wake_.notify_all();
  finished_.wait(lock, [&] { return pending_ == 0; });
  job_ = nullptr;
}

void WorkerPool::work() {
  size_t seen = 0;
  std::unique_lock lock(mutex_);
  while (true) {
    wake_.wait(lock, [&] { return stop_ || (generation_ != seen && next_ < count_); });
    if (stop_) return;
    while (job_ && next_ < count_) {
      const size_t i = next_++;
      const auto* job = job_;
      lock.unlock();
      (*job)(i);
      lock.lock();
      if (--pending_ == 0) finished_.notify_all();
    }
    seen = generation_;
  }
}

}  // namespace seqgen
