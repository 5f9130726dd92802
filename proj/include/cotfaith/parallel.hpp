#pragma once

#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace cotfaith {

// Computes fn(i) for i in [0, n) on up to `workers` threads and hands results
// to commit(i, result) strictly in index order. Keeps stores byte-identical
// regardless of worker count. The first exception (from fn or commit) is
// rethrown after all threads stop.
template <typename T>
void ordered_parallel_for(size_t n, int workers,
                          const std::function<T(size_t)>& fn,
                          const std::function<void(size_t, T&)>& commit) {
  if (n == 0) return;
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) {
      T r = fn(i);
      commit(i, r);
    }
    return;
  }

  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::optional<T>> results(n);
  std::exception_ptr error;
  size_t next_in = 0;

  auto worker = [&] {
    for (;;) {
      size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (error || next_in >= n) return;
        i = next_in++;
      }
      try {
        T r = fn(i);
        {
          std::lock_guard<std::mutex> lock(mu);
          results[i] = std::move(r);
        }
        cv.notify_all();
      } catch (...) {
        {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
        }
        cv.notify_all();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  const int count = std::min<size_t>(static_cast<size_t>(workers), n);
  pool.reserve(static_cast<size_t>(count));
  for (int w = 0; w < count; ++w) pool.emplace_back(worker);

  size_t committed = 0;
  {
    std::unique_lock<std::mutex> lock(mu);
    while (committed < n) {
      cv.wait(lock, [&] { return error || results[committed].has_value(); });
      if (error) break;
      T r = std::move(*results[committed]);
      results[committed].reset();
      lock.unlock();
      try {
        commit(committed, r);
      } catch (...) {
        lock.lock();
        if (!error) error = std::current_exception();
        break;
      }
      lock.lock();
      ++committed;
    }
  }
  cv.notify_all();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace cotfaith
