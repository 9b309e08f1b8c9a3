#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace unirig {

// Process-wide worker cap; 0 means hardware concurrency.
void set_thread_count(int threads);
int thread_count();

// Calls fn(begin, end) over disjoint chunks of [0, n). Chunking is static so
// per-index results never depend on the thread count.
template <typename Fn>
void parallel_for(int n, Fn&& fn, int min_chunk = 256) {
  const int workers = std::max(1, std::min(thread_count(), (n + min_chunk - 1) / std::max(1, min_chunk)));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  std::exception_ptr error;
  std::mutex error_mutex;
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) {
      break;
    }
    pool.emplace_back([&, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        const std::lock_guard lock(error_mutex);
        if (!error) {
          error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

} // namespace unirig
