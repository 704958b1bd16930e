// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace tramark {

// Runs fn(i) for i in [begin, end). Work items must be independent; each
// writes only to its own output slot, so scheduling order cannot change
// results.
inline void parallel_for(int begin, int end, int threads,
                         const std::function<void(int)>& fn) {
  const int count = end - begin;
  if (count <= 0) return;
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<int> next(begin);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= end) break;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

// Worker count: TRAMARK_THREADS if set, else the hardware concurrency.
inline int worker_count_from_env() {
  if (const char* env = std::getenv("TRAMARK_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

}  // namespace tramark
