#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace flexcast {

// Thread cap: FLEXCAST_THREADS wins, otherwise hardware concurrency.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("FLEXCAST_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

// Runs fn(i) for i in [0, n). Work items must be independent and write only
// to their own slots; results are then identical to the serial loop.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  unsigned threads = std::min<std::size_t>(thread_budget(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace flexcast
