#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace embridge {

// Thread count: EMBRIDGE_THREADS if set and positive, else hardware concurrency.
inline unsigned thread_count() {
  if (const char* env = std::getenv("EMBRIDGE_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

// Blocked parallel loop over [begin, end). Falls back to serial execution when
// one thread suffices. The partition depends only on (range, nthreads), so a
// fixed EMBRIDGE_THREADS gives a fixed work decomposition.
inline void parallel_for(std::size_t begin, std::size_t end,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  std::size_t n = end > begin ? end - begin : 0;
  if (n == 0) return;
  unsigned nthreads = std::min<std::size_t>(thread_count(), n);
  if (nthreads <= 1) {
    body(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  std::size_t chunk = (n + nthreads - 1) / nthreads;
  for (unsigned t = 0; t < nthreads; ++t) {
    std::size_t lo = begin + static_cast<std::size_t>(t) * chunk;
    std::size_t hi = std::min(lo + chunk, end);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

} // namespace embridge
