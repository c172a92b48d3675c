#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace stablesde {

// Global worker cap shared by all modules (CLI --threads).
int max_threads();
void set_max_threads(int n);

// Runs fn(i) for i in [0, n). Work is split into fixed contiguous blocks so
// results that are reduced block-by-block do not depend on thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int nthreads = std::min<std::int64_t>(max_threads(), n);
  if (nthreads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  const std::int64_t chunk = std::max<std::int64_t>(1, n / (8 * nthreads));
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::int64_t lo = next.fetch_add(chunk);
        if (lo >= n) break;
        const std::int64_t hi = std::min(n, lo + chunk);
        for (std::int64_t i = lo; i < hi; ++i) fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace stablesde
