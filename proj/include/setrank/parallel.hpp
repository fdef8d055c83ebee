#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace setrank {

// Runs fn(index, worker) for index in [0, n). Deterministic mode assigns
// static contiguous chunks, so per-worker accumulation order is fixed for a
// given thread count; otherwise workers pull indices from a shared counter.
// The first exception thrown by fn is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, bool deterministic, Fn&& fn) {
  unsigned t = std::max(1u, threads);
  if (n == 0) return;
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0u);
    return;
  }
  t = static_cast<unsigned>(std::min<std::size_t>(t, n));
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto guarded = [&](std::size_t i, unsigned w) {
    try {
      fn(i, w);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(t);
  if (deterministic) {
    const std::size_t chunk = (n + t - 1) / t;
    for (unsigned w = 0; w < t; ++w) {
      pool.emplace_back([&, w] {
        const std::size_t lo = static_cast<std::size_t>(w) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) guarded(i, w);
      });
    }
  } else {
    std::atomic<std::size_t> next{0};
    for (unsigned w = 0; w < t; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) guarded(i, w);
      });
    }
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace setrank
