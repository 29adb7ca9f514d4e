#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace spr {

inline std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Splits [0, n) into contiguous chunks and calls body(lo, hi) once per
/// chunk. Work per index must be independent; output written per index is
/// then identical for any thread count.
template <typename Body>
void parallel_chunks(std::size_t n, Body&& body, std::size_t threads = 0) {
  if (threads == 0) threads = default_threads();
  threads = std::min(threads, std::max<std::size_t>(1, n / 32));
  if (threads <= 1) {
    if (n > 0) body(std::size_t{0}, n);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
      const std::size_t hi = std::min(n, lo + chunk);
      pool.emplace_back([&, lo, hi] {
        try {
          body(lo, hi);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

template <typename Body>
void parallel_for(std::size_t n, Body&& body, std::size_t threads = 0) {
  parallel_chunks(
      n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      },
      threads);
}

}  // namespace spr
