#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace agpo {

// Runs fn(i) for i in [0, n) across `workers` threads. Thread w owns the
// indices congruent to w modulo the worker count, and every fn(i) must write
// only to state owned by index i, so the result is independent of the worker
// count and of scheduling.
template <typename Fn>
void parallel_for_index(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t w = static_cast<std::size_t>(workers);
  if (w > n) w = n;
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([t, w, n, &fn] {
      for (std::size_t i = t; i < n; i += w) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace agpo
