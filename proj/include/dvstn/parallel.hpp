#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace dvstn {

// Engine-internal data parallelism. Work items write disjoint outputs, so
// results are identical at any thread count; only wall time changes.
inline int& thread_count() {
  static int n = 1;
  return n;
}

inline void set_threads(int n) { thread_count() = n < 1 ? 1 : n; }

// Runs fn(i) for i in [0, count). Static block partition.
template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
  int nt = thread_count();
  if (nt <= 1 || count < 2) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  if (std::int64_t(nt) > count) nt = int(count);
  std::vector<std::thread> pool;
  pool.reserve(nt - 1);
  std::int64_t chunk = (count + nt - 1) / nt;
  auto run = [&fn](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) fn(i);
  };
  for (int t = 1; t < nt; ++t) {
    std::int64_t lo = t * chunk, hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(run, lo, hi);
  }
  run(0, std::min(count, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace dvstn
