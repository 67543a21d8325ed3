#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace normlab {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

namespace detail {
inline std::atomic<int>& intra_threads_slot() {
  static std::atomic<int> value{1};
  return value;
}
}  // namespace detail

// Thread count used inside kernels (convolution). 1 by default; experiment
// drivers that parallelize across whole runs keep it at 1.
inline int intra_threads() { return detail::intra_threads_slot().load(); }
inline void set_intra_threads(int n) {
  detail::intra_threads_slot().store(n < 1 ? 1 : n);
}

// Static contiguous partition of [begin, end) over `threads` workers. The
// partition depends only on (begin, end, threads), so runs are reproducible
// for a fixed configuration. Iterations must touch disjoint state.
inline void parallel_for(std::int64_t begin, std::int64_t end, int threads,
                         const std::function<void(std::int64_t, std::int64_t)>& range_fn) {
  const std::int64_t count = end - begin;
  if (count <= 0) return;
  if (threads < 1) threads = 1;
  if (threads == 1 || count == 1) {
    range_fn(begin, end);
    return;
  }
  const int used = static_cast<int>(count < threads ? count : threads);
  const std::int64_t chunk = (count + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(used));
  for (int t = 0; t < used; ++t) {
    const std::int64_t lo = begin + t * chunk;
    const std::int64_t hi = lo + chunk < end ? lo + chunk : end;
    if (lo >= hi) break;
    pool.emplace_back([&range_fn, lo, hi] { range_fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

// Dynamic scheduling for coarse independent jobs (one whole training run per
// job). Job order is nondeterministic but each job writes only its own slot.
inline void parallel_jobs(int count, int workers,
                          const std::function<void(int)>& job) {
  if (count <= 0) return;
  if (workers < 1) workers = 1;
  if (workers == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      job(i);
    }
  };
  const int used = workers < count ? workers : count;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(used));
  for (int t = 0; t < used; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace normlab
