#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nmaci {

/// Runs fn(i) for i in [0, count) on up to `width` threads. Each index is
/// processed exactly once; callers write results into per-index slots so the
/// outcome is independent of width. The first exception thrown is rethrown.
template <class Fn>
void parallel_for(int count, int width, Fn&& fn) {
  width = std::max(1, std::min(width, count));
  if (width == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(width);
  for (int t = 0; t < width; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < count; i += width) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace nmaci
