#include "advr/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace advr {

std::size_t thread_count() {
  if (const char* env = std::getenv("ADVR_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      const std::size_t lo = n * t / workers;
      const std::size_t hi = n * (t + 1) / workers;
      pool.emplace_back([&, t, lo, hi] {
        for (std::size_t i = lo; i < hi; ++i) {
          try {
            fn(i);
          } catch (...) {
            errors[t] = std::current_exception();
            return;
          }
        }
      });
    }
  }
  // Blocks are contiguous, so the first failing worker owns the lowest index.
  for (std::size_t t = 0; t < workers; ++t) {
    if (errors[t]) std::rethrow_exception(errors[t]);
  }
}

}  // namespace advr
