#pragma once

#include <cstddef>
#include <functional>

namespace advr {

/// Worker count: ADVR_THREADS if set and positive, else the hardware
/// concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over contiguous index blocks. Callers write
/// results into per-index slots, so output never depends on scheduling.
/// If several indices throw, the exception of the lowest index propagates.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace advr
