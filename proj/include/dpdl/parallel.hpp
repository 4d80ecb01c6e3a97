#pragma once

#include <cstddef>
#include <functional>

namespace dpdl {

/// Worker cap: DPDL_THREADS when set to a positive integer, else the hardware
/// concurrency (at least 1).
std::size_t worker_count();

/// Runs f(i) for i in [0, n) on up to worker_count() threads, each taking a
/// contiguous block of indices. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f);

}  // namespace dpdl
