#pragma once

#include <cstddef>
#include <functional>

namespace grasp {

/// Worker count for internal parallel loops: GRASP_CLOUD_THREADS if set to a
/// positive integer, otherwise the hardware thread count. Read once per
/// process.
std::size_t thread_count();

/// Overrides the worker count (tests and the CLI use this).
void set_thread_count(std::size_t threads);

/// Runs fn(i) for i in [0, n). Iterations are split into contiguous blocks,
/// one per worker; each fn(i) must touch only state owned by index i, which
/// keeps results independent of the worker count. A call made from inside
/// another parallel_for runs serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace grasp
