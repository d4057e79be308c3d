#pragma once

#include <cstddef>
#include <functional>

namespace bvmdesign {

/// Number of worker threads used by parallel_for. 0 means "all cores".
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs body(i) for i in [0, n). Iterations must be independent. Nested calls
/// run sequentially on the calling worker. The first exception thrown by any
/// iteration is rethrown after all workers have stopped.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace bvmdesign
