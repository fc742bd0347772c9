#ifndef LMMREG_PARALLEL_HPP
#define LMMREG_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace lmmreg {

/// Worker count: LMMREG_THREADS if set (0 = hardware concurrency),
/// otherwise hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) across workers. Chunking is by contiguous
/// index ranges, so writes indexed by i are race-free and results do not
/// depend on the schedule. fn must not throw.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lmmreg

#endif
