#ifndef GEOCAPS_PARALLEL_HPP_
#define GEOCAPS_PARALLEL_HPP_

#include <cstdint>
#include <functional>

namespace geocaps {

// Worker cap taken from GEOCAPS_THREADS (default 1). Results never depend on
// the thread count: every index writes disjoint output with a fixed
// per-index reduction order.
int worker_count();

// Runs body(i) for i in [0, n). Sequential when worker_count() == 1.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace geocaps

#endif  // GEOCAPS_PARALLEL_HPP_
