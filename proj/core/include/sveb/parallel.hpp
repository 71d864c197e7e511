#pragma once

#include <cstddef>
#include <functional>

namespace sveb {

/// Worker count used when a caller passes 0: the SVEB_WORKERS environment
/// variable if set, otherwise std::thread::hardware_concurrency().
unsigned default_workers();

/// Run body(i) for i in [0, count) on up to `workers` threads.
///
/// Each index is processed exactly once; callers write results into
/// index-addressed slots, so output never depends on scheduling. Calls made
/// from inside a running parallel_for execute sequentially on the calling
/// thread instead of spawning a nested pool. The first exception thrown by
/// any body is rethrown after all threads have joined.
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& body);

}  // namespace sveb
