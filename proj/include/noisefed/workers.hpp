#pragma once

#include <cstddef>
#include <functional>

namespace noisefed {

/// Worker count for independent tasks: `requested` if non-zero, else the
/// hardware concurrency; always capped by NOISEFED_THREADS when set.
std::size_t worker_count(std::size_t requested = 0);

/// Runs task(0) .. task(n - 1) on up to `workers` threads. Tasks must write
/// only to their own slots; the first exception is rethrown after all
/// threads join. Inside a pool of more than one thread, OpenMP kernels run
/// single-threaded.
void run_tasks(std::size_t n, std::size_t workers,
               const std::function<void(std::size_t)>& task);

}  // namespace noisefed
