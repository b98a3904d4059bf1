#include "noisefed/workers.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace noisefed {

std::size_t worker_count(std::size_t requested) {
  std::size_t n = requested != 0 ? requested
                                 : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("NOISEFED_THREADS")) {
    try {
      const auto cap = static_cast<std::size_t>(std::stoul(env));
      if (cap > 0) n = std::min(n, cap);
    } catch (const std::exception&) {
      // Ignore malformed values.
    }
  }
  return std::max<std::size_t>(n, 1);
}

void run_tasks(std::size_t n, std::size_t workers,
               const std::function<void(std::size_t)>& task) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      omp_set_num_threads(1);
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace noisefed
