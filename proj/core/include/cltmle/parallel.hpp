#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace cltmle {

// Seed for task `index` under `master`; independent of execution order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept;

// Worker count to use when the caller asks for 0 (all hardware threads).
int resolve_workers(int requested) noexcept;

// Runs body(i) for i in [0, n) on up to `workers` threads. Tasks are handed out
// dynamically; callers store results by index. The first exception thrown by
// any task is rethrown after all workers stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

}  // namespace cltmle
