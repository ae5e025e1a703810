#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace cfr::parallel {

/// Caps the number of worker threads used by library loops. 0 means hardware concurrency.
void set_max_workers(std::size_t n) noexcept;
std::size_t max_workers() noexcept;

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks; callers
/// write results to pre-sized slots so the outcome never depends on scheduling.
/// The first exception thrown by any worker is rethrown on the calling thread.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace cfr::parallel
