#pragma once

#include <cstddef>
#include <functional>

namespace dflab {

// Runs body(i) for i in [0, n) on up to `workers` threads. Each index owns
// its output slot and its own RNG substream, so results are identical for
// every worker count; only the schedule changes.
void parallel_for_paths(std::size_t n, std::size_t workers,
                        const std::function<void(std::size_t)>& body);

}  // namespace dflab
