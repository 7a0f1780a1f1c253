#pragma once

#include <cstddef>
#include <functional>

namespace mfc {

/// Runs body(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. Results must not depend on the split; callers only write to
/// disjoint per-index slots.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace mfc
