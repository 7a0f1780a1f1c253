#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace mfc {

/// Pairwise (cascade) summation; the reduction tree depends only on the length.
double pairwise_sum(std::span<const double> v);

/// Mean computed as v[0] + pairwise_sum(v - v[0]) / n. Identical entries give
/// their common value back exactly.
double shifted_mean(std::span<const double> v);

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Sample mean and standard error (sample std / sqrt(n)).
MeanStderr mean_stderr(std::span<const double> v);

}  // namespace mfc
