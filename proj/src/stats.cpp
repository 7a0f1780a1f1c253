#include "mfc/stats.hpp"

#include <vector>

namespace mfc {

namespace {

double cascade(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t half = n / 2;
    return cascade(v, half) + cascade(v + half, n - half);
}

}  // namespace

double pairwise_sum(std::span<const double> v) { return cascade(v.data(), v.size()); }

double shifted_mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    const double ref = v[0];
    std::vector<double> d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] - ref;
    return ref + pairwise_sum(d) / static_cast<double>(v.size());
}

MeanStderr mean_stderr(std::span<const double> v) {
    MeanStderr out;
    if (v.empty()) return out;
    out.mean = shifted_mean(v);
    if (v.size() < 2) return out;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - out.mean;
        sq[i] = d * d;
    }
    const double n = static_cast<double>(v.size());
    const double var = pairwise_sum(sq) / (n - 1.0);
    out.stderr_ = std::sqrt(var / n);
    return out;
}

}  // namespace mfc
