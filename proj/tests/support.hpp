#pragma once

// Small problem builders and helpers shared by the test binaries.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfc/problem.hpp"
#include "mfc/riccati.hpp"

namespace mfc::testing {

/// Every coefficient and partial identically zero; callers overwrite what
/// they need.
inline ProblemSpec zero_problem(std::vector<double> actions = {-1.0, 0.0, 1.0}, double x0 = 0.0,
                                double horizon = 1.0) {
    ProblemSpec s;
    s.id = "zero";
    s.horizon = horizon;
    s.x0 = x0;
    s.actions = ActionGrid(std::move(actions));
    const auto zero = [](double, double, double, double) { return 0.0; };
    const auto zero_g = [](double, double) { return 0.0; };
    s.b = s.sigma = s.h = zero;
    s.b_x = s.b_y = s.sigma_x = s.sigma_y = s.h_x = s.h_y = zero;
    s.b_xx = s.sigma_xx = s.h_xx = zero;
    s.g = s.g_x = s.g_y = s.g_xx = zero_g;
    return s;
}

inline CoefficientFn constant_fn(double c) {
    return [c](double, double, double, double) { return c; };
}

/// Default LQ benchmark with the oracle at ten times the given step count.
struct LqBench {
    LqParams params;
    ProblemSpec spec;
    LqRiccatiOracle oracle;

    explicit LqBench(std::size_t steps = 200, std::size_t n_actions = 41)
        : spec(make_lq_meanfield(params, n_actions)), oracle(params, 10 * steps) {}
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mfc-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace mfc::testing
