#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfc/controls.hpp"
#include "mfc/cost.hpp"
#include "mfc/problem.hpp"
#include "mfc/simulation.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::zero_problem;

namespace {

const SamplingBox kBox{0.0, 1.0, -2.0, 2.0, -2.0, 2.0};

}  // namespace

TEST_CASE("action grid invariants") {
    CHECK_THROWS_AS(ActionGrid({}), std::invalid_argument);
    CHECK_THROWS_AS(ActionGrid({0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(ActionGrid({1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(ActionGrid({0.0, std::numeric_limits<double>::infinity()}), std::invalid_argument);
    CHECK_NOTHROW(ActionGrid({5.0}));

    const auto g = ActionGrid::uniform(-3.0, 3.0, 41);
    CHECK(g.size() == 41);
    CHECK(g[0] == -3.0);
    CHECK(g[40] == 3.0);
    CHECK(g[20] == 0.0);
    CHECK(g.nearest(0.07) == 20);
    CHECK(ActionGrid({-1.0, 0.0, 1.0}).nearest(0.5) == 1);  // exact midpoints go to the lower index
    CHECK(ActionGrid({-1.0, 0.0, 1.0}).nearest(-0.5) == 0);
    CHECK(g.nearest(-100.0) == 0);
    CHECK(g.nearest(100.0) == 40);
}

TEST_CASE("zero problem validates with zero error") {
    const auto r = validate_problem(zero_problem(), kBox, 100, 1e-4, 1e-5);
    CHECK(r.passed);
    CHECK(r.checks.size() == 12);
    for (const auto& c : r.checks) CHECK(c.worst_error == 0.0);
}

TEST_CASE("built-in problems pass the derivative check") {
    const auto lq = validate_problem(make_lq_meanfield(LqParams{}, 41), kBox, 100, 1e-4, 1e-5);
    CHECK(lq.passed);
    CHECK_FALSE(lq.non_finite);
    for (double kappa : {0.0, 1.0, 2.5}) {
        const auto ch = validate_problem(make_chattering_problem(0.1, kappa), kBox, 100, 1e-4, 1e-5);
        CHECK(ch.passed);
    }
    // Re-running is deterministic: the same seed samples the same points.
    const auto again = validate_problem(make_lq_meanfield(LqParams{}, 41), kBox, 100, 1e-4, 1e-5);
    for (std::size_t i = 0; i < lq.checks.size(); ++i) CHECK(again.checks[i].worst_error == lq.checks[i].worst_error);
}

TEST_CASE("a wrong partial is named") {
    auto spec = make_lq_meanfield(LqParams{}, 5);
    const double a1 = LqParams{}.a1;
    spec.b_x = [a1](double, double, double, double) { return 2.0 * a1; };
    const auto r = validate_problem(spec, kBox, 100, 1e-4, 1e-5);
    CHECK_FALSE(r.passed);
    REQUIRE(r.find("b_x") != nullptr);
    CHECK_FALSE(r.find("b_x")->passed);
    for (const auto& c : r.checks)
        if (c.name != "b_x") CHECK(c.passed);
}

TEST_CASE("non-finite evaluators are reported with the point") {
    auto spec = zero_problem();
    spec.h = [](double, double x, double, double) { return x > 1.0 ? std::nan("") : 0.0; };
    const auto r = validate_problem(spec, kBox, 100, 1e-4, 1e-5);
    CHECK_FALSE(r.passed);
    REQUIRE(r.non_finite);
    CHECK(r.non_finite->find("h") == 0);
    CHECK(r.non_finite->find('(') != std::string::npos);
}

TEST_CASE("validation preconditions") {
    CHECK_THROWS_AS(validate_problem(zero_problem(), kBox, 0, 1e-4, 1e-5), std::invalid_argument);
    CHECK_THROWS_AS(validate_problem(zero_problem(), kBox, 10, 0.0, 1e-5), std::invalid_argument);
    auto incomplete = zero_problem();
    incomplete.g_xx = nullptr;
    CHECK_THROWS_AS(require_complete(incomplete), std::invalid_argument);
    auto bad_horizon = zero_problem();
    bad_horizon.horizon = 0.0;
    CHECK_THROWS_AS(require_complete(bad_horizon), std::invalid_argument);
}

TEST_CASE("LQ parameter invariants") {
    LqParams p;
    p.r = 0.0;
    CHECK_THROWS_AS(make_lq_meanfield(p, 41), std::invalid_argument);
    p = LqParams{};
    p.qx = -1.0;
    CHECK_THROWS_AS(make_lq_meanfield(p, 41), std::invalid_argument);
    p = LqParams{};
    p.u_max = 0.0;
    CHECK_THROWS_AS(make_lq_meanfield(p, 41), std::invalid_argument);
    CHECK_THROWS_AS(make_lq_meanfield(LqParams{}, 1), std::invalid_argument);
}

TEST_CASE("LQ closed forms") {
    LqParams p;
    p.a1 = p.a2 = 0.0;
    p.b0 = 1.0;
    p.s0 = 0.0;
    p.qx = 1.0;
    p.qy = 0.0;
    p.r = 1.0;
    p.gx = 0.0;
    const auto s = make_lq_meanfield(p, 41);
    CHECK(s.actions.size() == 41);
    CHECK(s.actions[0] == -p.u_max);
    for (double x : {-1.5, 0.0, 0.7})
        for (double u : {-2.0, 0.25, 3.0}) {
            CHECK(s.h(0.3, x, 0.4, u) == doctest::Approx(0.5 * (x * x + u * u)).epsilon(1e-15));
            CHECK(s.b(0.3, x, 0.4, u) == doctest::Approx(u).epsilon(1e-15));
            CHECK(s.sigma(0.3, x, 0.4, u) == 0.0);
        }

    const LqParams d;
    const auto lq = make_lq_meanfield(d, 41);
    for (double x : {-1.0, 0.3, 2.0})
        for (double y : {-0.5, 0.9}) {
            CHECK(lq.g_x(x, y) == doctest::Approx(d.gx * x).epsilon(1e-15));
            CHECK(lq.g_y(x, y) == doctest::Approx(d.gy * y).epsilon(1e-15));
            CHECK(lq.b(0.0, x, y, 1.0) == doctest::Approx(d.a1 * x + d.a2 * y + d.b0).epsilon(1e-15));
            CHECK(lq.sigma(0.0, x, y, 1.0) == d.s0);
        }
}

TEST_CASE("chattering problem: even mixture costs nothing") {
    const auto spec = make_chattering_problem(0.0, 1.0);
    CHECK(spec.horizon == 1.0);
    CHECK(spec.x0 == 0.0);
    CHECK(spec.actions.size() == 2);
    SimConfig cfg;
    cfg.particles = 16;
    cfg.grid = TimeGrid(1.0, 200);
    const auto est = simulate_cost(spec, RelaxedControl::constant({0.5, 0.5}), cfg);
    CHECK(est.value == 0.0);
    CHECK(est.stderr_ == 0.0);
    CHECK_THROWS_AS(make_chattering_problem(-0.1, 1.0), std::invalid_argument);
}

TEST_CASE("chattering problem: alternating strict controls against the triangle-wave oracle") {
    // m equal switching periods on [0, 1]: action -1 on even periods, +1 on odd
    // ones, so X is a triangle wave between 0 and -1/m. With n steps per
    // period, the left-endpoint sum over one descent/ascent pair is
    // dt^3 (sum_{j<n} j^2 + sum_{j=1..n} j^2), scaled by (1 + kappa) since
    // every particle follows the same path and E X = X.
    const double kappa = 1.0;
    const auto spec = make_chattering_problem(0.0, kappa);
    const std::size_t K = 1024;
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t m : {2U, 4U, 8U, 16U, 32U}) {
        const std::size_t n = K / m;
        StrictControl u([n](std::size_t k, double) -> std::size_t { return (k / n) % 2; }, 2, "alternate", 1, K);
        SimConfig cfg;
        cfg.particles = 2;
        cfg.grid = TimeGrid(1.0, K);
        const auto est = simulate_cost(spec, u, cfg);

        const double dt = 1.0 / static_cast<double>(K);
        double pair = 0.0;
        for (std::size_t j = 0; j < n; ++j) pair += static_cast<double>(j * j);
        for (std::size_t j = 1; j <= n; ++j) pair += static_cast<double>(j * j);
        const double oracle = (1.0 + kappa) * dt * dt * dt * pair * static_cast<double>(m / 2);
        CHECK(est.value == doctest::Approx(oracle).epsilon(1e-12));
        // Continuous triangle wave: (1 + kappa) / (3 m^2), up to O(dt).
        CHECK(est.value == doctest::Approx((1.0 + kappa) / (3.0 * m * m)).epsilon(5.0 * m * dt));
        CHECK(est.value > 0.0);
        CHECK(est.value < previous);
        previous = est.value;
    }
}

TEST_CASE("chattering problem: grid search over constant mixtures picks one half") {
    const auto spec = make_chattering_problem(0.0, 1.0);
    SimConfig cfg;
    cfg.particles = 2;
    cfg.grid = TimeGrid(1.0, 200);
    double best = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (int j = 0; j <= 10; ++j) {
        const double w = 0.1 * j;
        const auto est = simulate_cost(spec, RelaxedControl::constant({1.0 - w, w}), cfg);
        // x(t) = (2w - 1) t, so J = 2 (2w - 1)^2 / 3 up to the Euler error.
        CHECK(est.value == doctest::Approx(2.0 * (2 * w - 1) * (2 * w - 1) / 3.0).epsilon(0.01));
        if (est.value < best) {
            best = est.value;
            best_j = j;
        }
    }
    CHECK(best_j == 5);
    CHECK(best < 1e-20);
}
