#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfc/controls.hpp"
#include "mfc/cost.hpp"
#include "mfc/riccati.hpp"
#include "mfc/simulation.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::constant_fn;
using mfc::testing::LqBench;
using mfc::testing::zero_problem;

namespace {

SimConfig config(std::size_t n, std::size_t steps, std::uint64_t seed = 1) {
    SimConfig c;
    c.particles = n;
    c.grid = TimeGrid(1.0, steps);
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("constant running cost integrates to the horizon") {
    auto spec = zero_problem({-1.0, 1.0});
    spec.h = constant_fn(1.0);
    spec.sigma = constant_fn(1.0);
    const auto est = simulate_cost(spec, RelaxedControl::constant({0.4, 0.6}), config(100, 64));
    CHECK(est.value == 1.0);
    CHECK(est.stderr_ == 0.0);
    CHECK(est.particles == 100);
    CHECK(est.steps == 64);
}

TEST_CASE("frozen paths pay only the terminal cost") {
    auto spec = zero_problem({0.0}, 1.5);
    spec.g = [](double x, double) { return x * x; };
    const auto est = simulate_cost(spec, StrictControl::constant(0, 1), config(20, 10));
    CHECK(est.value == 2.25);
    CHECK(est.stderr_ == 0.0);
}

TEST_CASE("LQ oracle feedback costs the Riccati value") {
    const LqBench lq(200);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, 200));
    const auto est = simulate_cost(lq.spec, u, config(10000, 200, 2));
    CHECK(std::abs(est.value - lq.oracle.value()) <= 0.02 * lq.oracle.value());
    CHECK(est.stderr_ > 0.0);
}

TEST_CASE("strict and delta-embedded costs agree bit for bit on shared paths") {
    const LqBench lq(100);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, 100), 0.7);
    const auto paths = simulate_strict(lq.spec, u, config(1000, 100, 3));
    const auto a = estimate_cost(lq.spec, paths, u);
    const auto b = estimate_cost(lq.spec, paths, delta_embedding(u));
    CHECK(a.value == b.value);
    CHECK(a.stderr_ == b.stderr_);
    CHECK(a.per_particle == b.per_particle);
}

TEST_CASE("streaming evaluation equals replay of stored paths") {
    const LqBench lq(50);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, 50));
    const auto mu = lq_oracle_mixture(lq.oracle, lq.spec.actions, TimeGrid(1.0, 50));
    const auto cfg = config(500, 50, 4);
    CHECK(simulate_cost(lq.spec, u, cfg).value == estimate_cost(lq.spec, simulate_strict(lq.spec, u, cfg), u).value);
    CHECK(simulate_cost(lq.spec, mu, cfg).value ==
          estimate_cost(lq.spec, simulate_relaxed(lq.spec, mu, cfg), mu).value);
    const auto ch = chattering({mu, 4});
    const auto fine = config(300, 200, 4);
    CHECK(simulate_cost(lq.spec, ch, fine).value ==
          estimate_cost(lq.spec, simulate_strict(lq.spec, ch, fine), ch).value);
}

TEST_CASE("paths from another control are rejected") {
    const LqBench lq(20);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, 20));
    const auto paths = simulate_strict(lq.spec, StrictControl::constant(3, 41), config(10, 20));
    CHECK_THROWS_AS(estimate_cost(lq.spec, paths, u), std::invalid_argument);
    CHECK_THROWS_AS(estimate_cost(lq.spec, paths, RelaxedControl::constant(std::vector<double>(41, 1.0))),
                    std::invalid_argument);
}

TEST_CASE("chattering gap on the deterministic problem matches the exact oracle") {
    // With even weights the chattering control alternates every sub-step, so
    // X alternates between 0 and -dt_f and J = (1 + kappa) T dt_f^2 / 2, while
    // the relaxed cost is exactly 0.
    const double kappa = 1.0;
    const auto spec = make_chattering_problem(0.0, kappa);
    const std::vector<std::size_t> ms{8, 16, 32, 64};
    const auto rows = value_gap_experiment(spec, RelaxedControl::constant({0.5, 0.5}), ms, config(100, 200));
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const double dtf = 1.0 / (200.0 * double(ms[i]));
        CHECK(rows[i].relaxed.value == 0.0);
        CHECK(std::abs(rows[i].gap - (1.0 + kappa) * dtf * dtf / 2.0) <= 1e-10);
        CHECK(rows[i].pooled_stderr == 0.0);
        if (i > 0) CHECK(rows[i].gap < rows[i - 1].gap);
    }
    std::ostringstream os;
    write_gap_csv(os, rows);
    CHECK(os.str().rfind("m,J_chatter,stderr_chatter,J_relaxed,stderr_relaxed,gap\n", 0) == 0);
}

TEST_CASE("a delta-embedded control has no chattering gap") {
    const LqBench lq(20);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, 20));
    const std::vector<std::size_t> ms{1, 2, 4, 8};
    for (const auto& r : value_gap_experiment(lq.spec, delta_embedding(u), ms, config(200, 20))) CHECK(r.gap == 0.0);
}

TEST_CASE("LQ oracle mixture: the gap shrinks at least fourfold from m = 8 to m = 64") {
    const LqBench lq(50);
    const auto mu = lq_oracle_mixture(lq.oracle, lq.spec.actions, TimeGrid(1.0, 50));
    const std::vector<std::size_t> ms{8, 64};
    const auto rows = value_gap_experiment(lq.spec, mu, ms, config(2000, 50, 6));
    CHECK(rows[1].gap <= rows[0].gap / 4.0 + 3.0 * rows[1].pooled_stderr);
}

TEST_CASE("gap experiment preconditions") {
    const auto spec = make_chattering_problem(0.0, 1.0);
    const auto mu = RelaxedControl::constant({0.5, 0.5});
    CHECK_THROWS_AS(value_gap_experiment(spec, mu, std::vector<std::size_t>{}, config(10, 10)), std::invalid_argument);
    CHECK_THROWS_AS(value_gap_experiment(spec, mu, std::vector<std::size_t>{8, 8}, config(10, 10)),
                    std::invalid_argument);
    CHECK_THROWS_AS(value_gap_experiment(spec, mu, std::vector<std::size_t>{0, 8}, config(10, 10)),
                    std::invalid_argument);
}

TEST_CASE("cost continuity: closer controls cost closer") {
    const std::size_t K = 100;
    const LqBench lq(K);
    const TimeGrid grid(1.0, K);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, grid);
    const auto cfg = config(4000, K, 12);
    const auto paths = simulate_strict(lq.spec, u, cfg);
    const auto ju = estimate_cost(lq.spec, paths, u);
    double last_d = 1e300, last_gap = 1e300;
    for (double gain : {1.8, 1.4, 1.2, 1.1, 1.05}) {
        const auto v = lq_oracle_control(lq.oracle, lq.spec.actions, grid, gain);
        const double d = control_distance(u, v, paths);
        const auto jv = simulate_cost(lq.spec, v, cfg);
        const double gap = std::abs(jv.value - ju.value);
        const double se = std::hypot(jv.stderr_, ju.stderr_);
        CHECK(d <= last_d);
        CHECK(gap <= last_gap + 3.0 * se);
        last_d = d;
        last_gap = gap;
    }
}
