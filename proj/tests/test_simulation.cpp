#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "mfc/controls.hpp"
#include "mfc/riccati.hpp"
#include "mfc/simulation.hpp"
#include "mfc/stats.hpp"
#include "support.hpp"

using namespace mfc;
using mfc::testing::constant_fn;
using mfc::testing::LqBench;
using mfc::testing::zero_problem;

namespace {

SimConfig config(std::size_t n, std::size_t steps, std::uint64_t seed = 1, double horizon = 1.0) {
    SimConfig c;
    c.particles = n;
    c.grid = TimeGrid(horizon, steps);
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("frozen dynamics keep every particle at x0") {
    const auto spec = zero_problem({-1.0, 1.0}, 0.75);
    const auto strict = simulate_strict(spec, StrictControl::constant(1, 2), config(50, 20));
    const auto relaxed = simulate_relaxed(spec, RelaxedControl::constant({0.3, 0.7}), config(50, 20));
    for (const auto* b : {&strict, &relaxed}) {
        CHECK(std::all_of(b->states.begin(), b->states.end(), [](double x) { return x == 0.75; }));
        CHECK(std::all_of(b->means.begin(), b->means.end(), [](double x) { return x == 0.75; }));
    }
}

TEST_CASE("unit drift moves every particle along x0 + t") {
    auto spec = zero_problem({0.0}, 0.5);
    spec.b = constant_fn(1.0);
    // dt = 1/64 keeps every partial sum exact.
    const auto b = simulate_strict(spec, StrictControl::constant(0, 1), config(10, 64));
    for (std::size_t k = 0; k <= 64; ++k)
        for (std::size_t p = 0; p < 10; ++p) CHECK(b.state(p, k) == 0.5 + b.grid.t(k));
}

TEST_CASE("path bundle bookkeeping") {
    const LqBench lq(50);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, 50));
    const auto b = simulate_strict(lq.spec, u, config(64, 50, 9));
    CHECK(b.states.size() == 51 * 64);
    CHECK(b.effective_noise.size() == 50 * 64);
    CHECK(b.control_signature == "lq-oracle");
    CHECK(b.problem_id == "lq");
    for (std::size_t k = 0; k <= 50; ++k) CHECK(b.means[k] == shifted_mean(b.states_at(k)));
    // The stored increment of a strict run is the active action's draw.
    for (std::size_t k = 0; k < 50; k += 5)
        for (std::size_t p = 0; p < 64; p += 9)
            CHECK(b.effective_noise_at(k)[p] == b.noise(p, k, u.index(k, b.state(p, k))));
}

TEST_CASE("LQ empirical mean tracks the closed-loop mean ODE") {
    const std::size_t K = 200, N = 10000;
    const LqBench lq(K);
    const auto mu = lq_oracle_mixture(lq.oracle, lq.spec.actions, TimeGrid(1.0, K));
    const auto b = simulate_relaxed(lq.spec, mu, config(N, K, 3));
    std::size_t outside = 0;
    for (std::size_t k = 0; k <= K; k += 10) {
        const auto ms = mean_stderr(b.states_at(k));
        const double ref = lq.oracle.mean(b.grid.t(k));
        if (std::abs(ms.mean - ref) > 3.0 * ms.stderr_ + 1e-12) ++outside;
    }
    CHECK(outside <= 1);
}

TEST_CASE("relaxed diffusion with action-independent sigma has variance s^2 dt") {
    const double s = 0.8;
    auto spec = zero_problem({-1.0, 1.0}, 0.0);
    spec.sigma = constant_fn(s);
    const auto b = simulate_relaxed(spec, RelaxedControl::constant({0.5, 0.5}), config(10000, 4, 21));
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<double> inc(10000), sq(10000);
        for (std::size_t p = 0; p < 10000; ++p) {
            inc[p] = b.state(p, k + 1) - b.state(p, k);
            sq[p] = inc[p] * inc[p];
        }
        const auto v = mean_stderr(sq);
        CHECK(std::abs(v.mean - s * s * b.grid.dt()) <= 3.0 * v.stderr_);
        // The stored effective increment has the same law as a single dW.
        CHECK(std::abs(b.effective_noise_at(k)[7] * s - inc[7]) <= 1e-15);
    }
}

TEST_CASE("delta embedding reproduces the strict simulation bit for bit") {
    const std::size_t K = 100;
    const LqBench lq(K);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, K), 1.1);
    const auto cfg = config(1000, K, 77);
    const auto a = simulate_strict(lq.spec, u, cfg);
    const auto b = simulate_relaxed(lq.spec, delta_embedding(u), cfg);
    CHECK(a.states == b.states);
    CHECK(a.means == b.means);
    CHECK(a.effective_noise == b.effective_noise);

    // Same for a chattering control (held observations, planner path).
    const auto spec = make_chattering_problem(0.3, 1.0);
    const auto ch = chattering({RelaxedControl::constant({0.3, 0.7}), 8});
    const auto fine = config(500, 80, 5);
    const auto c1 = simulate_strict(spec, ch, fine);
    const auto c2 = simulate_relaxed(spec, delta_embedding(ch), fine);
    CHECK(c1.states == c2.states);
}

TEST_CASE("results do not depend on the worker count") {
    const std::size_t K = 60;
    const LqBench lq(K);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, K));
    const auto mu = lq_oracle_mixture(lq.oracle, lq.spec.actions, TimeGrid(1.0, K));
    auto one = config(777, K, 4), many = one;
    many.workers = 8;
    CHECK(simulate_strict(lq.spec, u, one).states == simulate_strict(lq.spec, u, many).states);
    CHECK(simulate_relaxed(lq.spec, mu, one).states == simulate_relaxed(lq.spec, mu, many).states);
}

TEST_CASE("non-finite states abort with the particle and step") {
    auto spec = zero_problem({0.0}, 1.0);
    spec.b = [](double, double x, double, double) { return 1e200 * x * x; };
    try {
        simulate_strict(spec, StrictControl::constant(0, 1), config(4, 10));
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("particle") != std::string::npos);
        CHECK(msg.find("step") != std::string::npos);
    }
    auto clamped = config(4, 10);
    clamped.state_clamp = 5.0;
    spec.b = [](double, double x, double, double) { return 100.0 * x; };
    const auto b = simulate_strict(spec, StrictControl::constant(0, 1), clamped);
    CHECK(std::all_of(b.states.begin(), b.states.end(), [](double x) { return std::abs(x) <= 5.0; }));
}

TEST_CASE("configuration and grid checks") {
    const auto spec = zero_problem({0.0, 1.0});
    CHECK_THROWS_AS(simulate_strict(spec, StrictControl::constant(0, 2), config(1, 10)), std::invalid_argument);
    CHECK_THROWS_AS(simulate_strict(spec, StrictControl::constant(0, 3), config(10, 10)), std::invalid_argument);
    const StrictControl wrong_grid([](std::size_t, double) -> std::size_t { return 0; }, 2, "g", 1, 20);
    CHECK_THROWS_AS(simulate_strict(spec, wrong_grid, config(10, 10)), std::invalid_argument);
    CHECK_THROWS_AS(simulate_strict(spec, StrictControl::constant(0, 2), config(10, 10, 1, 2.0)),
                    std::invalid_argument);
    const RelaxedControl negative([](std::size_t, double, std::span<double> w) { w[0] = -1.0, w[1] = 2.0; }, 2, "neg");
    CHECK_THROWS_AS(simulate_relaxed(spec, negative, config(10, 10)), std::invalid_argument);
}

TEST_CASE("martingale measure: orthogonality and quadratic variation") {
    const auto spec = make_chattering_problem(0.5, 1.0);
    const auto mu = RelaxedControl::constant({0.5, 0.5});
    const auto paths = simulate_relaxed(spec, mu, config(10000, 200, 13));
    const auto mmp = martingale_measure(paths, mu);
    const std::vector<std::size_t> B{0}, C{1}, both{0, 1};
    const auto cov = orthogonality_check(mmp, B, C);
    CHECK(std::abs(cov.value) <= 3.0 * cov.stderr_);
    for (const auto& cells : {B, C, both}) {
        const auto qv = quadratic_variation_check(mmp, cells);
        CHECK(qv.intensity == doctest::Approx(0.5 * double(cells.size())).epsilon(1e-12));
        CHECK(std::abs(qv.second_moment - qv.intensity) <= 3.0 * qv.stderr_);
    }
    CHECK_THROWS_AS(orthogonality_check(mmp, B, B), std::invalid_argument);
    CHECK_THROWS_AS(orthogonality_check(mmp, B, std::vector<std::size_t>{2}), std::invalid_argument);

    // The increments are the stored noise scaled by sqrt(alpha).
    CHECK(mmp.increment(3, 5, 1) == std::sqrt(0.5) * paths.noise(3, 5, 1));
}

TEST_CASE("fourth moments of the running supremum are stable under doubling N") {
    const std::size_t K = 100;
    const LqBench lq(K);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, K));
    double previous = 0.0;
    for (std::size_t n : {2000U, 4000U, 8000U}) {
        const auto b = simulate_strict(lq.spec, u, config(n, K, 8));
        double acc = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            double sup = 0.0;
            for (std::size_t k = 0; k <= K; ++k) sup = std::max(sup, std::abs(b.state(p, k)));
            acc += std::pow(sup, 4);
        }
        const double m4 = acc / double(n);
        CHECK(std::isfinite(m4));
        if (previous > 0.0) CHECK(std::abs(m4 / previous - 1.0) < 0.2);
        previous = m4;
    }
}

TEST_CASE("variance of the empirical mean halves when N doubles") {
    const std::size_t K = 20, reps = 200;
    const LqBench lq(K);
    const auto u = lq_oracle_control(lq.oracle, lq.spec.actions, TimeGrid(1.0, K));
    std::vector<double> log_n, log_var;
    for (std::size_t n : {100U, 200U, 400U, 800U, 1600U}) {
        std::vector<double> finals(reps);
        for (std::size_t r = 0; r < reps; ++r) finals[r] = simulate_strict(lq.spec, u, config(n, K, 1000 + r)).means[K];
        const auto ms = mean_stderr(finals);
        log_n.push_back(std::log(double(n)));
        log_var.push_back(std::log(ms.stderr_ * ms.stderr_ * double(reps)));
    }
    const double mx = shifted_mean(log_n), my = shifted_mean(log_var);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
        sxy += (log_n[i] - mx) * (log_var[i] - my);
        sxx += (log_n[i] - mx) * (log_n[i] - mx);
    }
    const double slope = sxy / sxx;
    CHECK(slope == doctest::Approx(-1.0).epsilon(0.2));
}

TEST_CASE("running cost hooks match the evaluators") {
    const std::vector<double> w{0.25, 0.0, 0.75};
    auto spec = make_lq_meanfield(LqParams{}, 3);
    CHECK(strict_running_cost(spec, 0.2, 0.4, 0.1, 3.0) == spec.h(0.2, 0.4, 0.1, 3.0));
    CHECK(relaxed_running_cost(spec, 0.2, 0.4, 0.1, w) ==
          spec.h(0.2, 0.4, 0.1, spec.actions[0]) * 0.25 + spec.h(0.2, 0.4, 0.1, spec.actions[2]) * 0.75);
}

TEST_CASE("paths CSV carries the reproduction header") {
    const auto spec = zero_problem({0.0}, 2.0);
    const auto b = simulate_strict(spec, StrictControl::constant(0, 1), config(5, 3, 42));
    std::ostringstream os;
    write_paths_csv(os, b, 2);
    const std::string s = os.str();
    CHECK(s.find("seed=42") != std::string::npos);
    CHECK(s.find("particles=5") != std::string::npos);
    CHECK(s.find("steps=3") != std::string::npos);
    CHECK(s.find("problem=zero") != std::string::npos);
    CHECK(s.find("particle,step,t,state") != std::string::npos);
    CHECK(std::count(s.begin(), s.end(), '\n') == 2 + 2 * 4);
}
