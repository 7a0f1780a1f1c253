// The LQ reference solution is checked against closed forms before anything
// else relies on it.
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mfc/controls.hpp"
#include "mfc/riccati.hpp"

using namespace mfc;

namespace {

/// Constant-coefficient Riccati -K' = 2 a K - c K^2 + q, K(T) = kT, solved in
/// closed form through the roots of c K^2 - 2 a K - q.
double riccati_closed(double a, double c, double q, double kT, double T, double t) {
    const double tau = T - t;
    if (c == 0.0) {
        if (a == 0.0) return kT + q * tau;
        return (kT + q / (2.0 * a)) * std::exp(2.0 * a * tau) - q / (2.0 * a);
    }
    const double disc = std::sqrt(a * a + c * q);
    const double kp = (a + disc) / c, km = (a - disc) / c;
    const double e = std::exp(-c * (kp - km) * tau);
    return (kp * (kT - km) - km * (kT - kp) * e) / ((kT - km) - (kT - kp) * e);
}

double simpson(const std::function<double(double)>& f, double lo, double hi, std::size_t n) {
    const double h = (hi - lo) / static_cast<double>(n);
    double s = f(lo) + f(hi);
    for (std::size_t j = 1; j < n; ++j) s += (j % 2 ? 4.0 : 2.0) * f(lo + h * static_cast<double>(j));
    return s * h / 3.0;
}

}  // namespace

TEST_CASE("terminal values") {
    const LqParams p;
    const LqRiccatiOracle o(p, 2000);
    CHECK(o.K(p.horizon) == p.gx);
    CHECK(o.Kbar(p.horizon) == p.gx + p.gy);
    CHECK(o.S(p.horizon) == p.gx);
    CHECK(o.mean(0.0) == p.x0);
}

TEST_CASE("no control influence: linear ODEs") {
    LqParams p;
    p.b0 = 0.0;
    const LqRiccatiOracle o(p, 2000);
    for (int k = 0; k <= 20; ++k) {
        const double t = 0.05 * k;
        CHECK(o.K(t) == doctest::Approx(riccati_closed(p.a1, 0.0, p.qx, p.gx, 1.0, t)).epsilon(1e-11));
        CHECK(o.Kbar(t) ==
              doctest::Approx(riccati_closed(p.a1 + p.a2, 0.0, p.qx + p.qy, p.gx + p.gy, 1.0, t)).epsilon(1e-11));
        CHECK(o.mean(t) == doctest::Approx(p.x0 * std::exp((p.a1 + p.a2) * t)).epsilon(1e-11));
    }
}

TEST_CASE("pure control cost: K = gx / (1 + gx (T - t))") {
    LqParams p;
    p.a1 = p.a2 = 0.0;
    p.qx = p.qy = 0.0;
    p.b0 = 1.0;
    p.r = 1.0;
    p.gx = 2.0;
    const LqRiccatiOracle o(p, 2000);
    for (int k = 0; k <= 20; ++k) {
        const double t = 0.05 * k;
        CHECK(o.K(t) == doctest::Approx(p.gx / (1.0 + p.gx * (1.0 - t))).epsilon(1e-11));
    }
}

TEST_CASE("default parameters against the closed-form Riccati solutions") {
    const LqParams p;
    const double c = p.b0 * p.b0 / p.r;
    const LqRiccatiOracle o(p, 2000);
    for (int k = 0; k <= 200; ++k) {
        const double t = k / 200.0;
        CHECK(o.K(t) == doctest::Approx(riccati_closed(p.a1, c, p.qx, p.gx, 1.0, t)).epsilon(1e-10));
        CHECK(o.Kbar(t) ==
              doctest::Approx(riccati_closed(p.a1 + p.a2, c, p.qx + p.qy, p.gx + p.gy, 1.0, t)).epsilon(1e-10));
        CHECK(o.S(t) == doctest::Approx(riccati_closed(p.a1, 0.0, p.qx, p.gx, 1.0, t)).epsilon(1e-10));
    }

    // m(T) = x0 exp(int (a1 + a2 - c Kbar) dt)
    const auto kbar = [&](double t) { return riccati_closed(p.a1 + p.a2, c, p.qx + p.qy, p.gx + p.gy, 1.0, t); };
    const double expo = simpson([&](double t) { return p.a1 + p.a2 - c * kbar(t); }, 0.0, 1.0, 20000);
    CHECK(o.mean(1.0) == doctest::Approx(p.x0 * std::exp(expo)).epsilon(1e-9));
}

TEST_CASE("optimal value equals the cost of the closed loop") {
    // Integrate mean, centered variance and running cost of the optimal
    // feedback forward, independently of the value formula.
    const LqParams p;
    const double c = p.b0 * p.b0 / p.r;
    const auto K = [&](double t) { return riccati_closed(p.a1, c, p.qx, p.gx, 1.0, t); };
    const auto Kb = [&](double t) { return riccati_closed(p.a1 + p.a2, c, p.qx + p.qy, p.gx + p.gy, 1.0, t); };
    using State = std::array<double, 3>;  // m, var, running cost
    const auto rhs = [&](double t, const State& s) -> State {
        const double m = s[0], v = s[1];
        const double k = K(t), kb = Kb(t);
        const double eu2 = (p.b0 / p.r) * (p.b0 / p.r) * (k * k * v + kb * kb * m * m);
        return {(p.a1 + p.a2 - c * kb) * m, 2.0 * (p.a1 - c * k) * v + p.s0 * p.s0,
                0.5 * (p.qx * (v + m * m) + p.qy * m * m + p.r * eu2)};
    };
    State s{p.x0, 0.0, 0.0};
    const std::size_t n = 4000;
    const double h = 1.0 / n;
    for (std::size_t j = 0; j < n; ++j) {
        const double t = h * static_cast<double>(j);
        const State k1 = rhs(t, s);
        State tmp;
        for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
        const State k2 = rhs(t + 0.5 * h, tmp);
        for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
        const State k3 = rhs(t + 0.5 * h, tmp);
        for (int i = 0; i < 3; ++i) tmp[i] = s[i] + h * k3[i];
        const State k4 = rhs(t + h, tmp);
        for (int i = 0; i < 3; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    const double terminal = 0.5 * (p.gx * (s[1] + s[0] * s[0]) + p.gy * s[0] * s[0]);
    const LqRiccatiOracle o(p, 2000);
    CHECK(o.value() == doctest::Approx(s[2] + terminal).epsilon(1e-9));
}

TEST_CASE("feedback acts on the centered state with gain K") {
    const LqParams p;
    const LqRiccatiOracle o(p, 2000);
    for (double t : {0.0, 0.3, 0.9}) {
        const double du = o.feedback(t, 0.8) - o.feedback(t, -0.4);
        CHECK(du == doctest::Approx(-(p.b0 / p.r) * o.K(t) * 1.2).epsilon(1e-12));
        const double m = o.mean(t);
        CHECK(o.feedback(t, m) == doctest::Approx(-(p.b0 / p.r) * o.Kbar(t) * m).epsilon(1e-12));
        CHECK(o.costate(t, 0.8, m) == doctest::Approx(-(o.K(t) * (0.8 - m) + o.Kbar(t) * m)).epsilon(1e-14));
    }
    CHECK(o.clamped_feedback(0.0, 100.0) == -p.u_max);
    CHECK(o.clamped_feedback(0.0, -100.0) == p.u_max);
}

TEST_CASE("oracle controls on the action grid") {
    const LqParams p;
    const LqRiccatiOracle o(p, 2000);
    const auto actions = ActionGrid::uniform(-p.u_max, p.u_max, 41);
    const TimeGrid grid(1.0, 200);
    const auto u = lq_oracle_control(o, actions, grid);
    const auto slow = lq_oracle_control(o, actions, grid, 0.8);
    CHECK(u.signature() == "lq-oracle");
    CHECK(slow.signature() != u.signature());
    CHECK(u.steps() == 200);
    const auto mix = lq_oracle_mixture(o, actions, grid);
    std::vector<double> w(actions.size());
    for (std::size_t k = 0; k < 200; k += 7)
        for (double x = -3.0; x <= 3.0; x += 0.37) {
            const double target = o.clamped_feedback(grid.t(k), x);
            CHECK(u.index(k, x) == actions.nearest(target));
            CHECK(slow.index(k, x) ==
                  actions.nearest(std::clamp(0.8 * o.feedback(grid.t(k), x), -p.u_max, p.u_max)));

            mix.weights(k, x, w);
            double sum = 0.0, bary = 0.0;
            std::size_t nonzero = 0, first = w.size();
            for (std::size_t i = 0; i < w.size(); ++i) {
                CHECK(w[i] >= 0.0);
                sum += w[i];
                bary += w[i] * actions[i];
                if (w[i] != 0.0) {
                    ++nonzero;
                    first = std::min(first, i);
                }
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(bary == doctest::Approx(target).epsilon(1e-12));
            CHECK(nonzero <= 2);
            if (nonzero == 2) CHECK(w[first + 1] != 0.0);
        }
}
