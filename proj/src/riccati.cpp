#include "mfc/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "mfc/io.hpp"

namespace mfc {

namespace {

// One RK4 step of y' = f(y) with step dt.
template <class F>
double rk4(double y, double dt, F&& f) {
    const double k1 = f(y);
    const double k2 = f(y + 0.5 * dt * k1);
    const double k3 = f(y + 0.5 * dt * k2);
    const double k4 = f(y + dt * k3);
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

LqRiccatiOracle::LqRiccatiOracle(const LqParams& params, std::size_t rk4_steps)
    : params_(params), steps_(2 * rk4_steps) {
    params_.validate();
    if (rk4_steps < 1) throw std::invalid_argument("Riccati oracle needs at least one step");
    const auto& p = params_;
    const double T = p.horizon;
    // Backward quantities live on a grid twice as fine as the forward mean
    // solve, so the mean's RK4 midpoints fall on stored nodes.
    h_ = T / static_cast<double>(steps_);
    const double gain = p.b0 * p.b0 / p.r;

    k_.assign(steps_ + 1, 0.0);
    kbar_.assign(steps_ + 1, 0.0);
    s_.assign(steps_ + 1, 0.0);
    k_[steps_] = p.gx;
    kbar_[steps_] = p.gx + p.gy;
    s_[steps_] = p.gx;
    // In reversed time tau = T - t every equation reads y' = rhs(y).
    for (std::size_t j = steps_; j > 0; --j) {
        k_[j - 1] = rk4(k_[j], h_, [&](double k) { return 2.0 * p.a1 * k - gain * k * k + p.qx; });
        kbar_[j - 1] = rk4(kbar_[j], h_, [&](double k) {
            return 2.0 * (p.a1 + p.a2) * k - gain * k * k + p.qx + p.qy;
        });
        s_[j - 1] = rk4(s_[j], h_, [&](double s) { return 2.0 * p.a1 * s + p.qx; });
    }

    // Forward mean: m' = (a1 + a2 - gain * Kbar(t)) m, RK4 with step 2h.
    m_.assign(steps_ + 1, 0.0);
    m_[0] = p.x0;
    for (std::size_t j = 0; j + 2 <= steps_; j += 2) {
        const double dt = 2.0 * h_;
        const double c0 = p.a1 + p.a2 - gain * kbar_[j];
        const double c1 = p.a1 + p.a2 - gain * kbar_[j + 1];
        const double c2 = p.a1 + p.a2 - gain * kbar_[j + 2];
        const double m = m_[j];
        const double k1 = c0 * m;
        const double k2 = c1 * (m + 0.5 * dt * k1);
        const double k3 = c1 * (m + 0.5 * dt * k2);
        const double k4 = c2 * (m + dt * k3);
        m_[j + 2] = m + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        m_[j + 1] = 0.5 * (m_[j] + m_[j + 2]);  // midpoints only used by interpolation
    }

    // Simpson on the fine grid for int K dt.
    double integral = 0.0;
    for (std::size_t j = 0; j + 2 <= steps_; j += 2) integral += h_ / 3.0 * (k_[j] + 4.0 * k_[j + 1] + k_[j + 2]);
    value_ = 0.5 * kbar_[0] * p.x0 * p.x0 + 0.5 * p.s0 * p.s0 * integral;
}

double LqRiccatiOracle::interpolate(const std::vector<double>& v, double t) const {
    const double pos = std::clamp(t / h_, 0.0, static_cast<double>(steps_));
    const auto j = std::min(static_cast<std::size_t>(pos), steps_ - 1);
    const double w = pos - static_cast<double>(j);
    return (1.0 - w) * v[j] + w * v[j + 1];
}

double LqRiccatiOracle::K(double t) const { return interpolate(k_, t); }
double LqRiccatiOracle::Kbar(double t) const { return interpolate(kbar_, t); }
double LqRiccatiOracle::S(double t) const { return interpolate(s_, t); }
double LqRiccatiOracle::mean(double t) const { return interpolate(m_, t); }

double LqRiccatiOracle::costate(double t, double x, double m) const { return -(K(t) * (x - m) + Kbar(t) * m); }

double LqRiccatiOracle::feedback(double t, double x) const {
    return params_.b0 / params_.r * costate(t, x, mean(t));
}

double LqRiccatiOracle::clamped_feedback(double t, double x) const {
    return std::clamp(feedback(t, x), -params_.u_max, params_.u_max);
}

StrictControl lq_oracle_control(const LqRiccatiOracle& oracle, const ActionGrid& actions, const TimeGrid& grid,
                                double gain) {
    if (!std::isfinite(gain)) throw std::invalid_argument("lq_oracle_control: gain must be finite");
    const double u_max = oracle.params().u_max;
    auto o = std::make_shared<const LqRiccatiOracle>(oracle);
    auto rule = [o, actions, grid, gain, u_max](std::size_t k, double x) {
        return actions.nearest(std::clamp(gain * o->feedback(grid.t(k), x), -u_max, u_max));
    };
    const std::string sig = gain == 1.0 ? "lq-oracle" : "lq-oracle(gain=" + format_real(gain) + ")";
    return StrictControl(rule, actions.size(), sig, 1, grid.steps());
}

RelaxedControl lq_oracle_mixture(const LqRiccatiOracle& oracle, const ActionGrid& actions, const TimeGrid& grid) {
    auto o = std::make_shared<const LqRiccatiOracle>(oracle);
    auto rule = [o, actions, grid](std::size_t k, double x, std::span<double> w) {
        std::fill(w.begin(), w.end(), 0.0);
        const double u = std::clamp(o->clamped_feedback(grid.t(k), x), actions[0], actions[actions.size() - 1]);
        const auto vals = actions.values();
        auto it = std::upper_bound(vals.begin(), vals.end(), u);
        if (it == vals.end()) {
            w[vals.size() - 1] = 1.0;
            return;
        }
        const std::size_t hi = static_cast<std::size_t>(it - vals.begin());
        if (hi == 0) {
            w[0] = 1.0;
            return;
        }
        const double theta = (u - vals[hi - 1]) / (vals[hi] - vals[hi - 1]);
        w[hi - 1] = 1.0 - theta;
        w[hi] = theta;
    };
    return RelaxedControl(rule, actions.size(), "lq-oracle-mixture", 1, grid.steps());
}

}  // namespace mfc
