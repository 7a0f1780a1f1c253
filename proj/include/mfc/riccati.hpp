#pragma once

#include <cstddef>
#include <vector>

#include "mfc/controls.hpp"
#include "mfc/problem.hpp"

namespace mfc {

/// Deterministic reference solution for the mean-field LQ benchmark.
///
/// With X = (X - E X) + E X the problem splits into two scalar LQ problems:
///   -K'    = 2 a1 K - (b0^2/r) K^2 + qx,               K(T)    = gx
///   -Kbar' = 2 (a1+a2) Kbar - (b0^2/r) Kbar^2 + qx+qy, Kbar(T) = gx+gy
/// The optimal feedback is u = -(b0/r)(K (x - m) + Kbar m), the first-order
/// costate is p = -(K (x - m) + Kbar m), and the second-order adjoint is the
/// deterministic P = -S with -S' = 2 a1 S + qx, S(T) = gx.
/// All ODEs are integrated with classical RK4.
class LqRiccatiOracle {
  public:
    LqRiccatiOracle(const LqParams& params, std::size_t rk4_steps);

    double K(double t) const;
    double Kbar(double t) const;
    double S(double t) const;
    /// Closed-loop mean E X_t under the optimal feedback.
    double mean(double t) const;

    double feedback(double t, double x) const;
    double clamped_feedback(double t, double x) const;
    double costate(double t, double x, double m) const;

    /// Optimal cost: Kbar(0) x0^2 / 2 + (s0^2 / 2) int_0^T K dt.
    double value() const { return value_; }

    const LqParams& params() const noexcept { return params_; }

  private:
    double interpolate(const std::vector<double>& v, double t) const;

    LqParams params_;
    std::size_t steps_;
    double h_;
    std::vector<double> k_, kbar_, s_, m_;
    double value_ = 0.0;
};

/// Strict feedback on the action grid: the grid action nearest to
/// clamp(gain * u*(t_k, x)), with E X_t taken from the oracle's mean ODE.
/// gain = 1 is the oracle control; other gains give perturbed feedbacks.
StrictControl lq_oracle_control(const LqRiccatiOracle& oracle, const ActionGrid& actions, const TimeGrid& grid,
                                double gain = 1.0);

/// Relaxed version: the clamped optimal feedback written as the mixture of
/// its two neighbouring grid actions with the same barycenter.
RelaxedControl lq_oracle_mixture(const LqRiccatiOracle& oracle, const ActionGrid& actions, const TimeGrid& grid);

}  // namespace mfc
