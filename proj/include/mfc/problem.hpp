#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mfc {

/// Finite, strictly increasing set of scalar actions.
class ActionGrid {
  public:
    explicit ActionGrid(std::vector<double> actions);

    /// n actions spread uniformly over [lo, hi] (n >= 2).
    static ActionGrid uniform(double lo, double hi, std::size_t n);

    std::size_t size() const noexcept { return actions_.size(); }
    double operator[](std::size_t i) const { return actions_[i]; }
    std::span<const double> values() const noexcept { return actions_; }

    /// Index of the grid action closest to a (ties go to the lower index).
    std::size_t nearest(double a) const;

  private:
    std::vector<double> actions_;
};

// (t, x, y, a) -> value, with y standing for E(X_t).
using CoefficientFn = std::function<double(double, double, double, double)>;
// (x, y) -> value.
using TerminalFn = std::function<double(double, double)>;

/// Scalar mean-field control problem: dX = b dt + sigma dW, cost
/// E[int h dt + g(X_T, E X_T)], together with the partials the adjoint
/// equations need. Evaluators must be pure.
struct ProblemSpec {
    std::string id;
    double horizon = 1.0;
    double x0 = 0.0;
    ActionGrid actions{std::vector<double>{0.0}};

    CoefficientFn b, sigma, h;
    TerminalFn g;

    CoefficientFn b_x, b_y, sigma_x, sigma_y, h_x, h_y;
    CoefficientFn b_xx, sigma_xx, h_xx;
    TerminalFn g_x, g_y, g_xx;
};

/// Throws std::invalid_argument if an evaluator is missing or horizon <= 0.
void require_complete(const ProblemSpec& spec);

struct LqParams {
    double a1 = 0.2;
    double a2 = 0.3;
    double b0 = 1.0;
    double s0 = 0.3;
    double qx = 1.0;
    double qy = 0.5;
    double r = 1.0;
    double gx = 1.0;
    double gy = 0.5;
    double u_max = 3.0;
    double x0 = 1.0;
    double horizon = 1.0;

    void validate() const;
};

/// dX = (a1 X + a2 E X + b0 u) dt + s0 dW,
/// h = (qx x^2 + qy y^2 + r u^2) / 2, g = (gx x^2 + gy y^2) / 2,
/// actions uniform on [-u_max, u_max].
ProblemSpec make_lq_meanfield(const LqParams& params, std::size_t n_actions);

/// Actions {-1, +1}, dX = u dt + sigma0 dW, h = x^2 + kappa y^2, g = 0,
/// x0 = 0, T = 1. No strict control reaches zero cost when sigma0 = 0, the
/// even mixture does.
ProblemSpec make_chattering_problem(double sigma0, double kappa);

struct SamplingBox {
    double t_lo = 0.0, t_hi = 1.0;
    double x_lo = -1.0, x_hi = 1.0;
    double y_lo = -1.0, y_hi = 1.0;
};

struct DerivativeCheck {
    std::string name;
    double worst_error = 0.0;  // |fd - analytic| / max(1, |analytic|)
    double t = 0.0, x = 0.0, y = 0.0, a = 0.0;  // where the worst error occurred
    bool passed = true;
};

struct ValidationReport {
    std::vector<DerivativeCheck> checks;
    std::optional<std::string> non_finite;  // "<function> at (t, x, y, a)"
    bool passed = true;

    const DerivativeCheck* find(const std::string& name) const;
};

/// Compares every supplied partial with central finite differences of its
/// parent at `samples` pseudo-random points of the box, for every action.
ValidationReport validate_problem(const ProblemSpec& spec, const SamplingBox& box,
                                  std::size_t samples, double step, double tol,
                                  std::uint64_t seed = 0);

}  // namespace mfc
