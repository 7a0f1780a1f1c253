#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mfc/controls.hpp"
#include "mfc/problem.hpp"
#include "mfc/simulation.hpp"

namespace mfc {

/// Least-squares basis for conditional expectations at a time step:
/// polynomials of degree <= `degree` in the standardized state
/// z = (x - m_k) / s_k, where m_k is the ensemble mean and s_k the ensemble
/// standard deviation. The intercept is never penalized. With a degenerate
/// ensemble (s_k ~ 0) the projection falls back to the ensemble mean.
struct RegressionBasis {
    std::size_t degree = 2;
    /// Ridge weight on the non-constant coefficients; default 1e-8 * N.
    std::optional<double> ridge;
    /// Conditioning (eigenvalue ratio of the Gram matrix) above which a step fails.
    double max_condition = 1e12;

    void validate() const;
    double ridge_for(std::size_t particles) const { return ridge.value_or(1e-8 * static_cast<double>(particles)); }
};

/// Projection onto the basis at one time step.
class StepRegression {
  public:
    StepRegression(std::span<const double> states, double mean, const RegressionBasis& basis, std::size_t step);

    /// Fitted conditional expectation of y for every particle.
    std::vector<double> project(std::span<const double> y) const;
    double condition() const noexcept { return condition_; }

  private:
    std::size_t n_ = 0;
    std::size_t cols_ = 0;          // non-constant columns
    std::vector<double> centered_;  // N x cols_, each column minus its mean
    std::vector<double> gram_;      // cols_ x cols_, ridged
    double condition_ = 1.0;
};

struct AdjointDiagnostics {
    double sup_square = 0.0;        // (1/N) sum_p max_k |p|^2
    double integrated_square = 0.0;  // (1/N) sum_p sum_k dt |q|^2
    double residual_qv = 0.0;        // sum_k (1/N) sum_p r_k^2
    double max_condition = 1.0;
    std::vector<double> residual_mean;          // per step
    std::vector<double> residual_stderr;        // per step
    std::vector<double> residual_cross;         // per step: (1/N) sum_p r_k dW^eff_k
    std::vector<double> residual_cross_stderr;  // per step
};

/// First-order adjoint (p, q) with orthogonal-martingale residual diagnostics.
struct AdjointFirst {
    std::size_t particles = 0;
    std::size_t steps = 0;
    std::vector<double> p;  // (K+1) x N
    std::vector<double> q;  // K x N
    AdjointDiagnostics diagnostics;

    double p_at(std::size_t particle, std::size_t k) const { return p[k * particles + particle]; }
    double q_at(std::size_t particle, std::size_t k) const { return q[k * particles + particle]; }
};

/// Second-order adjoint (P, Q).
struct AdjointSecond {
    std::size_t particles = 0;
    std::size_t steps = 0;
    std::vector<double> P;  // (K+1) x N
    std::vector<double> Q;  // K x N
    AdjointDiagnostics diagnostics;

    double P_at(std::size_t particle, std::size_t k) const { return P[k * particles + particle]; }
    double Q_at(std::size_t particle, std::size_t k) const { return Q[k * particles + particle]; }
};

/// Backward explicit regression scheme for
///   dp = -[bx p + E(by p) + sx q + E(sy q) - hx - E(hy)] dt + q dW + dM,
///   p(T) = -g_x(X_T, E X_T) - E g_y(X_T, E X_T),
/// with every coefficient averaged over the control's weights at (t_k, X_k).
/// q_k is the projection of (p_{k+1} - E_k p_{k+1}) dW^eff_k / dt, where
/// dW^eff = sum_i sqrt(alpha^i) dW^i, and p_k the projection of
/// p_{k+1} - q_k dW^eff_k + driver dt. E(.) terms are ensemble averages at
/// step k. The residuals r_k = p_{k+1} - q_k dW^eff_k - E_k[.] are the
/// increments of the orthogonal martingale M.
AdjointFirst solve_first_order(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                               const RegressionBasis& basis, std::size_t workers = 1);

/// Same scheme for
///   dP = -[2 bx P + sx^2 P + 2 sx Q + Hxx] dt + Q dW + dN,  P(T) = -g_xx(X_T),
/// with Hxx = bxx p + sxx q - hxx evaluated with the first-order solution.
AdjointSecond solve_second_order(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                                 const AdjointFirst& first, const RegressionBasis& basis,
                                 std::size_t workers = 1);

/// CSV "step,particle,p,q,P,Q" for the first max_particles particles
/// (q and Q are empty at the terminal step).
void write_adjoint_csv(std::ostream& os, const AdjointFirst& first, const AdjointSecond& second,
                       std::size_t max_particles);

/// Plain-text "key = value" diagnostics block.
void write_adjoint_summary(std::ostream& os, const AdjointFirst& first, const AdjointSecond& second);

}  // namespace mfc
