#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "mfc/adjoint.hpp"
#include "mfc/controls.hpp"
#include "mfc/problem.hpp"
#include "mfc/simulation.hpp"

namespace mfc {

/// H = b p + sigma q - h. Throws std::domain_error on non-finite input or output.
double hamiltonian(const ProblemSpec& spec, double t, double x, double y, double a, double p, double q);

/// Generalized Hamiltonian at action a for the reference pair whose diffusion
/// at (t, X_t, E X_t) is sigma_bar:
///   H(t, x, y, a, p, q - P sigma_bar) + sigma(t, x, y, a)^2 P / 2.
double h_function(const ProblemSpec& spec, double t, double x, double y, double a, double p, double q, double P,
                  double sigma_bar);

/// Weight-average of h_function over the action grid (value at a measure).
double h_function(const ProblemSpec& spec, double t, double x, double y, std::span<const double> weights,
                  double p, double q, double P, double sigma_bar);

struct SmpReport {
    double horizon = 0.0;
    /// E int [max_a Hf(t, a) - Hf(t, mu_t)] dt, the supremum taken pointwise in
    /// (particle, t). Non-negative by construction.
    double global_residual = 0.0;
    double global_stderr = 0.0;
    /// sup_a E int Hf(t, a) dt - E int Hf(t, mu_t) dt over constant actions.
    double constant_action_residual = 0.0;
    double constant_action_stderr = 0.0;
    std::size_t best_constant_action = 0;
    /// Per step: ensemble mean of max_a Hf - Hf(mu).
    std::vector<double> per_time_violation;
    /// Per step: max_a (ensemble mean of Hf(a)) - ensemble mean of Hf(mu).
    std::vector<double> per_time_constant_violation;
};

/// Called for every (step, particle) with the h-function at each grid action
/// and at the control's measure.
using HFunctionVisitor =
    std::function<void(std::size_t k, std::size_t particle, std::span<const double> h_actions, double h_control)>;

void visit_h_function(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                      const AdjointFirst& first, const AdjointSecond& second, const HFunctionVisitor& visit);

SmpReport smp_residual(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                       const AdjointFirst& first, const AdjointSecond& second);

struct NearOptimality {
    double epsilon = 0.0;
    double bound = 0.0;  // T eps^{1/3} + 3 stderr
    double residual = 0.0;
    bool passed = false;
};

/// residual <= T eps^{1/3} + 3 stderr. Throws on negative epsilon.
NearOptimality near_optimality_check(double residual, double stderr_, double horizon, double epsilon);
NearOptimality near_optimality_check(const SmpReport& report, double epsilon);

/// CSV "k,violation,constant_violation".
void write_smp_csv(std::ostream& os, const SmpReport& report);
void write_smp_summary(std::ostream& os, const SmpReport& report, const NearOptimality& check);

}  // namespace mfc
