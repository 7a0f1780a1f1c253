#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mfc/adjoint.hpp"
#include "mfc/controls.hpp"
#include "mfc/problem.hpp"
#include "mfc/simulation.hpp"

namespace mfc {

enum class SeedPolicy { Fixed, Refreshed };

struct OptimizerConfig {
    std::size_t max_iters = 30;
    double damping = 0.5;
    double tolerance = 1e-6;
    RegressionBasis basis;
    SeedPolicy seed_policy = SeedPolicy::Fixed;
    StateBinning binning{-1.0, 1.0, 64};
    /// Stop after this many consecutive iterations without a new best cost.
    std::size_t stall_limit = 20;

    void validate() const;
};

struct TraceRow {
    std::size_t iteration = 0;
    double cost = 0.0;
    double cost_stderr = 0.0;
    double residual = 0.0;
    double residual_stderr = 0.0;
    double control_change = 0.0;  // max |w_new - w_old| over cells
};

struct OptimizerTrace {
    double horizon = 0.0;
    std::vector<TraceRow> rows;
};

struct OptimizerResult {
    ControlTable best;
    std::size_t best_iteration = 0;
    OptimizerTrace trace;
    bool converged = false;  // residual <= tolerance
    bool stalled = false;    // stall_limit reached
    std::optional<std::string> failure;
};

/// Successive approximations on the generalized Hamiltonian: simulate the
/// relaxed dynamics, solve both adjoints, then in every visited (step, bin)
/// cell move the weights towards the vertex maximizing the cell's average
/// h-function, w <- (1 - rho) w + rho e_{a*}. Cells already attaining the
/// maximum are left alone; unvisited cells copy the update of the nearest
/// visited bin at the same step. Returns the iterate with the lowest cost.
OptimizerResult optimize(const ProblemSpec& spec, const RelaxedControl& init, const OptimizerConfig& cfg,
                         const SimConfig& sim);

struct MinimizingSequenceSummary {
    std::vector<double> best_so_far;  // nonincreasing
    std::vector<double> residual;
    std::vector<double> epsilon;
    std::vector<bool> near_optimal;
};

/// epsilon_i = max(0, J_i - reference), reference defaulting to the best
/// cost in the trace.
MinimizingSequenceSummary minimizing_sequence_report(const OptimizerTrace& trace,
                                                     std::optional<double> reference = std::nullopt);

/// CSV "iter,J,stderr,residual,delta".
void write_trace_csv(std::ostream& os, const OptimizerTrace& trace);

}  // namespace mfc
