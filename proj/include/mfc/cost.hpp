#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mfc/controls.hpp"
#include "mfc/problem.hpp"
#include "mfc/simulation.hpp"

namespace mfc {

struct CostEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t particles = 0;
    std::size_t steps = 0;
    std::vector<double> per_particle;  // sum_k dt hbar_k + g(X_K, m_K) per particle
};

/// J = E[ sum_k dt sum_i h(t_k, X_k, m_k, a_i) alpha^i_k + g(X_K, m_K) ]
/// (left-endpoint rule). The paths must have been generated by the same
/// control (compared by signature).
CostEstimate estimate_cost(const ProblemSpec& spec, const PathBundle& paths, const StrictControl& u);
CostEstimate estimate_cost(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu);

/// Simulate and evaluate without storing the paths. Bit-identical to
/// estimate_cost(simulate_*(...)).
CostEstimate simulate_cost(const ProblemSpec& spec, const StrictControl& u, const SimConfig& cfg);
CostEstimate simulate_cost(const ProblemSpec& spec, const RelaxedControl& mu, const SimConfig& cfg);

struct GapRow {
    std::size_t m = 0;
    CostEstimate chatter;
    CostEstimate relaxed;
    double gap = 0.0;
    double pooled_stderr = 0.0;
};

/// For each m: J(chattering(mu, m)) against J(mu) with both evaluated on the
/// grid refined m times under the same seed (common random numbers).
std::vector<GapRow> value_gap_experiment(const ProblemSpec& spec, const RelaxedControl& mu,
                                         std::span<const std::size_t> m_list, const SimConfig& cfg);

/// Columns: m,J_chatter,stderr_chatter,J_relaxed,stderr_relaxed,gap
void write_gap_csv(std::ostream& os, std::span<const GapRow> rows);

}  // namespace mfc
