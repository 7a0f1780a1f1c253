#include "mfc/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "mfc/cost.hpp"
#include "mfc/io.hpp"
#include "mfc/rng.hpp"
#include "mfc/smp.hpp"
#include "mfc/stats.hpp"

namespace mfc {

void OptimizerConfig::validate() const {
    if (max_iters < 1) throw std::invalid_argument("optimizer: max_iters must be >= 1");
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("optimizer: damping must be in (0, 1]");
    if (!(tolerance > 0.0)) throw std::invalid_argument("optimizer: tolerance must be positive");
    if (stall_limit < 1) throw std::invalid_argument("optimizer: stall_limit must be >= 1");
    basis.validate();
    binning.validate();
}

namespace {

ControlTable initial_table(const RelaxedControl& init, std::size_t steps, const StateBinning& binning) {
    if (const auto* t = init.table(); t && t->steps() == steps && t->binning() == binning) return *t;
    return tabulate(init, steps, binning);
}

}  // namespace

OptimizerResult optimize(const ProblemSpec& spec, const RelaxedControl& init, const OptimizerConfig& cfg,
                         const SimConfig& sim) {
    cfg.validate();
    sim.validate();
    const std::size_t K = sim.grid.steps(), N = sim.particles, n = spec.actions.size();
    const std::size_t B = cfg.binning.bins;
    if (init.n_actions() != n) throw std::invalid_argument("optimizer: action count mismatch");

    ControlTable table = initial_table(init, K, cfg.binning);
    OptimizerResult result{table, 0, {}, false, false, std::nullopt};
    result.trace.horizon = sim.grid.horizon();
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    std::vector<double> sums(K * B * n), hmu_sums(K * B), counts(K * B);
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        SimConfig run = sim;
        if (cfg.seed_policy == SeedPolicy::Refreshed) run.seed = substream_seed(sim.seed, "iteration-" + std::to_string(it));
        const RelaxedControl mu(table, "optimizer-iterate-" + std::to_string(it));

        TraceRow row;
        row.iteration = it;
        try {
            const PathBundle paths = simulate_relaxed(spec, mu, run);
            const CostEstimate cost = estimate_cost(spec, paths, mu);
            row.cost = cost.value;
            row.cost_stderr = cost.stderr_;
            const AdjointFirst first = solve_first_order(spec, paths, mu, cfg.basis, sim.workers);
            const AdjointSecond second = solve_second_order(spec, paths, mu, first, cfg.basis, sim.workers);

            std::fill(sums.begin(), sums.end(), 0.0);
            std::fill(hmu_sums.begin(), hmu_sums.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0.0);
            const double dt = sim.grid.dt();
            std::vector<double> pointwise(N, 0.0);
            visit_h_function(spec, paths, mu, first, second,
                             [&](std::size_t k, std::size_t p, std::span<const double> hv, double hmu) {
                                 const std::size_t cell = k * B + cfg.binning.bin(paths.state(p, k));
                                 for (std::size_t i = 0; i < n; ++i) sums[cell * n + i] += hv[i];
                                 hmu_sums[cell] += hmu;
                                 counts[cell] += 1.0;
                                 pointwise[p] += dt * (*std::max_element(hv.begin(), hv.end()) - hmu);
                             });
            const auto res = mean_stderr(pointwise);
            row.residual = res.mean;
            row.residual_stderr = res.stderr_;
        } catch (const std::exception& e) {
            result.failure = "iteration " + std::to_string(it) + ": " + e.what();
            break;
        }

        if (row.cost < best_cost) {
            best_cost = row.cost;
            result.best = table;
            result.best_iteration = it;
            since_best = 0;
        } else if (++since_best >= cfg.stall_limit) {
            result.trace.rows.push_back(row);
            result.stalled = true;
            break;
        }
        if (row.residual <= cfg.tolerance) {
            result.trace.rows.push_back(row);
            result.converged = true;
            break;
        }

        // Per-cell vertex update.
        ControlTable next = table;
        std::vector<double> w(n);
        double change = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            // target[b]: maximizing action for visited bins, npos when the cell
            // already attains the maximum.
            constexpr std::size_t keep = static_cast<std::size_t>(-1);
            std::vector<std::size_t> target(B, keep);
            std::vector<bool> visited(B, false);
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t cell = k * B + b;
                if (counts[cell] == 0.0) continue;
                visited[b] = true;
                const std::span<const double> s(sums.data() + cell * n, n);
                const std::size_t a = argmax(s);
                const double scale = std::max(1.0, std::abs(s[a]));
                if (s[a] - hmu_sums[cell] > 1e-12 * scale) target[b] = a;
            }
            // Unvisited bins follow the nearest visited bin (lower bin on ties).
            std::vector<std::size_t> source(B, keep);
            for (std::size_t b = 0; b < B; ++b) {
                if (visited[b]) {
                    source[b] = b;
                    continue;
                }
                std::size_t best_d = keep;
                for (std::size_t c = 0; c < B; ++c) {
                    if (!visited[c]) continue;
                    const std::size_t d = c > b ? c - b : b - c;
                    if (d < best_d) {
                        best_d = d;
                        source[b] = c;
                    }
                }
            }
            for (std::size_t b = 0; b < B; ++b) {
                if (source[b] == keep) continue;
                const auto src_row = table.row(k, source[b]);
                const std::size_t a = target[source[b]];
                if (a == keep && source[b] == b) continue;
                for (std::size_t i = 0; i < n; ++i) {
                    const double base = src_row[i];
                    w[i] = a == keep ? base : (1.0 - cfg.damping) * base + (i == a ? cfg.damping : 0.0);
                }
                const auto old_row = table.row(k, b);
                for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(w[i] - old_row[i]));
                next.set_row(k, b, w);
            }
        }
        row.control_change = change;
        result.trace.rows.push_back(row);
        table = std::move(next);
    }
    return result;
}

MinimizingSequenceSummary minimizing_sequence_report(const OptimizerTrace& trace, std::optional<double> reference) {
    if (trace.rows.empty()) throw std::invalid_argument("minimizing_sequence_report: empty trace");
    MinimizingSequenceSummary s;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : trace.rows) best = std::min(best, r.cost);
    const double ref = reference.value_or(best);
    double running = std::numeric_limits<double>::infinity();
    for (const auto& r : trace.rows) {
        running = std::min(running, r.cost);
        s.best_so_far.push_back(running);
        s.residual.push_back(r.residual);
        const double eps = std::max(0.0, r.cost - ref);
        s.epsilon.push_back(eps);
        s.near_optimal.push_back(near_optimality_check(r.residual, r.residual_stderr, trace.horizon, eps).passed);
    }
    return s;
}

void write_trace_csv(std::ostream& os, const OptimizerTrace& trace) {
    os << "iter,J,stderr,residual,delta\n";
    for (const auto& r : trace.rows)
        os << r.iteration << ',' << format_real(r.cost) << ',' << format_real(r.cost_stderr) << ','
           << format_real(r.residual) << ',' << format_real(r.control_change) << "\n";
}

}  // namespace mfc
