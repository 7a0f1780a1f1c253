#include "mfc/smp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include "mfc/io.hpp"
#include "mfc/stats.hpp"

namespace mfc {

namespace {

void require_finite(std::initializer_list<double> vals, const char* where) {
    for (double v : vals)
        if (!std::isfinite(v)) throw std::domain_error(std::string(where) + ": non-finite value");
}

}  // namespace

double hamiltonian(const ProblemSpec& spec, double t, double x, double y, double a, double p, double q) {
    require_finite({t, x, y, a, p, q}, "hamiltonian");
    const double v = spec.b(t, x, y, a) * p + spec.sigma(t, x, y, a) * q - spec.h(t, x, y, a);
    require_finite({v}, "hamiltonian");
    return v;
}

double h_function(const ProblemSpec& spec, double t, double x, double y, double a, double p, double q, double P,
                  double sigma_bar) {
    require_finite({P, sigma_bar}, "h_function");
    const double s = spec.sigma(t, x, y, a);
    const double v = hamiltonian(spec, t, x, y, a, p, q - P * sigma_bar) + 0.5 * s * s * P;
    require_finite({v}, "h_function");
    return v;
}

double h_function(const ProblemSpec& spec, double t, double x, double y, std::span<const double> weights,
                  double p, double q, double P, double sigma_bar) {
    if (weights.size() != spec.actions.size()) throw std::invalid_argument("h_function: weight size mismatch");
    double v = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (weights[i] != 0.0) v += weights[i] * h_function(spec, t, x, y, spec.actions[i], p, q, P, sigma_bar);
    return v;
}

void visit_h_function(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                      const AdjointFirst& first, const AdjointSecond& second, const HFunctionVisitor& visit) {
    if (paths.control_signature != mu.signature())
        throw std::invalid_argument("smp: paths were generated by '" + paths.control_signature + "', not by '" +
                                    mu.signature() + "'");
    const std::size_t N = paths.particles, K = paths.grid.steps(), n = spec.actions.size();
    if (first.particles != N || first.steps != K || second.particles != N || second.steps != K)
        throw std::invalid_argument("smp: adjoints were solved on different paths");
    if (mu.n_actions() != n) throw std::invalid_argument("smp: action count mismatch");

    std::vector<double> w(n), sig(n), hv(n);
    for (std::size_t k = 0; k < K; ++k) {
        const double t = paths.grid.t(k);
        const double m = paths.means[k];
        const std::size_t ko = mu.observation_step(k);
        for (std::size_t p = 0; p < N; ++p) {
            const double x = paths.state(p, k);
            mu.weights(k, paths.state(p, ko), w);
            double sigma_bar = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sig[i] = spec.sigma(t, x, m, spec.actions[i]);
                if (w[i] != 0.0) sigma_bar += sig[i] * w[i];
            }
            const double pk = first.p_at(p, k), qk = first.q_at(p, k), Pk = second.P_at(p, k);
            const double qs = qk - Pk * sigma_bar;
            double hmu = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = spec.actions[i];
                hv[i] = spec.b(t, x, m, a) * pk + sig[i] * qs - spec.h(t, x, m, a) + 0.5 * sig[i] * sig[i] * Pk;
                if (w[i] != 0.0) hmu += w[i] * hv[i];
            }
            if (!std::isfinite(hmu)) throw std::domain_error("smp: non-finite h-function value");
            visit(k, p, hv, hmu);
        }
    }
}

SmpReport smp_residual(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                       const AdjointFirst& first, const AdjointSecond& second) {
    const std::size_t N = paths.particles, K = paths.grid.steps(), n = spec.actions.size();
    const double dt = paths.grid.dt();
    SmpReport r;
    r.horizon = paths.grid.horizon();
    r.per_time_violation.assign(K, 0.0);
    r.per_time_constant_violation.assign(K, 0.0);

    std::vector<double> pointwise(N, 0.0);    // per particle: sum_k dt (max - control)
    std::vector<double> by_action(N * n, 0.0);  // per particle, per action: sum_k dt H(a)
    std::vector<double> on_control(N, 0.0);   // per particle: sum_k dt H(mu)
    std::vector<double> gap_k(N), hmu_k(N), ha_k(N * n);

    auto flush_step = [&](std::size_t k) {
        r.per_time_violation[k] = shifted_mean(gap_k);
        const double mean_mu = shifted_mean(hmu_k);
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> col(N);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < N; ++p) col[p] = ha_k[p * n + i];
            best = std::max(best, shifted_mean(col));
        }
        r.per_time_constant_violation[k] = best - mean_mu;
    };

    std::size_t current = 0;
    visit_h_function(spec, paths, mu, first, second,
                     [&](std::size_t k, std::size_t p, std::span<const double> hv, double hmu) {
                         if (k != current) {
                             flush_step(current);
                             current = k;
                         }
                         const double best = *std::max_element(hv.begin(), hv.end());
                         gap_k[p] = best - hmu;
                         hmu_k[p] = hmu;
                         pointwise[p] += dt * (best - hmu);
                         on_control[p] += dt * hmu;
                         for (std::size_t i = 0; i < n; ++i) {
                             ha_k[p * n + i] = hv[i];
                             by_action[p * n + i] += dt * hv[i];
                         }
                     });
    if (K > 0) flush_step(current);

    const auto g = mean_stderr(pointwise);
    r.global_residual = g.mean;
    r.global_stderr = g.stderr_;

    const double mean_control = shifted_mean(on_control);
    std::vector<double> col(N);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < N; ++p) col[p] = by_action[p * n + i];
        const double v = shifted_mean(col);
        if (v > best) {
            best = v;
            r.best_constant_action = i;
        }
    }
    std::vector<double> diff(N);
    for (std::size_t p = 0; p < N; ++p) diff[p] = by_action[p * n + r.best_constant_action] - on_control[p];
    r.constant_action_residual = best - mean_control;
    r.constant_action_stderr = mean_stderr(diff).stderr_;
    return r;
}

NearOptimality near_optimality_check(double residual, double stderr_, double horizon, double epsilon) {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("near_optimality_check: epsilon must be >= 0");
    NearOptimality out;
    out.epsilon = epsilon;
    out.residual = residual;
    out.bound = horizon * std::cbrt(epsilon) + 3.0 * stderr_;
    out.passed = residual <= out.bound;
    return out;
}

NearOptimality near_optimality_check(const SmpReport& report, double epsilon) {
    return near_optimality_check(report.global_residual, report.global_stderr, report.horizon, epsilon);
}

void write_smp_csv(std::ostream& os, const SmpReport& report) {
    os << "k,violation,constant_violation\n";
    for (std::size_t k = 0; k < report.per_time_violation.size(); ++k)
        os << k << ',' << format_real(report.per_time_violation[k]) << ','
           << format_real(report.per_time_constant_violation[k]) << "\n";
}

void write_smp_summary(std::ostream& os, const SmpReport& report, const NearOptimality& check) {
    os << "global_residual = " << format_real(report.global_residual) << "\n";
    os << "global_stderr = " << format_real(report.global_stderr) << "\n";
    os << "constant_action_residual = " << format_real(report.constant_action_residual) << "\n";
    os << "constant_action_stderr = " << format_real(report.constant_action_stderr) << "\n";
    os << "best_constant_action = " << report.best_constant_action << "\n";
    os << "epsilon = " << format_real(check.epsilon) << "\n";
    os << "bound = " << format_real(check.bound) << "\n";
    os << "near_optimality = " << (check.passed ? "pass" : "fail") << "\n";
}

}  // namespace mfc
