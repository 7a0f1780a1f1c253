#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfc/controls.hpp"
#include "mfc/problem.hpp"
#include "mfc/rng.hpp"

namespace mfc {

struct SimConfig {
    std::size_t particles = 10000;
    TimeGrid grid{1.0, 200};
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    /// When set, states are clamped to [-c, c] after every step.
    std::optional<double> state_clamp;

    void validate() const;
};

/// Interacting particle ensemble X^p_k, p < N, k <= K, stored step-major.
///
/// Per-action increments dW^i are not stored; noise(p, k, i) regenerates the
/// realized value from its counter-based stream. The effective increment
/// sum_i sqrt(alpha^i) dW^i that drove each particle is stored.
struct PathBundle {
    std::size_t particles = 0;
    TimeGrid grid{1.0, 1};
    std::uint64_t seed = 0;
    std::size_t n_actions = 0;
    std::string problem_id;
    std::string control_signature;

    std::vector<double> states;           // (K+1) x N
    std::vector<double> means;            // K+1, means[k] = shifted_mean(states at k)
    std::vector<double> effective_noise;  // K x N

    double state(std::size_t p, std::size_t k) const { return states[k * particles + p]; }
    std::span<const double> states_at(std::size_t k) const { return {states.data() + k * particles, particles}; }
    std::span<const double> effective_noise_at(std::size_t k) const {
        return {effective_noise.data() + k * particles, particles};
    }
    double noise(std::size_t p, std::size_t k, std::size_t action) const {
        return std::sqrt(grid.dt()) * CounterNormal(seed)(p, k, action);
    }
};

/// Receives the ensemble as it is simulated.
class EnsembleObserver {
  public:
    virtual ~EnsembleObserver() = default;
    /// Node k = 0..K. `observed` holds the states the control sees when choosing
    /// the step k -> k+1 (equal to `states` at k = K).
    virtual void node(std::size_t k, std::span<const double> states, std::span<const double> observed,
                      double mean) = 0;
    /// Effective Brownian increments of step k -> k+1.
    virtual void increment(std::size_t /*k*/, std::span<const double> /*effective_noise*/) {}
    /// Observers returning true receive running_cost() for every step k < K,
    /// computed from the same control decision that moved each particle.
    virtual bool wants_running_cost() const { return false; }
    virtual void running_cost(std::size_t /*k*/, std::span<const double> /*hbar*/) {}
};

/// h(t, x, mean, a) for the action a taken by a strict control.
double strict_running_cost(const ProblemSpec& spec, double t, double x, double mean, double action);
/// sum_i h(t, x, mean, a_i) w_i over the non-zero weights, in index order.
double relaxed_running_cost(const ProblemSpec& spec, double t, double x, double mean, std::span<const double> w);

/// Euler-Maruyama for dX = b(t, X, E X, u) dt + sigma(t, X, E X, u) dW with
/// E X_t replaced by the ensemble mean. The active action's stream drives
/// each particle.
PathBundle simulate_strict(const ProblemSpec& spec, const StrictControl& u, const SimConfig& cfg);
void stream_strict(const ProblemSpec& spec, const StrictControl& u, const SimConfig& cfg, EnsembleObserver& obs);

/// Relaxed dynamics driven by the orthogonal martingale measure
/// M(dt, {a_i}) = sqrt(alpha^i) dW^i:
///   X_{k+1} = X_k + sum_i b(a_i) alpha^i dt + sum_i sigma(a_i) sqrt(alpha^i) dW^i_k.
PathBundle simulate_relaxed(const ProblemSpec& spec, const RelaxedControl& mu, const SimConfig& cfg);
void stream_relaxed(const ProblemSpec& spec, const RelaxedControl& mu, const SimConfig& cfg,
                    EnsembleObserver& obs);

/// Increments dM^i_k = sqrt(alpha^i_k) dW^i_k of the martingale measure behind
/// a relaxed simulation, for every particle.
struct MartingaleMeasurePath {
    std::size_t particles = 0;
    std::size_t steps = 0;
    std::size_t n_actions = 0;
    double dt = 0.0;
    std::vector<double> increments;  // (k * N + p) * n + i
    std::vector<double> intensity;   // p * n + i: sum_k dt alpha^i_k

    double increment(std::size_t p, std::size_t k, std::size_t i) const {
        return increments[(k * particles + p) * n_actions + i];
    }
    /// M_T(cells) for particle p.
    double terminal(std::size_t p, std::span<const std::size_t> cells) const;
};

/// Rebuilds the martingale measure for paths simulated under mu.
MartingaleMeasurePath martingale_measure(const PathBundle& paths, const RelaxedControl& mu);

struct CovarianceEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

/// (1/N) sum_p M_T(B) M_T(C) for disjoint cell sets B and C.
CovarianceEstimate orthogonality_check(const MartingaleMeasurePath& mmp, std::span<const std::size_t> cells_b,
                                       std::span<const std::size_t> cells_c);

struct QuadraticVariationCheck {
    double second_moment = 0.0;  // (1/N) sum_p M_T(B)^2
    double stderr_ = 0.0;
    double intensity = 0.0;  // (1/N) sum_p int_0^T sum_{i in B} alpha^i dt
};

QuadraticVariationCheck quadratic_variation_check(const MartingaleMeasurePath& mmp,
                                                  std::span<const std::size_t> cells);

/// CSV dump "particle,step,t,state" after a commented header carrying seed,
/// particle count, step count and problem id. At most max_particles particles.
void write_paths_csv(std::ostream& os, const PathBundle& paths, std::size_t max_particles);

}  // namespace mfc
