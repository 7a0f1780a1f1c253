#include "mfc/simulation.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mfc/io.hpp"
#include "mfc/parallel.hpp"
#include "mfc/stats.hpp"

namespace mfc {

void SimConfig::validate() const {
    if (particles < 2) throw std::invalid_argument("simulation needs at least 2 particles");
    if (workers < 1) throw std::invalid_argument("simulation needs at least 1 worker");
    if (state_clamp && !(*state_clamp > 0.0)) throw std::invalid_argument("state clamp must be positive");
}

namespace {

template <class Control>
void check_grid(const Control& c, const ProblemSpec& spec, const SimConfig& cfg) {
    cfg.validate();
    require_complete(spec);
    if (c.n_actions() != spec.actions.size())
        throw std::invalid_argument("control and problem disagree on the number of actions");
    if (c.steps() != 0 && c.steps() != cfg.grid.steps())
        throw std::invalid_argument("control '" + c.signature() + "' is defined on a different time grid");
    if (std::abs(cfg.grid.horizon() - spec.horizon) > 1e-12 * spec.horizon)
        throw std::invalid_argument("simulation grid horizon differs from the problem horizon");
}

[[noreturn]] void non_finite(std::size_t p, std::size_t k) {
    std::ostringstream os;
    os << "non-finite state for particle " << p << " at step " << k + 1;
    throw std::runtime_error(os.str());
}

// Shared Euler loop. `move(p, k, t, x, observed, mean, eff, running)` returns
// X_{k+1}, writes the effective increment and, when `running` is non-null, the
// control-averaged running cost at (t_k, X_k).
template <class Move>
void run_ensemble(const SimConfig& cfg, double x0, std::size_t hold, Move&& move, EnsembleObserver& obs) {
    const std::size_t N = cfg.particles;
    const std::size_t K = cfg.grid.steps();
    const bool want_running = obs.wants_running_cost();
    std::vector<double> x(N, x0), next(N), observed(N, x0), eff(N), running(want_running ? N : 0);
    for (std::size_t k = 0; k < K; ++k) {
        if (k % hold == 0) observed = x;
        const double mean = shifted_mean(x);
        obs.node(k, x, observed, mean);
        const double t = cfg.grid.t(k);
        parallel_for(N, cfg.workers, [&](std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p) {
                double v = move(p, k, t, x[p], observed[p], mean, eff[p], want_running ? &running[p] : nullptr);
                if (!std::isfinite(v)) non_finite(p, k);
                if (cfg.state_clamp) v = std::clamp(v, -*cfg.state_clamp, *cfg.state_clamp);
                next[p] = v;
            }
        });
        if (want_running) obs.running_cost(k, running);
        obs.increment(k, eff);
        x.swap(next);
    }
    obs.node(K, x, x, shifted_mean(x));
}

class BundleRecorder final : public EnsembleObserver {
  public:
    explicit BundleRecorder(PathBundle& b) : b_(b) {
        const std::size_t N = b.particles, K = b.grid.steps();
        b_.states.resize((K + 1) * N);
        b_.means.resize(K + 1);
        b_.effective_noise.resize(K * N);
    }
    void node(std::size_t k, std::span<const double> states, std::span<const double>, double mean) override {
        std::copy(states.begin(), states.end(), b_.states.begin() + static_cast<std::ptrdiff_t>(k * b_.particles));
        b_.means[k] = mean;
    }
    void increment(std::size_t k, std::span<const double> eff) override {
        std::copy(eff.begin(), eff.end(),
                  b_.effective_noise.begin() + static_cast<std::ptrdiff_t>(k * b_.particles));
    }

  private:
    PathBundle& b_;
};

PathBundle empty_bundle(const ProblemSpec& spec, const SimConfig& cfg, const std::string& signature) {
    PathBundle b;
    b.particles = cfg.particles;
    b.grid = cfg.grid;
    b.seed = cfg.seed;
    b.n_actions = spec.actions.size();
    b.problem_id = spec.id;
    b.control_signature = signature;
    return b;
}

}  // namespace

void stream_strict(const ProblemSpec& spec, const StrictControl& u, const SimConfig& cfg, EnsembleObserver& obs) {
    check_grid(u, spec, cfg);
    const CounterNormal gen(cfg.seed);
    const double dt = cfg.grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const auto& A = spec.actions;
    // Controls with a planner decide a whole hold period per particle at once.
    const std::size_t hold = u.hold(), K = cfg.grid.steps();
    const bool planned = hold > 1 && u.has_planner();
    std::vector<std::size_t> plans(planned ? cfg.particles * hold : 0);
    auto move = [&](std::size_t p, std::size_t k, double t, double x, double observed, double mean, double& eff,
                    double* running) {
        std::size_t i;
        if (planned) {
            std::size_t* block = plans.data() + p * hold;
            if (k % hold == 0) u.plan(k, observed, std::span<std::size_t>(block, std::min(hold, K - k)));
            i = block[k % hold];
        } else {
            i = u.index(k, observed);
        }
        const double a = A[i];
        const double dw = sqrt_dt * gen(p, k, i);
        eff = dw;
        if (running) *running = strict_running_cost(spec, t, x, mean, a);
        return x + spec.b(t, x, mean, a) * dt + spec.sigma(t, x, mean, a) * dw;
    };
    run_ensemble(cfg, spec.x0, u.hold(), move, obs);
}

void stream_relaxed(const ProblemSpec& spec, const RelaxedControl& mu, const SimConfig& cfg,
                    EnsembleObserver& obs) {
    check_grid(mu, spec, cfg);
    const CounterNormal gen(cfg.seed);
    const double dt = cfg.grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const auto& A = spec.actions;
    const std::size_t n = A.size();
    // The support (non-zero weights, in index order) of each particle's current
    // measure. Weights that only change at hold boundaries are evaluated once
    // per period and kept per particle; otherwise the slot is refreshed each step.
    const std::size_t hold = mu.hold();
    const bool cached = hold > 1 && mu.hold_invariant();
    const std::size_t slots = cached ? cfg.particles : 1;
    std::vector<std::size_t> support_size(slots), support_index(slots * n);
    std::vector<double> support_weight(slots * n);
    auto move = [&](std::size_t p, std::size_t k, double t, double x, double observed, double mean, double& eff,
                    double* running) {
        thread_local std::vector<double> w;
        thread_local std::vector<std::size_t> local_index;
        thread_local std::vector<double> local_weight;
        std::size_t* idx;
        double* wt;
        std::size_t count;
        const auto refresh = [&](std::size_t* out_i, double* out_w) {
            w.resize(n);
            mu.weights(k, observed, w);
            std::size_t c = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (w[i] != 0.0) {  // zero intensity contributes nothing
                    out_i[c] = i;
                    out_w[c] = w[i];
                    ++c;
                }
            return c;
        };
        if (cached) {
            idx = support_index.data() + p * n;
            wt = support_weight.data() + p * n;
            if (k % hold == 0) support_size[p] = refresh(idx, wt);
            count = support_size[p];
        } else {
            local_index.resize(n);
            local_weight.resize(n);
            idx = local_index.data();
            wt = local_weight.data();
            count = refresh(idx, wt);
        }
        double drift = 0.0, diffusion = 0.0, e = 0.0, hbar = 0.0;
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t i = idx[j];
            const double a = A[i];
            const double sw = std::sqrt(wt[j]);
            const double dw = sqrt_dt * gen(p, k, i);
            drift += spec.b(t, x, mean, a) * wt[j];
            diffusion += spec.sigma(t, x, mean, a) * sw * dw;
            e += sw * dw;
            if (running) hbar += spec.h(t, x, mean, a) * wt[j];
        }
        eff = e;
        if (running) *running = hbar;
        return x + drift * dt + diffusion;
    };
    run_ensemble(cfg, spec.x0, mu.hold(), move, obs);
}

double strict_running_cost(const ProblemSpec& spec, double t, double x, double mean, double action) {
    return spec.h(t, x, mean, action);
}

double relaxed_running_cost(const ProblemSpec& spec, double t, double x, double mean, std::span<const double> w) {
    double hbar = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] != 0.0) hbar += spec.h(t, x, mean, spec.actions[i]) * w[i];
    return hbar;
}

PathBundle simulate_strict(const ProblemSpec& spec, const StrictControl& u, const SimConfig& cfg) {
    PathBundle b = empty_bundle(spec, cfg, u.signature());
    BundleRecorder rec(b);
    stream_strict(spec, u, cfg, rec);
    return b;
}

PathBundle simulate_relaxed(const ProblemSpec& spec, const RelaxedControl& mu, const SimConfig& cfg) {
    PathBundle b = empty_bundle(spec, cfg, mu.signature());
    BundleRecorder rec(b);
    stream_relaxed(spec, mu, cfg, rec);
    return b;
}

// ---------------------------------------------------------------------------

double MartingaleMeasurePath::terminal(std::size_t p, std::span<const std::size_t> cells) const {
    double m = 0.0;
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t i : cells) m += increment(p, k, i);
    return m;
}

MartingaleMeasurePath martingale_measure(const PathBundle& paths, const RelaxedControl& mu) {
    const std::size_t N = paths.particles, K = paths.grid.steps(), n = paths.n_actions;
    if (mu.n_actions() != n) throw std::invalid_argument("martingale_measure: action count mismatch");
    constexpr std::size_t cap = 50'000'000;
    if (N * K * n > cap) throw std::invalid_argument("martingale_measure: N*K*n exceeds the storage cap");
    MartingaleMeasurePath m;
    m.particles = N;
    m.steps = K;
    m.n_actions = n;
    m.dt = paths.grid.dt();
    m.increments.assign(N * K * n, 0.0);
    m.intensity.assign(N * n, 0.0);
    std::vector<double> w(n);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < N; ++p) {
            mu.weights(k, paths.state(p, mu.observation_step(k)), w);
            for (std::size_t i = 0; i < n; ++i) {
                m.increments[(k * N + p) * n + i] = w[i] == 0.0 ? 0.0 : std::sqrt(w[i]) * paths.noise(p, k, i);
                m.intensity[p * n + i] += m.dt * w[i];
            }
        }
    return m;
}

CovarianceEstimate orthogonality_check(const MartingaleMeasurePath& mmp, std::span<const std::size_t> cells_b,
                                       std::span<const std::size_t> cells_c) {
    for (std::size_t b : cells_b) {
        if (b >= mmp.n_actions) throw std::invalid_argument("orthogonality_check: cell index out of range");
        if (std::find(cells_c.begin(), cells_c.end(), b) != cells_c.end())
            throw std::invalid_argument("orthogonality_check: cell sets must be disjoint");
    }
    for (std::size_t c : cells_c)
        if (c >= mmp.n_actions) throw std::invalid_argument("orthogonality_check: cell index out of range");
    std::vector<double> prod(mmp.particles);
    for (std::size_t p = 0; p < mmp.particles; ++p) prod[p] = mmp.terminal(p, cells_b) * mmp.terminal(p, cells_c);
    const auto ms = mean_stderr(prod);
    return {ms.mean, ms.stderr_};
}

QuadraticVariationCheck quadratic_variation_check(const MartingaleMeasurePath& mmp,
                                                  std::span<const std::size_t> cells) {
    std::vector<double> sq(mmp.particles), inten(mmp.particles, 0.0);
    for (std::size_t p = 0; p < mmp.particles; ++p) {
        const double m = mmp.terminal(p, cells);
        sq[p] = m * m;
        for (std::size_t i : cells) {
            if (i >= mmp.n_actions) throw std::invalid_argument("quadratic_variation_check: cell out of range");
            inten[p] += mmp.intensity[p * mmp.n_actions + i];
        }
    }
    const auto ms = mean_stderr(sq);
    return {ms.mean, ms.stderr_, shifted_mean(inten)};
}

void write_paths_csv(std::ostream& os, const PathBundle& paths, std::size_t max_particles) {
    const std::size_t N = std::min(paths.particles, max_particles);
    os << "# seed=" << paths.seed << " particles=" << paths.particles << " steps=" << paths.grid.steps()
       << " problem=" << paths.problem_id << " control=" << paths.control_signature << "\n";
    os << "particle,step,t,state\n";
    for (std::size_t p = 0; p < N; ++p)
        for (std::size_t k = 0; k <= paths.grid.steps(); ++k)
            os << p << ',' << k << ',' << format_real(paths.grid.t(k)) << ',' << format_real(paths.state(p, k))
               << "\n";
}

}  // namespace mfc
