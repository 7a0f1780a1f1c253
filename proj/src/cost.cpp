#include "mfc/cost.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mfc/io.hpp"
#include "mfc/stats.hpp"

namespace mfc {

namespace {

class CostObserver final : public EnsembleObserver {
  public:
    CostObserver(const ProblemSpec& spec, const TimeGrid& grid, std::size_t N)
        : spec_(spec), grid_(grid), acc_(N, 0.0) {}

    bool wants_running_cost() const override { return true; }
    void running_cost(std::size_t, std::span<const double> hbar) override {
        const double dt = grid_.dt();
        for (std::size_t p = 0; p < acc_.size(); ++p) acc_[p] += dt * hbar[p];
    }
    void node(std::size_t k, std::span<const double> states, std::span<const double>, double mean) override {
        if (k == grid_.steps())
            for (std::size_t p = 0; p < acc_.size(); ++p) acc_[p] = acc_[p] + spec_.g(states[p], mean);
    }

    CostEstimate finish() {
        CostEstimate c;
        const auto ms = mean_stderr(acc_);
        c.value = ms.mean;
        c.stderr_ = ms.stderr_;
        c.particles = acc_.size();
        c.steps = grid_.steps();
        c.per_particle = std::move(acc_);
        return c;
    }

  private:
    const ProblemSpec& spec_;
    TimeGrid grid_;
    std::vector<double> acc_;
};

void check_replay(const ProblemSpec& spec, const PathBundle& paths, const std::string& signature, std::size_t n) {
    if (paths.control_signature != signature)
        throw std::invalid_argument("estimate_cost: paths were generated by '" + paths.control_signature +
                                    "', not by '" + signature + "'");
    if (n != spec.actions.size()) throw std::invalid_argument("estimate_cost: action count mismatch");
}

// Feeds stored paths through the observer exactly as the simulator would.
template <class Running>
CostEstimate replay(const ProblemSpec& spec, const PathBundle& paths, std::size_t hold, Running&& running) {
    const std::size_t N = paths.particles, K = paths.grid.steps();
    CostObserver obs(spec, paths.grid, N);
    std::vector<double> hbar(N);
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t ko = hold * (k / hold);
        const double t = paths.grid.t(k), m = paths.means[k];
        for (std::size_t p = 0; p < N; ++p) hbar[p] = running(k, t, paths.state(p, k), paths.state(p, ko), m);
        obs.running_cost(k, hbar);
    }
    obs.node(K, paths.states_at(K), paths.states_at(K), paths.means[K]);
    return obs.finish();
}

}  // namespace

CostEstimate estimate_cost(const ProblemSpec& spec, const PathBundle& paths, const StrictControl& u) {
    check_replay(spec, paths, u.signature(), u.n_actions());
    return replay(spec, paths, u.hold(), [&](std::size_t k, double t, double x, double observed, double m) {
        return strict_running_cost(spec, t, x, m, spec.actions[u.index(k, observed)]);
    });
}

CostEstimate estimate_cost(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu) {
    check_replay(spec, paths, mu.signature(), mu.n_actions());
    std::vector<double> w(mu.n_actions());
    return replay(spec, paths, mu.hold(), [&](std::size_t k, double t, double x, double observed, double m) {
        mu.weights(k, observed, w);
        return relaxed_running_cost(spec, t, x, m, w);
    });
}

CostEstimate simulate_cost(const ProblemSpec& spec, const StrictControl& u, const SimConfig& cfg) {
    CostObserver obs(spec, cfg.grid, cfg.particles);
    stream_strict(spec, u, cfg, obs);
    return obs.finish();
}

CostEstimate simulate_cost(const ProblemSpec& spec, const RelaxedControl& mu, const SimConfig& cfg) {
    CostObserver obs(spec, cfg.grid, cfg.particles);
    stream_relaxed(spec, mu, cfg, obs);
    return obs.finish();
}

std::vector<GapRow> value_gap_experiment(const ProblemSpec& spec, const RelaxedControl& mu,
                                         std::span<const std::size_t> m_list, const SimConfig& cfg) {
    if (m_list.empty()) throw std::invalid_argument("value_gap_experiment: empty subdivision list");
    for (std::size_t i = 0; i < m_list.size(); ++i)
        if (m_list[i] < 1 || (i > 0 && m_list[i] <= m_list[i - 1]))
            throw std::invalid_argument("value_gap_experiment: subdivisions must be positive and increasing");
    std::vector<GapRow> rows;
    for (std::size_t m : m_list) {
        SimConfig fine = cfg;
        fine.grid = cfg.grid.refined(m);
        GapRow row;
        row.m = m;
        row.chatter = simulate_cost(spec, chattering({mu, m}), fine);
        row.relaxed = simulate_cost(spec, refine(mu, m), fine);
        row.chatter.per_particle.clear();
        row.relaxed.per_particle.clear();
        row.gap = std::abs(row.chatter.value - row.relaxed.value);
        row.pooled_stderr = std::hypot(row.chatter.stderr_, row.relaxed.stderr_);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_gap_csv(std::ostream& os, std::span<const GapRow> rows) {
    os << "m,J_chatter,stderr_chatter,J_relaxed,stderr_relaxed,gap\n";
    for (const auto& r : rows)
        os << r.m << ',' << format_real(r.chatter.value) << ',' << format_real(r.chatter.stderr_) << ','
           << format_real(r.relaxed.value) << ',' << format_real(r.relaxed.stderr_) << ',' << format_real(r.gap)
           << "\n";
}

}  // namespace mfc
