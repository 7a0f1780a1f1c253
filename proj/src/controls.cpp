#include "mfc/controls.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mfc/io.hpp"
#include "mfc/simulation.hpp"

namespace mfc {

TimeGrid::TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("time grid: horizon must be > 0");
    if (steps < 1) throw std::invalid_argument("time grid: need at least one step");
}

void StateBinning::validate() const {
    if (bins < 1) throw std::invalid_argument("state binning: need at least one bin");
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
        throw std::invalid_argument("state binning: need finite lo < hi");
}

std::size_t StateBinning::bin(double x) const noexcept {
    const double pos = (x - lo) / (hi - lo) * static_cast<double>(bins);
    if (!(pos > 0.0)) return 0;  // also catches NaN
    const auto b = static_cast<std::size_t>(pos);
    return std::min(b, bins - 1);
}

double StateBinning::center(std::size_t b) const noexcept {
    return lo + (hi - lo) * (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void normalize_weights(std::span<double> w) {
    double sum = 0.0;
    bool valid = true;
    for (double x : w) {
        valid &= (x >= 0.0) & (x <= std::numeric_limits<double>::max());  // false for NaN too
        sum += x;
    }
    if (!valid) {
        for (double x : w) {
            if (!std::isfinite(x)) throw std::invalid_argument("control weight is not finite");
            if (x < 0.0) throw std::invalid_argument("control weight is negative");
        }
    }
    if (!(sum > 0.0)) throw std::invalid_argument("control weights sum to zero");
    if (std::abs(sum - 1.0) > 1e-13)
        for (double& x : w) x /= sum;
}

// ---------------------------------------------------------------------------

ControlTable::ControlTable(std::size_t steps, StateBinning binning, std::size_t n_actions,
                           std::vector<double> weights)
    : steps_(steps), binning_(binning), n_(n_actions), w_(std::move(weights)) {
    binning_.validate();
    if (steps_ < 1 || n_ < 1) throw std::invalid_argument("control table: empty shape");
    if (w_.size() != steps_ * binning_.bins * n_) throw std::invalid_argument("control table: size mismatch");
    for (std::size_t c = 0; c < steps_ * binning_.bins; ++c)
        normalize_weights(std::span<double>(w_.data() + c * n_, n_));
}

ControlTable ControlTable::constant(std::size_t steps, StateBinning binning, std::span<const double> weights) {
    std::vector<double> w;
    w.reserve(steps * binning.bins * weights.size());
    for (std::size_t c = 0; c < steps * binning.bins; ++c) w.insert(w.end(), weights.begin(), weights.end());
    return ControlTable(steps, binning, weights.size(), std::move(w));
}

std::span<const double> ControlTable::row(std::size_t k, std::size_t bin) const {
    if (k >= steps_ || bin >= binning_.bins) throw std::out_of_range("control table: cell out of range");
    return {w_.data() + (k * binning_.bins + bin) * n_, n_};
}

void ControlTable::set_row(std::size_t k, std::size_t bin, std::span<const double> w) {
    if (k >= steps_ || bin >= binning_.bins) throw std::out_of_range("control table: cell out of range");
    if (w.size() != n_) throw std::invalid_argument("control table: row size mismatch");
    std::span<double> dst(w_.data() + (k * binning_.bins + bin) * n_, n_);
    std::copy(w.begin(), w.end(), dst.begin());
    normalize_weights(dst);
}

// ---------------------------------------------------------------------------

StrictControl::StrictControl(Rule rule, std::size_t n_actions, std::string signature, std::size_t hold,
                             std::size_t steps)
    : rule_(std::move(rule)), n_(n_actions), signature_(std::move(signature)), hold_(hold), steps_(steps) {
    if (!rule_) throw std::invalid_argument("strict control: empty rule");
    if (n_ < 1 || hold_ < 1) throw std::invalid_argument("strict control: n_actions and hold must be >= 1");
}

StrictControl StrictControl::constant(std::size_t index, std::size_t n_actions) {
    if (index >= n_actions) throw std::invalid_argument("strict control: index out of range");
    return StrictControl([index](std::size_t, double) { return index; }, n_actions,
                         "constant(" + std::to_string(index) + ")");
}

std::size_t StrictControl::index(std::size_t k, double observed_state) const {
    const std::size_t i = rule_(k, observed_state);
    if (i >= n_) throw std::out_of_range("strict control '" + signature_ + "' returned an invalid action index");
    return i;
}

void StrictControl::plan(std::size_t k0, double observed_state, std::span<std::size_t> out) const {
    if (k0 % hold_ != 0 || out.size() > hold_) throw std::invalid_argument("strict control: plan is not a hold block");
    if (!planner_) {
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = index(k0 + j, observed_state);
        return;
    }
    planner_(k0, observed_state, out);
    for (std::size_t i : out)
        if (i >= n_) throw std::out_of_range("strict control '" + signature_ + "' planned an invalid action index");
}

RelaxedControl::RelaxedControl(Rule rule, std::size_t n_actions, std::string signature, std::size_t hold,
                               std::size_t steps)
    : rule_(std::move(rule)), n_(n_actions), signature_(std::move(signature)), hold_(hold), steps_(steps) {
    if (!rule_) throw std::invalid_argument("relaxed control: empty rule");
    if (n_ < 1 || hold_ < 1) throw std::invalid_argument("relaxed control: n_actions and hold must be >= 1");
}

RelaxedControl::RelaxedControl(ControlTable table, std::string signature)
    : table_(std::make_shared<const ControlTable>(std::move(table))),
      n_(table_->n_actions()),
      signature_(std::move(signature)),
      hold_(1),
      steps_(table_->steps()) {}

RelaxedControl RelaxedControl::constant(std::vector<double> weights) {
    normalize_weights(weights);
    const std::size_t n = weights.size();
    std::string sig = "mixture(";
    for (std::size_t i = 0; i < n; ++i) sig += (i ? "," : "") + format_real(weights[i]);
    sig += ")";
    return RelaxedControl(
        [w = std::move(weights)](std::size_t, double, std::span<double> out) {
            std::copy(w.begin(), w.end(), out.begin());
        },
        n, sig);
}

void RelaxedControl::weights(std::size_t k, double observed_state, std::span<double> out) const {
    if (out.size() != n_) throw std::invalid_argument("relaxed control: output size mismatch");
    if (table_) {
        const auto row = table_->row(k, table_->binning().bin(observed_state));
        std::copy(row.begin(), row.end(), out.begin());
        return;
    }
    rule_(k, observed_state, out);
    if (!trusted_) normalize_weights(out);
}

RelaxedControl delta_embedding(const StrictControl& u) {
    const std::size_t n = u.n_actions();
    RelaxedControl mu(
        [u](std::size_t k, double x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            out[u.index(k, x)] = 1.0;
        },
        n, u.signature(), u.hold(), u.steps());
    mu.trusted_ = true;
    return mu;
}

ControlTable tabulate(const RelaxedControl& mu, std::size_t steps, const StateBinning& binning) {
    binning.validate();
    const std::size_t n = mu.n_actions();
    std::vector<double> w(steps * binning.bins * n);
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t b = 0; b < binning.bins; ++b)
            mu.weights(k, binning.center(b), std::span<double>(w.data() + (k * binning.bins + b) * n, n));
    return ControlTable(steps, binning, n, std::move(w));
}

double control_distance(const StrictControl& u, const StrictControl& v, const PathBundle& paths) {
    const std::size_t K = paths.grid.steps();
    if ((u.steps() != 0 && u.steps() != K) || (v.steps() != 0 && v.steps() != K))
        throw std::invalid_argument("control_distance: controls and paths use different time grids");
    const std::size_t N = paths.particles;
    std::vector<double> per_particle(N, 0.0);
    const double dt = paths.grid.dt();
    for (std::size_t p = 0; p < N; ++p) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            const double xu = paths.state(p, u.observation_step(k));
            const double xv = paths.state(p, v.observation_step(k));
            if (u.index(k, xu) != v.index(k, xv)) acc += dt;
        }
        per_particle[p] = acc;
    }
    return std::accumulate(per_particle.begin(), per_particle.end(), 0.0) / static_cast<double>(N);
}

// ---------------------------------------------------------------------------

namespace {

void apportion(std::span<const double> weights, std::size_t m, std::span<std::size_t> counts,
               std::span<double> rem) {
    const std::size_t n = weights.size();
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0) {
            counts[i] = 0;
            rem[i] = 0.0;
            continue;
        }
        const double target = static_cast<double>(m) * weights[i];
        const double fl = std::floor(target);
        counts[i] = static_cast<std::size_t>(fl);
        rem[i] = target - fl;
        assigned += counts[i];
    }
    // Guard against weights summing a hair above one.
    while (assigned > m) {
        const auto i = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[i];
        --assigned;
    }
    for (; assigned < m; ++assigned) {
        const std::size_t i = argmax(rem);
        ++counts[i];
        rem[i] = -1.0;
    }
}

}  // namespace

std::vector<std::size_t> largest_remainder_counts(std::span<const double> weights, std::size_t m) {
    std::vector<std::size_t> counts(weights.size(), 0);
    std::vector<double> rem(weights.size(), 0.0);
    apportion(weights, m, counts, rem);
    return counts;
}

namespace {

double radical_inverse2(std::size_t j) {
    double r = 0.0;
    double f = 0.5;
    while (j) {
        if (j & 1U) r += f;
        j >>= 1U;
        f *= 0.5;
    }
    return r;
}

// rank[j] = position of sub-step j when sub-steps are sorted by radical inverse.
std::vector<std::size_t> dealing_ranks(std::size_t m) {
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [](std::size_t a, std::size_t b) { return radical_inverse2(a) < radical_inverse2(b); });
    std::vector<std::size_t> rank(m);
    for (std::size_t pos = 0; pos < m; ++pos) rank[order[pos]] = pos;
    return rank;
}

}  // namespace

StrictControl chattering(const ChatteringSchedule& schedule) {
    const std::size_t m = schedule.subdivisions;
    if (m < 1) throw std::invalid_argument("chattering: subdivisions must be >= 1");
    const RelaxedControl& base = schedule.base;
    const std::size_t n = base.n_actions();
    auto ranks = std::make_shared<const std::vector<std::size_t>>(dealing_ranks(m));
    // Action of every sub-step of one coarse step, in sub-step order.
    auto deal = [base, m, n, ranks](std::size_t coarse, double x, std::size_t first, std::span<std::size_t> out) {
        thread_local std::vector<double> w, rem;
        thread_local std::vector<std::size_t> counts;
        w.resize(n);
        rem.resize(n);
        counts.resize(n);
        base.weights(coarse, x, w);
        apportion(w, m, counts, rem);
        for (std::size_t j = 0; j < out.size(); ++j) {
            const std::size_t r = (*ranks)[first + j];
            std::size_t cumulative = 0, i = 0;
            for (; i + 1 < n; ++i) {
                cumulative += counts[i];
                if (r < cumulative) break;
            }
            out[j] = i;
        }
    };
    auto rule = [deal, m](std::size_t k, double x) -> std::size_t {
        std::size_t i = 0;
        deal(k / m, x, k % m, std::span<std::size_t>(&i, 1));
        return i;
    };
    StrictControl u(std::move(rule), n, "chatter(m=" + std::to_string(m) + ";" + base.signature() + ")",
                    base.hold() * m, base.steps() * m);
    u.planner_ = [deal, m](std::size_t k0, double x, std::span<std::size_t> out) {
        for (std::size_t j = 0; j < out.size();) {
            const std::size_t k = k0 + j, len = std::min(m - k % m, out.size() - j);
            deal(k / m, x, k % m, out.subspan(j, len));
            j += len;
        }
    };
    return u;
}

RelaxedControl refine(const RelaxedControl& base, std::size_t m) {
    if (m < 1) throw std::invalid_argument("refine: subdivisions must be >= 1");
    RelaxedControl mu([base, m](std::size_t k, double x, std::span<double> out) { base.weights(k / m, x, out); },
                      base.n_actions(), "refine(m=" + std::to_string(m) + ";" + base.signature() + ")",
                      base.hold() * m, base.steps() * m);
    mu.trusted_ = true;
    mu.hold_invariant_ = base.hold_invariant();
    return mu;
}

// ---------------------------------------------------------------------------

void write_control_table(std::ostream& os, const ControlTable& table, double horizon, const ActionGrid& actions) {
    if (actions.size() != table.n_actions()) throw std::invalid_argument("write_control_table: action count mismatch");
    const auto& bn = table.binning();
    os << "mfc-relaxed-control 1\n";
    os << "horizon " << format_real(horizon) << "\n";
    os << "steps " << table.steps() << "\n";
    os << "actions " << actions.size();
    for (double a : actions.values()) os << ' ' << format_real(a);
    os << "\n";
    os << "binning " << bn.bins << ' ' << format_real(bn.lo) << ' ' << format_real(bn.hi) << "\n";
    for (std::size_t k = 0; k < table.steps(); ++k)
        for (std::size_t b = 0; b < bn.bins; ++b) {
            os << k << ' ' << b;
            for (double w : table.row(k, b)) os << ' ' << format_real(w);
            os << "\n";
        }
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string tok; ss >> tok;) out.push_back(tok);
    return out;
}

std::size_t parse_count(const std::string& tok, const char* what) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != tok.size() || tok.empty() || tok[0] == '-')
        throw std::invalid_argument(std::string("control file: bad ") + what + " '" + tok + "'");
    return static_cast<std::size_t>(v);
}

}  // namespace

StoredControl read_control_table(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    auto next = [&](const char* key) {
        if (!std::getline(is, line)) throw std::invalid_argument(std::string("control file: missing ") + key);
        ++lineno;
        auto toks = split_ws(line);
        if (toks.empty() || toks[0] != key)
            throw std::invalid_argument("control file line " + std::to_string(lineno) + ": expected '" + key + "'");
        return toks;
    };
    auto magic = next("mfc-relaxed-control");
    if (magic.size() != 2 || magic[1] != "1") throw std::invalid_argument("control file: unsupported version");
    auto hz = next("horizon");
    if (hz.size() != 2) throw std::invalid_argument("control file: bad horizon line");
    const double horizon = parse_real(hz[1]);
    auto st = next("steps");
    if (st.size() != 2) throw std::invalid_argument("control file: bad steps line");
    const std::size_t steps = parse_count(st[1], "steps");
    auto ac = next("actions");
    if (ac.size() < 2) throw std::invalid_argument("control file: bad actions line");
    const std::size_t n = parse_count(ac[1], "action count");
    if (ac.size() != n + 2) throw std::invalid_argument("control file: action count mismatch");
    std::vector<double> actions;
    for (std::size_t i = 0; i < n; ++i) actions.push_back(parse_real(ac[2 + i]));
    auto bn = next("binning");
    if (bn.size() != 4) throw std::invalid_argument("control file: bad binning line");
    StateBinning binning{parse_real(bn[2]), parse_real(bn[3]), parse_count(bn[1], "bin count")};
    binning.validate();

    std::vector<double> w;
    w.reserve(steps * binning.bins * n);
    for (std::size_t k = 0; k < steps; ++k)
        for (std::size_t b = 0; b < binning.bins; ++b) {
            if (!std::getline(is, line)) throw std::invalid_argument("control file: truncated weight rows");
            ++lineno;
            auto toks = split_ws(line);
            if (toks.size() != n + 2 || parse_count(toks[0], "step") != k || parse_count(toks[1], "bin") != b)
                throw std::invalid_argument("control file line " + std::to_string(lineno) + ": malformed row");
            for (std::size_t i = 0; i < n; ++i) w.push_back(parse_real(toks[2 + i]));
        }
    return StoredControl{ControlTable(steps, binning, n, std::move(w)), horizon, std::move(actions)};
}

}  // namespace mfc
