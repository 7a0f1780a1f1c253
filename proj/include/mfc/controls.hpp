#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfc/problem.hpp"

namespace mfc {

struct PathBundle;
struct ChatteringSchedule;

/// Uniform grid t_k = k T / K on [0, T].
class TimeGrid {
  public:
    TimeGrid(double horizon, std::size_t steps);

    double horizon() const noexcept { return horizon_; }
    std::size_t steps() const noexcept { return steps_; }
    double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
    double t(std::size_t k) const noexcept {
        return horizon_ * static_cast<double>(k) / static_cast<double>(steps_);
    }
    TimeGrid refined(std::size_t m) const { return TimeGrid(horizon_, steps_ * m); }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

  private:
    double horizon_;
    std::size_t steps_;
};

/// Uniform state bins over [lo, hi]; states outside are clamped to the end bins.
struct StateBinning {
    double lo = -1.0;
    double hi = 1.0;
    std::size_t bins = 64;

    void validate() const;
    std::size_t bin(double x) const noexcept;
    double center(std::size_t b) const noexcept;

    friend bool operator==(const StateBinning&, const StateBinning&) = default;
};

/// Lowest index among the maxima.
std::size_t argmax(std::span<const double> v);

/// Checks weights are finite and non-negative with positive sum, and rescales
/// them when the sum is off by more than 1e-13. Throws std::invalid_argument.
void normalize_weights(std::span<double> w);

/// Probability weights indexed by (time step, state bin).
class ControlTable {
  public:
    ControlTable(std::size_t steps, StateBinning binning, std::size_t n_actions, std::vector<double> weights);

    /// Same weight vector in every cell.
    static ControlTable constant(std::size_t steps, StateBinning binning, std::span<const double> weights);

    std::size_t steps() const noexcept { return steps_; }
    const StateBinning& binning() const noexcept { return binning_; }
    std::size_t n_actions() const noexcept { return n_; }

    std::span<const double> row(std::size_t k, std::size_t bin) const;
    void set_row(std::size_t k, std::size_t bin, std::span<const double> w);
    std::span<const double> data() const noexcept { return w_; }

  private:
    std::size_t steps_;
    StateBinning binning_;
    std::size_t n_;
    std::vector<double> w_;
};

/// Feedback strict control: (time step, observed state) -> action index.
///
/// The state passed to the rule is the one observed at the most recent
/// multiple of hold(); hold() == 1 is ordinary state feedback.
class StrictControl {
  public:
    using Rule = std::function<std::size_t(std::size_t, double)>;

    StrictControl(Rule rule, std::size_t n_actions, std::string signature, std::size_t hold = 1,
                  std::size_t steps = 0);

    /// Produces the decisions of a whole hold period at once:
    /// out[j] = index(k0 + j, x) for the block starting at k0.
    using Planner = std::function<void(std::size_t, double, std::span<std::size_t>)>;

    static StrictControl constant(std::size_t index, std::size_t n_actions);

    std::size_t index(std::size_t k, double observed_state) const;
    /// Decisions for steps k0, ..., k0 + out.size() - 1 (k0 a multiple of hold(),
    /// out.size() <= hold()), identical to calling index() step by step.
    void plan(std::size_t k0, double observed_state, std::span<std::size_t> out) const;
    bool has_planner() const noexcept { return static_cast<bool>(planner_); }

    std::size_t n_actions() const noexcept { return n_; }
    std::size_t hold() const noexcept { return hold_; }
    /// Number of grid steps the control is defined on; 0 means any grid.
    std::size_t steps() const noexcept { return steps_; }
    const std::string& signature() const noexcept { return signature_; }
    std::size_t observation_step(std::size_t k) const noexcept { return hold_ * (k / hold_); }

  private:
    friend StrictControl chattering(const ChatteringSchedule& schedule);
    Rule rule_;
    Planner planner_;
    std::size_t n_;
    std::string signature_;
    std::size_t hold_;
    std::size_t steps_;
};

/// Relaxed control: (time step, observed state) -> probability weights over
/// the action grid, i.e. mu_t(da) = sum_i alpha^i delta_{a_i}.
class RelaxedControl {
  public:
    using Rule = std::function<void(std::size_t, double, std::span<double>)>;

    RelaxedControl(Rule rule, std::size_t n_actions, std::string signature, std::size_t hold = 1,
                   std::size_t steps = 0);
    explicit RelaxedControl(ControlTable table, std::string signature = "table");

    static RelaxedControl constant(std::vector<double> weights);

    /// Writes normalized weights into out (size n_actions()).
    void weights(std::size_t k, double observed_state, std::span<double> out) const;

    std::size_t n_actions() const noexcept { return n_; }
    std::size_t hold() const noexcept { return hold_; }
    std::size_t steps() const noexcept { return steps_; }
    const std::string& signature() const noexcept { return signature_; }
    std::size_t observation_step(std::size_t k) const noexcept { return hold_ * (k / hold_); }

    /// True when the weights change only at multiples of hold(), so a
    /// simulator may evaluate them once per hold period.
    bool hold_invariant() const noexcept { return hold_invariant_ || hold_ == 1; }
    /// Non-null when the control is backed by a table.
    const ControlTable* table() const noexcept { return table_.get(); }

  private:
    friend RelaxedControl delta_embedding(const StrictControl& u);
    friend RelaxedControl refine(const RelaxedControl& base, std::size_t m);
    // Rules built from already validated controls skip renormalization.
    bool trusted_ = false;
    bool hold_invariant_ = false;
    Rule rule_;
    std::shared_ptr<const ControlTable> table_;
    std::size_t n_;
    std::string signature_;
    std::size_t hold_;
    std::size_t steps_;
};

/// u -> dt delta_{u_t}(da). Keeps u's signature, hold and grid.
RelaxedControl delta_embedding(const StrictControl& u);

/// Samples a relaxed control at bin centers.
ControlTable tabulate(const RelaxedControl& mu, std::size_t steps, const StateBinning& binning);

/// Empirical d(u, v) = (1/N) sum_p sum_k dt 1{u != v} along the given paths.
double control_distance(const StrictControl& u, const StrictControl& v, const PathBundle& paths);

struct ChatteringSchedule {
    RelaxedControl base;
    std::size_t subdivisions = 1;
};

/// Strict control on the grid refined m times. Within coarse step k the
/// weights are frozen at the state seen at the coarse step's start; action i
/// receives the largest-remainder count of m alpha^i sub-steps, and the
/// sub-steps are dealt out in radical-inverse (van der Corput) order so every
/// action's share is spread evenly across the coarse step.
StrictControl chattering(const ChatteringSchedule& schedule);

/// The same relaxed control re-indexed on the grid refined m times, with the
/// weights frozen at coarse-step starts (the chattering control's information).
RelaxedControl refine(const RelaxedControl& base, std::size_t m);

/// Largest-remainder apportionment of m slots to the weights (ties go to the
/// lowest index).
std::vector<std::size_t> largest_remainder_counts(std::span<const double> weights, std::size_t m);

/// Text format:
///   mfc-relaxed-control 1
///   horizon <T>
///   steps <K>
///   actions <n> <a_1> ... <a_n>
///   binning <B> <lo> <hi>
///   <k> <bin> <w_1> ... <w_n>     (K * B rows, k-major)
/// Reals are written with 17 significant digits, so reading back is bit-exact.
void write_control_table(std::ostream& os, const ControlTable& table, double horizon, const ActionGrid& actions);

struct StoredControl {
    ControlTable table;
    double horizon;
    std::vector<double> actions;
};

StoredControl read_control_table(std::istream& is);

}  // namespace mfc
