#include "mfc/run.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <variant>

#include <CLI11.hpp>

#include "mfc/adjoint.hpp"
#include "mfc/controls.hpp"
#include "mfc/cost.hpp"
#include "mfc/io.hpp"
#include "mfc/optimizer.hpp"
#include "mfc/problem.hpp"
#include "mfc/riccati.hpp"
#include "mfc/rng.hpp"
#include "mfc/simulation.hpp"
#include "mfc/smp.hpp"

namespace mfc {

namespace {

enum class Kind { Text, Real, Count, Seed, Choice, CountList, RealOrAuto, Control };

struct KeySpec {
    const char* key;
    const char* fallback;
    Kind kind;
    const char* help;
    std::vector<std::string> choices = {};
};

// The documented schema. Every key is optional except experiment and output_dir.
const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> keys{
        {"experiment", "", Kind::Choice, "simulate | cost | adjoint | check-smp | optimize | chatter-gap | validate",
         experiment_kinds()},
        {"output_dir", "", Kind::Text, "directory receiving manifest.txt, summary.txt and CSV files"},
        {"problem", "lq", Kind::Choice, "lq | chattering", {"lq", "chattering"}},
        {"lq.a1", "0.2", Kind::Real, "state coefficient of the drift"},
        {"lq.a2", "0.3", Kind::Real, "mean coefficient of the drift"},
        {"lq.b0", "1", Kind::Real, "control coefficient of the drift"},
        {"lq.s0", "0.3", Kind::Real, "diffusion level"},
        {"lq.qx", "1", Kind::Real, "running state weight (>= 0)"},
        {"lq.qy", "0.5", Kind::Real, "running mean weight"},
        {"lq.r", "1", Kind::Real, "running control weight (> 0)"},
        {"lq.gx", "1", Kind::Real, "terminal state weight (>= 0)"},
        {"lq.gy", "0.5", Kind::Real, "terminal mean weight"},
        {"lq.u_max", "3", Kind::Real, "action box half-width (> 0)"},
        {"lq.x0", "1", Kind::Real, "initial state"},
        {"lq.horizon", "1", Kind::Real, "horizon T (> 0)"},
        {"lq.n_actions", "41", Kind::Count, "grid actions on [-u_max, u_max] (>= 2)"},
        {"chattering.sigma0", "0", Kind::Real, "diffusion level (>= 0)"},
        {"chattering.kappa", "1", Kind::Real, "mean penalty weight (>= 0)"},
        {"control", "auto", Kind::Control,
         "auto | oracle | oracle-mixture | gain:<g> | action:<i> | mixture:<w1,...,wn> | file:<path>"},
        {"particles", "10000", Kind::Count, "ensemble size N (>= 2)"},
        {"steps", "200", Kind::Count, "time steps K (>= 1)"},
        {"seed", "1", Kind::Seed, "master seed; named substreams are derived from it"},
        {"workers", "1", Kind::Count, "worker threads (results do not depend on it)"},
        {"state_clamp", "none", Kind::RealOrAuto, "none | c > 0: clamp states to [-c, c]"},
        {"basis.degree", "2", Kind::Count, "regression polynomial degree (>= 1)"},
        {"basis.ridge", "auto", Kind::RealOrAuto, "auto (1e-8 N) | lambda >= 0"},
        {"optimizer.max_iters", "30", Kind::Count, "iteration cap"},
        {"optimizer.damping", "0.5", Kind::Real, "rho in (0, 1]"},
        {"optimizer.tolerance", "1e-6", Kind::Real, "stop when the residual falls to this level (> 0)"},
        {"optimizer.seed_policy", "fixed", Kind::Choice, "fixed | refreshed", {"fixed", "refreshed"}},
        {"optimizer.stall_limit", "20", Kind::Count, "stop after this many iterations without a new best cost"},
        {"binning.bins", "64", Kind::Count, "state bins of tabulated controls"},
        {"binning.lo", "-2", Kind::Real, "lower end of the binned state range"},
        {"binning.hi", "2", Kind::Real, "upper end of the binned state range"},
        {"gap.m", "8,16,32,64", Kind::CountList, "strictly increasing chattering subdivisions"},
        {"validate.samples", "100", Kind::Count, "sampled points per derivative"},
        {"validate.step", "1e-4", Kind::Real, "finite-difference step"},
        {"validate.tol", "1e-5", Kind::Real, "relative tolerance"},
        {"smp.epsilon", "auto", Kind::RealOrAuto, "auto (cost gap to the best known value) | epsilon >= 0"},
        {"output.max_particles", "100", Kind::Count, "particles written to path/adjoint CSV files"},
    };
    return keys;
}

const KeySpec* find_key(const std::string& key) {
    for (const auto& k : schema())
        if (key == k.key) return &k;
    return nullptr;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

std::uint64_t parse_unsigned(const std::string& token) {
    std::uint64_t v = 0;
    const auto* end = token.data() + token.size();
    const auto [ptr, ec] = std::from_chars(token.data(), end, v);
    if (token.empty() || ec != std::errc{} || ptr != end) throw std::invalid_argument("not a non-negative integer");
    return v;
}

}  // namespace

ConfigError::ConfigError(std::string source, std::size_t line, std::string field, const std::string& message)
    : std::runtime_error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + field + ": " +
                         message),
      line_(line),
      field_(std::move(field)) {}

RunConfig RunConfig::defaults() {
    RunConfig c;
    for (const auto& k : schema()) c.values_[k.key] = k.fallback;
    return c;
}

void RunConfig::check(const std::string& key, std::size_t line) const {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError(source_, line, key, "unknown key");
    const std::string& v = values_.at(key);
    try {
        switch (spec->kind) {
            case Kind::Text:
                break;
            case Kind::Real:
                if (!std::isfinite(parse_real(v))) throw std::invalid_argument("must be finite");
                break;
            case Kind::RealOrAuto:
                if (v != "auto" && v != "none" && !std::isfinite(parse_real(v)))
                    throw std::invalid_argument("must be finite");
                break;
            case Kind::Count:
            case Kind::Seed:
                parse_unsigned(v);
                break;
            case Kind::Choice:
                if (!v.empty() && std::find(spec->choices.begin(), spec->choices.end(), v) == spec->choices.end())
                    throw std::invalid_argument("expected one of: " + std::string(spec->help));
                break;
            case Kind::CountList:
                for (const auto& t : split(v, ',')) parse_unsigned(t);
                break;
            case Kind::Control: {
                const auto colon = v.find(':');
                const std::string head = v.substr(0, colon);
                static const std::vector<std::string> heads{"auto",   "oracle", "oracle-mixture", "gain",
                                                            "action", "mixture", "file"};
                if (std::find(heads.begin(), heads.end(), head) == heads.end())
                    throw std::invalid_argument("unknown control '" + v + "'");
                const bool wants_arg = head == "gain" || head == "action" || head == "mixture" || head == "file";
                if (wants_arg != (colon != std::string::npos)) throw std::invalid_argument("malformed control '" + v + "'");
                if (head == "gain") parse_real(v.substr(colon + 1));
                if (head == "action") parse_unsigned(v.substr(colon + 1));
                if (head == "mixture")
                    for (const auto& t : split(v.substr(colon + 1), ',')) parse_real(t);
                break;
            }
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source_, line, key, std::string("invalid value '") + v + "': " + e.what());
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!find_key(key)) throw ConfigError(source_, 0, key, "unknown key");
    values_[key] = value;
    lines_.erase(key);
    check(key, 0);
}

RunConfig RunConfig::parse(std::istream& is, const std::string& source) {
    RunConfig c = defaults();
    c.source_ = source;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const std::string text = trim(raw.substr(0, raw.find('#')));
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ConfigError(source, line, text, "expected 'key = value'");
        const std::string key = trim(std::string_view(text).substr(0, eq));
        const std::string value = trim(std::string_view(text).substr(eq + 1));
        if (!find_key(key)) throw ConfigError(source, line, key, "unknown key");
        if (c.lines_.contains(key))
            throw ConfigError(source, line, key, "duplicate key (first set on line " + std::to_string(c.lines_[key]) + ")");
        c.values_[key] = value;
        c.lines_[key] = line;
        c.check(key, line);
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), 0, "config", "cannot open file");
    return parse(in, path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(source_, 0, key, "unknown key");
    return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_real(get(key)); }

std::size_t RunConfig::count(const std::string& key) const { return static_cast<std::size_t>(parse_unsigned(get(key))); }

std::uint64_t RunConfig::seed() const { return parse_unsigned(get("seed")); }

std::vector<std::size_t> RunConfig::count_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& t : split(get(key), ',')) out.push_back(static_cast<std::size_t>(parse_unsigned(t)));
    return out;
}

void describe_schema(std::ostream& os) {
    os << "# key = default    description\n";
    for (const auto& k : schema()) os << k.key << " = " << k.fallback << "    # " << k.help << "\n";
}

namespace {

// Field-level validation that needs more than one key or a range.
void require(bool ok, const std::string& field, const std::string& message) {
    if (!ok) throw ConfigError("<config>", 0, field, message);
}

struct Setup {
    ProblemSpec spec;
    std::optional<LqParams> lq;
    std::optional<LqRiccatiOracle> oracle;
    SimConfig sim;
    std::variant<StrictControl, RelaxedControl> control;
    std::optional<double> best_known;  // reference value for epsilon
};

LqParams lq_params(const RunConfig& c) {
    LqParams p;
    p.a1 = c.real("lq.a1");
    p.a2 = c.real("lq.a2");
    p.b0 = c.real("lq.b0");
    p.s0 = c.real("lq.s0");
    p.qx = c.real("lq.qx");
    p.qy = c.real("lq.qy");
    p.r = c.real("lq.r");
    p.gx = c.real("lq.gx");
    p.gy = c.real("lq.gy");
    p.u_max = c.real("lq.u_max");
    p.x0 = c.real("lq.x0");
    p.horizon = c.real("lq.horizon");
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("<config>", 0, "lq.*", e.what());
    }
    return p;
}

std::variant<StrictControl, RelaxedControl> build_control(const RunConfig& c, const Setup& s) {
    std::string v = c.get("control");
    const std::size_t n = s.spec.actions.size();
    if (v == "auto") v = s.oracle ? "oracle" : "mixture:0.5,0.5";
    const auto colon = v.find(':');
    const std::string head = v.substr(0, colon);
    const std::string arg = colon == std::string::npos ? std::string() : v.substr(colon + 1);
    if (head == "oracle" || head == "oracle-mixture" || head == "gain") {
        require(s.oracle.has_value(), "control", "'" + head + "' needs problem = lq");
        if (head == "oracle-mixture") return lq_oracle_mixture(*s.oracle, s.spec.actions, s.sim.grid);
        return lq_oracle_control(*s.oracle, s.spec.actions, s.sim.grid, head == "gain" ? parse_real(arg) : 1.0);
    }
    if (head == "action") {
        const std::size_t i = static_cast<std::size_t>(parse_unsigned(arg));
        require(i < n, "control", "action index out of range");
        return StrictControl::constant(i, n);
    }
    if (head == "mixture") {
        std::vector<double> w;
        for (const auto& t : split(arg, ',')) w.push_back(parse_real(t));
        require(w.size() == n, "control", "mixture needs " + std::to_string(n) + " weights");
        try {
            return RelaxedControl::constant(std::move(w));
        } catch (const std::invalid_argument& e) {
            throw ConfigError("<config>", 0, "control", e.what());
        }
    }
    // file:<path>
    std::ifstream in(arg);
    require(static_cast<bool>(in), "control", "cannot open control file '" + arg + "'");
    StoredControl stored = read_control_table(in);
    require(stored.table.steps() == s.sim.grid.steps(), "control", "control file step count differs from steps");
    require(stored.table.n_actions() == n, "control", "control file action count differs from the problem");
    return RelaxedControl(std::move(stored.table), "file(" + arg + ")");
}

Setup build_setup(const RunConfig& c) {
    const std::string problem = c.get("problem");
    std::optional<LqParams> lq;
    std::optional<LqRiccatiOracle> oracle;
    std::optional<double> best_known;
    const std::size_t steps = c.count("steps");
    require(steps >= 1, "steps", "must be >= 1");
    ProblemSpec spec;
    if (problem == "lq") {
        lq = lq_params(c);
        const std::size_t n = c.count("lq.n_actions");
        require(n >= 2, "lq.n_actions", "must be >= 2");
        spec = make_lq_meanfield(*lq, n);
        oracle.emplace(*lq, 10 * steps);
        best_known = oracle->value();
    } else {
        const double sigma0 = c.real("chattering.sigma0"), kappa = c.real("chattering.kappa");
        require(sigma0 >= 0.0, "chattering.sigma0", "must be >= 0");
        require(kappa >= 0.0, "chattering.kappa", "must be >= 0");
        spec = make_chattering_problem(sigma0, kappa);
        if (sigma0 == 0.0) best_known = 0.0;  // the even mixture keeps X at 0
    }

    SimConfig sim;
    sim.particles = c.count("particles");
    require(sim.particles >= 2, "particles", "must be >= 2");
    sim.grid = TimeGrid(spec.horizon, steps);
    sim.seed = substream_seed(c.seed(), "simulation");
    sim.workers = c.count("workers");
    require(sim.workers >= 1, "workers", "must be >= 1");
    if (const auto& clamp = c.get("state_clamp"); clamp != "none") {
        require(clamp != "auto", "state_clamp", "expected none or a positive number");
        sim.state_clamp = parse_real(clamp);
        require(*sim.state_clamp > 0.0, "state_clamp", "must be positive");
    }
    Setup s{std::move(spec), lq, oracle, sim, StrictControl::constant(0, 1), best_known};
    s.control = build_control(c, s);
    return s;
}

RegressionBasis basis_from(const RunConfig& c) {
    RegressionBasis b;
    b.degree = c.count("basis.degree");
    require(b.degree >= 1, "basis.degree", "must be >= 1");
    if (const auto& r = c.get("basis.ridge"); r != "auto") {
        require(r != "none", "basis.ridge", "expected auto or a number >= 0");
        b.ridge = parse_real(r);
        require(*b.ridge >= 0.0, "basis.ridge", "must be >= 0");
    }
    return b;
}

StateBinning binning_from(const RunConfig& c) {
    StateBinning b{c.real("binning.lo"), c.real("binning.hi"), c.count("binning.bins")};
    try {
        b.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("<config>", 0, "binning.*", e.what());
    }
    return b;
}

RelaxedControl as_relaxed(const std::variant<StrictControl, RelaxedControl>& control) {
    if (const auto* u = std::get_if<StrictControl>(&control)) return delta_embedding(*u);
    return std::get<RelaxedControl>(control);
}

const std::string& signature_of(const std::variant<StrictControl, RelaxedControl>& control) {
    return std::visit([](const auto& c) -> const std::string& { return c.signature(); }, control);
}

class Outputs {
  public:
    explicit Outputs(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }
    std::ofstream open(const std::string& name) const {
        std::ofstream out(dir_ / name);
        if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
        return out;
    }
    const std::filesystem::path& dir() const noexcept { return dir_; }

  private:
    std::filesystem::path dir_;
};

void write_manifest(const Outputs& out, const RunConfig& c, const std::string& status) {
    auto os = out.open("manifest.txt");
    os << "# mfc_run manifest: resolved configuration and derived seeds\n";
    for (const auto& [k, v] : c.entries()) os << k << " = " << v << "\n";
    os << "derived.simulation_seed = " << substream_seed(c.seed(), "simulation") << "\n";
    os << "derived.optimizer_seed = " << substream_seed(c.seed(), "optimizer") << "\n";
    os << "derived.validate_seed = " << substream_seed(c.seed(), "validate") << "\n";
    os << "status = " << status << "\n";
}

using Checks = std::vector<std::pair<std::string, bool>>;

void write_checks(std::ostream& os, const Checks& checks) {
    for (const auto& [name, ok] : checks) os << "check." << name << " = " << (ok ? "pass" : "fail") << "\n";
}

Checks run_validate(const RunConfig& c, const Setup& s, const Outputs& out, std::ostream& summary) {
    SamplingBox box{0.0, s.spec.horizon, -2.0, 2.0, -2.0, 2.0};
    const ValidationReport r = validate_problem(s.spec, box, c.count("validate.samples"), c.real("validate.step"),
                                                c.real("validate.tol"), substream_seed(c.seed(), "validate"));
    auto csv = out.open("validation.csv");
    csv << "derivative,worst_error,t,x,y,a,passed\n";
    for (const auto& d : r.checks)
        csv << d.name << ',' << format_real(d.worst_error) << ',' << format_real(d.t) << ',' << format_real(d.x)
            << ',' << format_real(d.y) << ',' << format_real(d.a) << ',' << (d.passed ? 1 : 0) << "\n";
    if (r.non_finite) summary << "non_finite = " << *r.non_finite << "\n";
    for (const auto& d : r.checks) summary << "worst_error." << d.name << " = " << format_real(d.worst_error) << "\n";
    return {{"derivatives", r.passed}};
}

Checks run_simulate(const RunConfig& c, const Setup& s, const Outputs& out, std::ostream& summary) {
    const PathBundle paths = std::visit(
        [&](const auto& u) {
            if constexpr (std::is_same_v<std::decay_t<decltype(u)>, StrictControl>)
                return simulate_strict(s.spec, u, s.sim);
            else
                return simulate_relaxed(s.spec, u, s.sim);
        },
        s.control);
    {
        auto csv = out.open("paths.csv");
        write_paths_csv(csv, paths, c.count("output.max_particles"));
    }
    auto csv = out.open("means.csv");
    csv << "step,t,mean\n";
    for (std::size_t k = 0; k <= paths.grid.steps(); ++k)
        csv << k << ',' << format_real(paths.grid.t(k)) << ',' << format_real(paths.means[k]) << "\n";
    summary << "terminal_mean = " << format_real(paths.means.back()) << "\n";
    if (s.oracle && signature_of(s.control) == "lq-oracle")
        summary << "oracle_terminal_mean = " << format_real(s.oracle->mean(paths.grid.horizon())) << "\n";
    const bool finite = std::all_of(paths.states.begin(), paths.states.end(), [](double x) { return std::isfinite(x); });
    return {{"finite_states", finite}};
}

Checks run_cost(const RunConfig&, const Setup& s, const Outputs& out, std::ostream& summary) {
    const CostEstimate est = std::visit([&](const auto& u) { return simulate_cost(s.spec, u, s.sim); }, s.control);
    auto csv = out.open("cost.csv");
    csv << "J,stderr,particles,steps\n"
        << format_real(est.value) << ',' << format_real(est.stderr_) << ',' << est.particles << ',' << est.steps
        << "\n";
    summary << "J = " << format_real(est.value) << "\nstderr = " << format_real(est.stderr_) << "\n";
    if (s.best_known) summary << "reference_value = " << format_real(*s.best_known) << "\n";
    return {{"finite_cost", std::isfinite(est.value)}};
}

struct AdjointRun {
    PathBundle paths;
    RelaxedControl mu;
    AdjointFirst first;
    AdjointSecond second;
};

AdjointRun solve_adjoints(const RunConfig& c, const Setup& s) {
    RelaxedControl mu = as_relaxed(s.control);
    PathBundle paths = simulate_relaxed(s.spec, mu, s.sim);
    const RegressionBasis basis = basis_from(c);
    AdjointFirst first = solve_first_order(s.spec, paths, mu, basis, s.sim.workers);
    AdjointSecond second = solve_second_order(s.spec, paths, mu, first, basis, s.sim.workers);
    return {std::move(paths), std::move(mu), std::move(first), std::move(second)};
}

Checks run_adjoint(const RunConfig& c, const Setup& s, const Outputs& out, std::ostream& summary) {
    const AdjointRun a = solve_adjoints(c, s);
    {
        auto csv = out.open("adjoint.csv");
        write_adjoint_csv(csv, a.first, a.second, c.count("output.max_particles"));
    }
    write_adjoint_summary(summary, a.first, a.second);
    if (s.oracle) {
        // RMS relative error against the Riccati costate, over all (k, particle).
        double num_p = 0.0, den_p = 0.0, num_P = 0.0, den_P = 0.0;
        for (std::size_t k = 0; k <= a.paths.grid.steps(); ++k) {
            const double t = a.paths.grid.t(k);
            for (std::size_t p = 0; p < a.paths.particles; ++p) {
                const double ref = s.oracle->costate(t, a.paths.state(p, k), a.paths.means[k]);
                num_p += std::pow(a.first.p_at(p, k) - ref, 2);
                den_p += ref * ref;
                const double ref2 = -s.oracle->S(t);
                num_P += std::pow(a.second.P_at(p, k) - ref2, 2);
                den_P += ref2 * ref2;
            }
        }
        summary << "oracle_rms_relative_error_p = " << format_real(std::sqrt(num_p / den_p)) << "\n";
        summary << "oracle_rms_relative_error_P = " << format_real(std::sqrt(num_P / den_P)) << "\n";
    }
    const auto& d1 = a.first.diagnostics;
    const auto& d2 = a.second.diagnostics;
    const bool finite = std::isfinite(d1.sup_square) && std::isfinite(d1.integrated_square) &&
                        std::isfinite(d1.residual_qv) && std::isfinite(d2.sup_square) &&
                        std::isfinite(d2.integrated_square) && std::isfinite(d2.residual_qv);
    return {{"finite_diagnostics", finite}};
}

double resolve_epsilon(const RunConfig& c, const Setup& s, double cost) {
    if (const auto& e = c.get("smp.epsilon"); e != "auto") {
        require(e != "none", "smp.epsilon", "expected auto or a number >= 0");
        const double eps = parse_real(e);
        require(eps >= 0.0, "smp.epsilon", "must be >= 0");
        return eps;
    }
    return s.best_known ? std::max(0.0, cost - *s.best_known) : 0.0;
}

Checks run_check_smp(const RunConfig& c, const Setup& s, const Outputs& out, std::ostream& summary) {
    const AdjointRun a = solve_adjoints(c, s);
    const SmpReport report = smp_residual(s.spec, a.paths, a.mu, a.first, a.second);
    const CostEstimate cost = estimate_cost(s.spec, a.paths, a.mu);
    const NearOptimality check = near_optimality_check(report, resolve_epsilon(c, s, cost.value));
    {
        auto csv = out.open("smp.csv");
        write_smp_csv(csv, report);
    }
    summary << "J = " << format_real(cost.value) << "\nJ_stderr = " << format_real(cost.stderr_) << "\n";
    write_smp_summary(summary, report, check);
    return {{"near_optimality", check.passed}};
}

Checks run_optimize(const RunConfig& c, const Setup& s, const Outputs& out, std::ostream& summary) {
    OptimizerConfig oc;
    oc.max_iters = c.count("optimizer.max_iters");
    oc.damping = c.real("optimizer.damping");
    oc.tolerance = c.real("optimizer.tolerance");
    oc.basis = basis_from(c);
    oc.seed_policy = c.get("optimizer.seed_policy") == "fixed" ? SeedPolicy::Fixed : SeedPolicy::Refreshed;
    oc.stall_limit = c.count("optimizer.stall_limit");
    oc.binning = binning_from(c);
    try {
        oc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("<config>", 0, "optimizer.*", e.what());
    }
    SimConfig sim = s.sim;
    sim.seed = substream_seed(c.seed(), "optimizer");
    const OptimizerResult r = optimize(s.spec, as_relaxed(s.control), oc, sim);
    {
        auto csv = out.open("trace.csv");
        write_trace_csv(csv, r.trace);
    }
    {
        auto ctl = out.open("control.txt");
        write_control_table(ctl, r.best, s.spec.horizon, s.spec.actions);
    }
    summary << "iterations = " << r.trace.rows.size() << "\nbest_iteration = " << r.best_iteration << "\n";
    if (!r.trace.rows.empty()) {
        const auto& best = r.trace.rows[std::min(r.best_iteration, r.trace.rows.size() - 1)];
        summary << "best_J = " << format_real(best.cost) << "\nbest_J_stderr = " << format_real(best.cost_stderr)
                << "\nbest_residual = " << format_real(best.residual) << "\n";
        const auto seq = minimizing_sequence_report(r.trace, s.best_known);
        summary << "final_near_optimal = " << (seq.near_optimal.back() ? "true" : "false") << "\n";
    }
    if (s.best_known) summary << "reference_value = " << format_real(*s.best_known) << "\n";
    summary << "converged = " << (r.converged ? "true" : "false") << "\nstalled = " << (r.stalled ? "true" : "false")
            << "\n";
    if (r.failure) summary << "optimizer_failure = " << *r.failure << "\n";
    return {{"optimizer_completed", !r.failure.has_value()}};
}

Checks run_chatter_gap(const RunConfig& c, const Setup& s, const Outputs& out, std::ostream& summary) {
    const std::vector<std::size_t> ms = c.count_list("gap.m");
    require(!ms.empty() && ms.front() >= 1 && std::is_sorted(ms.begin(), ms.end()) &&
                std::adjacent_find(ms.begin(), ms.end()) == ms.end(),
            "gap.m", "must be a non-empty strictly increasing list of counts >= 1");
    const auto rows = value_gap_experiment(s.spec, as_relaxed(s.control), ms, s.sim);
    {
        auto csv = out.open("gap.csv");
        write_gap_csv(csv, rows);
    }
    bool finite = true;
    for (const auto& r : rows) {
        summary << "gap.m" << r.m << " = " << format_real(r.gap) << " +- " << format_real(r.pooled_stderr) << "\n";
        finite = finite && std::isfinite(r.gap);
    }
    return {{"finite_gaps", finite}};
}

}  // namespace

RunOutcome run_experiment(const RunConfig& config) {
    const std::string& kind = config.get("experiment");
    if (kind.empty()) throw ConfigError("<config>", 0, "experiment", "required key missing");
    const std::string& dir = config.get("output_dir");
    if (dir.empty()) throw ConfigError("<config>", 0, "output_dir", "required key missing");
    const Setup setup = build_setup(config);
    if (kind == "optimize") binning_from(config);

    const Outputs out(dir);
    write_manifest(out, config, "running");
    std::ostringstream summary;
    summary << "experiment = " << kind << "\nproblem = " << setup.spec.id
            << "\ncontrol = " << signature_of(setup.control) << "\n";
    RunOutcome outcome;
    try {
        Checks checks;
        if (kind == "validate") checks = run_validate(config, setup, out, summary);
        else if (kind == "simulate") checks = run_simulate(config, setup, out, summary);
        else if (kind == "cost") checks = run_cost(config, setup, out, summary);
        else if (kind == "adjoint") checks = run_adjoint(config, setup, out, summary);
        else if (kind == "check-smp") checks = run_check_smp(config, setup, out, summary);
        else if (kind == "optimize") checks = run_optimize(config, setup, out, summary);
        else checks = run_chatter_gap(config, setup, out, summary);
        outcome.checks = checks;
        const bool all = std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.second; });
        outcome.exit_code = all ? 0 : 1;
        write_checks(summary, checks);
        summary << "status = " << (all ? "pass" : "fail") << "\n";
        write_manifest(out, config, "complete");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        outcome.failure = e.what();
        outcome.exit_code = 1;
        summary << "status = failed\nerror = " << e.what() << "\n";
        write_manifest(out, config, "failed (outputs in this directory may be partial)");
    }
    auto os = out.open("summary.txt");
    os << summary.str();
    return outcome;
}

int run_main(int argc, char** argv) {
    CLI::App app{"Mean-field relaxed control experiments"};
    std::string verb, config_path;
    std::vector<std::string> overrides;
    bool show_schema = false;
    app.add_option("experiment", verb, "experiment kind (optional when the config sets 'experiment')")
        ->check(CLI::IsMember(experiment_kinds()));
    app.add_option("--config,-c", config_path, "flat key = value configuration file");
    app.add_option("--set", overrides, "override a key: --set key=value (repeatable)");
    app.add_flag("--schema", show_schema, "print every configuration key with its default and exit");
    CLI11_PARSE(app, argc, argv);

    if (show_schema) {
        describe_schema(std::cout);
        return 0;
    }
    try {
        RunConfig config = config_path.empty() ? RunConfig::defaults() : RunConfig::load(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set", 0, kv, "expected key=value");
            config.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
        }
        if (!verb.empty()) {
            const std::string& in_file = config.get("experiment");
            if (!in_file.empty() && in_file != verb)
                throw ConfigError(config_path, 0, "experiment",
                                  "config says '" + in_file + "' but the command line asks for '" + verb + "'");
            config.set("experiment", verb);
        }
        const RunOutcome outcome = run_experiment(config);
        for (const auto& [name, ok] : outcome.checks) std::cout << name << ": " << (ok ? "pass" : "fail") << "\n";
        if (outcome.failure) std::cerr << "error: " << *outcome.failure << "\n";
        return outcome.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace mfc
