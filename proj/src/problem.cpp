#include "mfc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mfc/rng.hpp"

namespace mfc {

ActionGrid::ActionGrid(std::vector<double> actions) : actions_(std::move(actions)) {
    if (actions_.empty()) throw std::invalid_argument("action grid must not be empty");
    for (std::size_t i = 0; i < actions_.size(); ++i) {
        if (!std::isfinite(actions_[i])) throw std::invalid_argument("action grid entries must be finite");
        if (i > 0 && !(actions_[i] > actions_[i - 1]))
            throw std::invalid_argument("action grid must be strictly increasing");
    }
}

ActionGrid ActionGrid::uniform(double lo, double hi, std::size_t n) {
    if (n < 2) throw std::invalid_argument("uniform action grid needs at least 2 actions");
    if (!(hi > lo)) throw std::invalid_argument("uniform action grid needs hi > lo");
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i)
        a[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    a.back() = hi;
    return ActionGrid(std::move(a));
}

std::size_t ActionGrid::nearest(double a) const {
    const auto it = std::lower_bound(actions_.begin(), actions_.end(), a);
    if (it == actions_.begin()) return 0;
    if (it == actions_.end()) return actions_.size() - 1;
    const auto hi = static_cast<std::size_t>(it - actions_.begin());
    return (a - actions_[hi - 1] <= actions_[hi] - a) ? hi - 1 : hi;
}

void require_complete(const ProblemSpec& spec) {
    if (!(spec.horizon > 0.0) || !std::isfinite(spec.horizon))
        throw std::invalid_argument("problem horizon must be positive");
    const bool ok = spec.b && spec.sigma && spec.h && spec.g && spec.b_x && spec.b_y && spec.sigma_x &&
                    spec.sigma_y && spec.h_x && spec.h_y && spec.b_xx && spec.sigma_xx && spec.h_xx &&
                    spec.g_x && spec.g_y && spec.g_xx;
    if (!ok) throw std::invalid_argument("problem '" + spec.id + "' is missing an evaluator");
}

void LqParams::validate() const {
    if (!(r > 0.0)) throw std::invalid_argument("LQ: r must be positive");
    if (qx < 0.0 || gx < 0.0) throw std::invalid_argument("LQ: qx and gx must be non-negative");
    if (!(u_max > 0.0)) throw std::invalid_argument("LQ: u_max must be positive");
    if (!(horizon > 0.0)) throw std::invalid_argument("LQ: horizon must be positive");
}

ProblemSpec make_lq_meanfield(const LqParams& p, std::size_t n_actions) {
    p.validate();
    if (n_actions < 2) throw std::invalid_argument("LQ: need at least 2 actions");
    ProblemSpec s;
    s.id = "lq";
    s.horizon = p.horizon;
    s.x0 = p.x0;
    s.actions = ActionGrid::uniform(-p.u_max, p.u_max, n_actions);

    s.b = [p](double, double x, double y, double a) { return p.a1 * x + p.a2 * y + p.b0 * a; };
    s.sigma = [p](double, double, double, double) { return p.s0; };
    s.h = [p](double, double x, double y, double a) {
        return 0.5 * (p.qx * x * x + p.qy * y * y + p.r * a * a);
    };
    s.g = [p](double x, double y) { return 0.5 * (p.gx * x * x + p.gy * y * y); };

    s.b_x = [p](double, double, double, double) { return p.a1; };
    s.b_y = [p](double, double, double, double) { return p.a2; };
    s.sigma_x = [](double, double, double, double) { return 0.0; };
    s.sigma_y = [](double, double, double, double) { return 0.0; };
    s.h_x = [p](double, double x, double, double) { return p.qx * x; };
    s.h_y = [p](double, double, double y, double) { return p.qy * y; };
    s.b_xx = [](double, double, double, double) { return 0.0; };
    s.sigma_xx = [](double, double, double, double) { return 0.0; };
    s.h_xx = [p](double, double, double, double) { return p.qx; };
    s.g_x = [p](double x, double) { return p.gx * x; };
    s.g_y = [p](double, double y) { return p.gy * y; };
    s.g_xx = [p](double, double) { return p.gx; };
    return s;
}

ProblemSpec make_chattering_problem(double sigma0, double kappa) {
    if (sigma0 < 0.0 || kappa < 0.0)
        throw std::invalid_argument("chattering problem: sigma0 and kappa must be non-negative");
    ProblemSpec s;
    s.id = "chattering";
    s.horizon = 1.0;
    s.x0 = 0.0;
    s.actions = ActionGrid({-1.0, 1.0});

    const auto zero = [](double, double, double, double) { return 0.0; };
    s.b = [](double, double, double, double a) { return a; };
    s.sigma = [sigma0](double, double, double, double) { return sigma0; };
    s.h = [kappa](double, double x, double y, double) { return x * x + kappa * y * y; };
    s.g = [](double, double) { return 0.0; };

    s.b_x = zero;
    s.b_y = zero;
    s.sigma_x = zero;
    s.sigma_y = zero;
    s.h_x = [](double, double x, double, double) { return 2.0 * x; };
    s.h_y = [kappa](double, double, double y, double) { return 2.0 * kappa * y; };
    s.b_xx = zero;
    s.sigma_xx = zero;
    s.h_xx = [](double, double, double, double) { return 2.0; };
    s.g_x = [](double, double) { return 0.0; };
    s.g_y = [](double, double) { return 0.0; };
    s.g_xx = [](double, double) { return 0.0; };
    return s;
}

const DerivativeCheck* ValidationReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

namespace {

double sample_unit(std::uint64_t seed, std::uint64_t counter) {
    return static_cast<double>(mix64(seed ^ mix64(counter)) >> 11) * 0x1.0p-53;
}

struct NonFinite {
    std::string what;
};

double checked(double v, const char* fn, double t, double x, double y, double a) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << fn << " at (t=" << t << ", x=" << x << ", y=" << y << ", a=" << a << ")";
        throw NonFinite{os.str()};
    }
    return v;
}

}  // namespace

ValidationReport validate_problem(const ProblemSpec& spec, const SamplingBox& box, std::size_t samples,
                                  double step, double tol, std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("validate_problem: samples must be >= 1");
    if (!(step > 0.0)) throw std::invalid_argument("validate_problem: step must be positive");
    require_complete(spec);

    // Order: b_x b_y sigma_x sigma_y h_x h_y g_x g_y b_xx sigma_xx h_xx g_xx
    static const char* names[] = {"b_x", "b_y", "sigma_x", "sigma_y", "h_x", "h_y",
                                  "g_x", "g_y", "b_xx", "sigma_xx", "h_xx", "g_xx"};
    ValidationReport report;
    for (const char* n : names) report.checks.push_back(DerivativeCheck{n});

    auto record = [&](std::size_t idx, double fd, double analytic, double t, double x, double y, double a) {
        auto& c = report.checks[idx];
        const double err = std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
        if (err >= c.worst_error) {
            c.worst_error = err;
            c.t = t;
            c.x = x;
            c.y = y;
            c.a = a;
        }
    };

    const double h = step;
    try {
        for (std::size_t s = 0; s < samples; ++s) {
            const double t = box.t_lo + (box.t_hi - box.t_lo) * sample_unit(seed, 3 * s);
            const double x = box.x_lo + (box.x_hi - box.x_lo) * sample_unit(seed, 3 * s + 1);
            const double y = box.y_lo + (box.y_hi - box.y_lo) * sample_unit(seed, 3 * s + 2);

            struct Coef {
                const CoefficientFn* f;
                const CoefficientFn* fx;
                const CoefficientFn* fy;
                const CoefficientFn* fxx;
                const char* name;
                std::size_t ix, iy, ixx;
            };
            const Coef coefs[] = {{&spec.b, &spec.b_x, &spec.b_y, &spec.b_xx, "b", 0, 1, 8},
                                  {&spec.sigma, &spec.sigma_x, &spec.sigma_y, &spec.sigma_xx, "sigma", 2, 3, 9},
                                  {&spec.h, &spec.h_x, &spec.h_y, &spec.h_xx, "h", 4, 5, 10}};
            for (std::size_t ai = 0; ai < spec.actions.size(); ++ai) {
                const double a = spec.actions[ai];
                for (const auto& c : coefs) {
                    const auto& f = *c.f;
                    const double f0 = checked(f(t, x, y, a), c.name, t, x, y, a);
                    const double fxp = checked(f(t, x + h, y, a), c.name, t, x + h, y, a);
                    const double fxm = checked(f(t, x - h, y, a), c.name, t, x - h, y, a);
                    const double fyp = checked(f(t, x, y + h, a), c.name, t, x, y + h, a);
                    const double fym = checked(f(t, x, y - h, a), c.name, t, x, y - h, a);
                    const double dx = checked((*c.fx)(t, x, y, a), names[c.ix], t, x, y, a);
                    const double dy = checked((*c.fy)(t, x, y, a), names[c.iy], t, x, y, a);
                    const double dxx = checked((*c.fxx)(t, x, y, a), names[c.ixx], t, x, y, a);
                    record(c.ix, (fxp - fxm) / (2.0 * h), dx, t, x, y, a);
                    record(c.iy, (fyp - fym) / (2.0 * h), dy, t, x, y, a);
                    record(c.ixx, (fxp - 2.0 * f0 + fxm) / (h * h), dxx, t, x, y, a);
                }
            }
            const double g0 = checked(spec.g(x, y), "g", 0, x, y, 0);
            const double gxp = checked(spec.g(x + h, y), "g", 0, x + h, y, 0);
            const double gxm = checked(spec.g(x - h, y), "g", 0, x - h, y, 0);
            const double gyp = checked(spec.g(x, y + h), "g", 0, x, y + h, 0);
            const double gym = checked(spec.g(x, y - h), "g", 0, x, y - h, 0);
            record(6, (gxp - gxm) / (2.0 * h), checked(spec.g_x(x, y), "g_x", 0, x, y, 0), 0, x, y, 0);
            record(7, (gyp - gym) / (2.0 * h), checked(spec.g_y(x, y), "g_y", 0, x, y, 0), 0, x, y, 0);
            record(11, (gxp - 2.0 * g0 + gxm) / (h * h), checked(spec.g_xx(x, y), "g_xx", 0, x, y, 0), 0, x, y,
                   0);
        }
    } catch (const NonFinite& nf) {
        report.non_finite = nf.what;
        report.passed = false;
    }

    for (auto& c : report.checks) {
        c.passed = c.worst_error <= tol;
        if (!c.passed) report.passed = false;
    }
    return report;
}

}  // namespace mfc
