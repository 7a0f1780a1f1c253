#include "mfc/adjoint.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mfc/io.hpp"
#include "mfc/parallel.hpp"
#include "mfc/stats.hpp"

namespace mfc {

void RegressionBasis::validate() const {
    if (degree < 1) throw std::invalid_argument("regression basis: degree must be >= 1");
    if (ridge && !(*ridge >= 0.0)) throw std::invalid_argument("regression basis: ridge must be >= 0");
    if (!(max_condition > 1.0)) throw std::invalid_argument("regression basis: max_condition must exceed 1");
}

StepRegression::StepRegression(std::span<const double> states, double mean, const RegressionBasis& basis,
                               std::size_t step)
    : n_(states.size()) {
    std::vector<double> dev(n_);
    for (std::size_t p = 0; p < n_; ++p) {
        const double d = states[p] - mean;
        dev[p] = d * d;
    }
    const double sd = std::sqrt(pairwise_sum(dev) / static_cast<double>(n_));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return;  // degenerate: mean only

    cols_ = basis.degree;
    centered_.assign(n_ * cols_, 0.0);
    std::vector<double> col(n_);
    for (std::size_t j = 0; j < cols_; ++j) {
        for (std::size_t p = 0; p < n_; ++p) col[p] = std::pow((states[p] - mean) / sd, static_cast<double>(j + 1));
        const double cm = shifted_mean(col);
        for (std::size_t p = 0; p < n_; ++p) centered_[p * cols_ + j] = col[p] - cm;
    }
    gram_.assign(cols_ * cols_, 0.0);
    for (std::size_t p = 0; p < n_; ++p)
        for (std::size_t a = 0; a < cols_; ++a)
            for (std::size_t b = 0; b < cols_; ++b) gram_[a * cols_ + b] += centered_[p * cols_ + a] * centered_[p * cols_ + b];
    const double ridge = basis.ridge_for(n_);
    for (std::size_t a = 0; a < cols_; ++a) gram_[a * cols_ + a] += ridge;

    Eigen::Map<const Eigen::MatrixXd> G(gram_.data(), static_cast<Eigen::Index>(cols_),
                                        static_cast<Eigen::Index>(cols_));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    condition_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(condition_ <= basis.max_condition)) {
        std::ostringstream os;
        os << "regression at step " << step << " is singular (condition " << condition_ << ")";
        throw std::runtime_error(os.str());
    }
}

std::vector<double> StepRegression::project(std::span<const double> y) const {
    if (y.size() != n_) throw std::invalid_argument("regression: target size mismatch");
    const double ybar = shifted_mean(y);
    std::vector<double> fit(n_, ybar);
    if (cols_ == 0) return fit;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols_));
    for (std::size_t p = 0; p < n_; ++p) {
        const double d = y[p] - ybar;
        for (std::size_t j = 0; j < cols_; ++j) rhs[static_cast<Eigen::Index>(j)] += centered_[p * cols_ + j] * d;
    }
    Eigen::Map<const Eigen::MatrixXd> G(gram_.data(), static_cast<Eigen::Index>(cols_),
                                        static_cast<Eigen::Index>(cols_));
    const Eigen::VectorXd beta = G.ldlt().solve(rhs);
    for (std::size_t p = 0; p < n_; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols_; ++j) s += beta[static_cast<Eigen::Index>(j)] * centered_[p * cols_ + j];
        fit[p] = ybar + s;
    }
    return fit;
}

namespace {

void check_inputs(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu) {
    require_complete(spec);
    if (paths.control_signature != mu.signature())
        throw std::invalid_argument("adjoint: paths were generated by '" + paths.control_signature + "', not by '" +
                                    mu.signature() + "'");
    if (mu.n_actions() != spec.actions.size() || paths.n_actions != spec.actions.size())
        throw std::invalid_argument("adjoint: action count mismatch");
    if (paths.effective_noise.size() != paths.grid.steps() * paths.particles)
        throw std::invalid_argument("adjoint: paths carry no stored noise");
}

// Control-averaged coefficients at one step, per particle.
struct Barred {
    std::vector<double> bx, by, sx, sy, hx, hy, bxx, sxx, hxx;
    explicit Barred(std::size_t n) : bx(n), by(n), sx(n), sy(n), hx(n), hy(n), bxx(n), sxx(n), hxx(n) {}
};

void evaluate_barred(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu, std::size_t k,
                     std::size_t workers, Barred& out) {
    const std::size_t N = paths.particles;
    const double t = paths.grid.t(k);
    const double m = paths.means[k];
    const std::size_t ko = mu.observation_step(k);
    const std::size_t n = spec.actions.size();
    parallel_for(N, workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> w(n);
        for (std::size_t p = begin; p < end; ++p) {
            const double x = paths.state(p, k);
            mu.weights(k, paths.state(p, ko), w);
            double v[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
            for (std::size_t i = 0; i < n; ++i) {
                if (w[i] == 0.0) continue;
                const double a = spec.actions[i];
                v[0] += spec.b_x(t, x, m, a) * w[i];
                v[1] += spec.b_y(t, x, m, a) * w[i];
                v[2] += spec.sigma_x(t, x, m, a) * w[i];
                v[3] += spec.sigma_y(t, x, m, a) * w[i];
                v[4] += spec.h_x(t, x, m, a) * w[i];
                v[5] += spec.h_y(t, x, m, a) * w[i];
                v[6] += spec.b_xx(t, x, m, a) * w[i];
                v[7] += spec.sigma_xx(t, x, m, a) * w[i];
                v[8] += spec.h_xx(t, x, m, a) * w[i];
            }
            out.bx[p] = v[0];
            out.by[p] = v[1];
            out.sx[p] = v[2];
            out.sy[p] = v[3];
            out.hx[p] = v[4];
            out.hy[p] = v[5];
            out.bxx[p] = v[6];
            out.sxx[p] = v[7];
            out.hxx[p] = v[8];
        }
    });
}

void require_finite(std::span<const double> v, const char* what, std::size_t k) {
    for (std::size_t p = 0; p < v.size(); ++p)
        if (!std::isfinite(v[p])) {
            std::ostringstream os;
            os << "non-finite " << what << " at step " << k << ", particle " << p;
            throw std::runtime_error(os.str());
        }
}

// One backward step shared by both orders. `driver(p, next, z)` returns the
// driver for particle p given Y_{k+1} (next) and Z_k (z).
template <class Driver>
void backward_step(const PathBundle& paths, std::size_t k, const StepRegression& reg, std::span<const double> next,
                   std::span<double> y_out, std::span<double> z_out, AdjointDiagnostics& diag, Driver&& driver) {
    const std::size_t N = paths.particles;
    const double dt = paths.grid.dt();
    const auto dw = paths.effective_noise_at(k);
    const auto first_fit = reg.project(next);
    std::vector<double> target(N);
    for (std::size_t p = 0; p < N; ++p) target[p] = (next[p] - first_fit[p]) * dw[p] / dt;
    const auto z = reg.project(target);
    std::copy(z.begin(), z.end(), z_out.begin());

    // Y_{k+1} - Z_k dW_k has the same conditional mean as Y_{k+1} but none of
    // the Brownian fluctuation, so it is the target used for E_k[.] below.
    std::vector<double> hedged(N);
    for (std::size_t p = 0; p < N; ++p) hedged[p] = next[p] - z[p] * dw[p];
    const auto fit = reg.project(hedged);
    std::vector<double> resid(N), sq(N), cross(N);
    for (std::size_t p = 0; p < N; ++p) {
        resid[p] = hedged[p] - fit[p];
        sq[p] = resid[p] * resid[p];
        cross[p] = resid[p] * dw[p];
    }
    const auto rm = mean_stderr(resid);
    diag.residual_mean[k] = rm.mean;
    diag.residual_stderr[k] = rm.stderr_;
    const auto rw = mean_stderr(cross);
    diag.residual_cross[k] = rw.mean;
    diag.residual_cross_stderr[k] = rw.stderr_;
    diag.residual_qv += shifted_mean(sq);
    diag.max_condition = std::max(diag.max_condition, reg.condition());

    const auto drv = driver(next, std::span<const double>(z));
    std::vector<double> y(N);
    for (std::size_t p = 0; p < N; ++p) y[p] = hedged[p] + drv[p] * dt;
    const auto fitted = reg.project(y);
    std::copy(fitted.begin(), fitted.end(), y_out.begin());
}

void finish_diagnostics(std::span<const double> y, std::span<const double> z, std::size_t N, std::size_t K,
                        double dt, AdjointDiagnostics& diag) {
    std::vector<double> sup(N, 0.0), integ(N, 0.0);
    for (std::size_t k = 0; k <= K; ++k)
        for (std::size_t p = 0; p < N; ++p) sup[p] = std::max(sup[p], y[k * N + p] * y[k * N + p]);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < N; ++p) integ[p] += dt * z[k * N + p] * z[k * N + p];
    diag.sup_square = shifted_mean(sup);
    diag.integrated_square = shifted_mean(integ);
}

}  // namespace

AdjointFirst solve_first_order(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                               const RegressionBasis& basis, std::size_t workers) {
    basis.validate();
    check_inputs(spec, paths, mu);
    const std::size_t N = paths.particles, K = paths.grid.steps();
    AdjointFirst out;
    out.particles = N;
    out.steps = K;
    out.p.assign((K + 1) * N, 0.0);
    out.q.assign(K * N, 0.0);
    auto& diag = out.diagnostics;
    diag.residual_mean.assign(K, 0.0);
    diag.residual_stderr.assign(K, 0.0);
    diag.residual_cross.assign(K, 0.0);
    diag.residual_cross_stderr.assign(K, 0.0);

    {
        const auto xs = paths.states_at(K);
        const double m = paths.means[K];
        std::vector<double> gy(N);
        for (std::size_t p = 0; p < N; ++p) gy[p] = spec.g_y(xs[p], m);
        const double egy = shifted_mean(gy);
        for (std::size_t p = 0; p < N; ++p) out.p[K * N + p] = -spec.g_x(xs[p], m) - egy;
        require_finite(std::span<const double>(out.p.data() + K * N, N), "p", K);
    }

    Barred c(N);
    for (std::size_t k = K; k-- > 0;) {
        evaluate_barred(spec, paths, mu, k, workers, c);
        const StepRegression reg(paths.states_at(k), paths.means[k], basis, k);
        std::span<const double> next(out.p.data() + (k + 1) * N, N);
        std::span<double> pk(out.p.data() + k * N, N);
        std::span<double> qk(out.q.data() + k * N, N);
        backward_step(paths, k, reg, next, pk, qk, diag, [&](std::span<const double> pn, std::span<const double> q) {
            std::vector<double> byp(N), syq(N);
            for (std::size_t p = 0; p < N; ++p) {
                byp[p] = c.by[p] * pn[p];
                syq[p] = c.sy[p] * q[p];
            }
            const double e_byp = shifted_mean(byp), e_syq = shifted_mean(syq), e_hy = shifted_mean(c.hy);
            std::vector<double> d(N);
            for (std::size_t p = 0; p < N; ++p)
                d[p] = c.bx[p] * pn[p] + e_byp + c.sx[p] * q[p] + e_syq - c.hx[p] - e_hy;
            return d;
        });
        require_finite(pk, "p", k);
        require_finite(qk, "q", k);
    }
    finish_diagnostics(out.p, out.q, N, K, paths.grid.dt(), diag);
    return out;
}

AdjointSecond solve_second_order(const ProblemSpec& spec, const PathBundle& paths, const RelaxedControl& mu,
                                 const AdjointFirst& first, const RegressionBasis& basis, std::size_t workers) {
    basis.validate();
    check_inputs(spec, paths, mu);
    const std::size_t N = paths.particles, K = paths.grid.steps();
    if (first.particles != N || first.steps != K)
        throw std::invalid_argument("second-order adjoint: first-order solution is for different paths");
    AdjointSecond out;
    out.particles = N;
    out.steps = K;
    out.P.assign((K + 1) * N, 0.0);
    out.Q.assign(K * N, 0.0);
    auto& diag = out.diagnostics;
    diag.residual_mean.assign(K, 0.0);
    diag.residual_stderr.assign(K, 0.0);
    diag.residual_cross.assign(K, 0.0);
    diag.residual_cross_stderr.assign(K, 0.0);

    {
        const auto xs = paths.states_at(K);
        const double m = paths.means[K];
        for (std::size_t p = 0; p < N; ++p) out.P[K * N + p] = -spec.g_xx(xs[p], m);
        require_finite(std::span<const double>(out.P.data() + K * N, N), "P", K);
    }

    Barred c(N);
    for (std::size_t k = K; k-- > 0;) {
        evaluate_barred(spec, paths, mu, k, workers, c);
        const StepRegression reg(paths.states_at(k), paths.means[k], basis, k);
        std::span<const double> next(out.P.data() + (k + 1) * N, N);
        std::span<double> Pk(out.P.data() + k * N, N);
        std::span<double> Qk(out.Q.data() + k * N, N);
        backward_step(paths, k, reg, next, Pk, Qk, diag, [&](std::span<const double> Pn, std::span<const double> Q) {
            std::vector<double> d(N);
            for (std::size_t p = 0; p < N; ++p) {
                const double hxx = c.bxx[p] * first.p_at(p, k) + c.sxx[p] * first.q_at(p, k) - c.hxx[p];
                d[p] = 2.0 * c.bx[p] * Pn[p] + c.sx[p] * c.sx[p] * Pn[p] + 2.0 * c.sx[p] * Q[p] + hxx;
            }
            return d;
        });
        require_finite(Pk, "P", k);
        require_finite(Qk, "Q", k);
    }
    finish_diagnostics(out.P, out.Q, N, K, paths.grid.dt(), diag);
    return out;
}

void write_adjoint_csv(std::ostream& os, const AdjointFirst& first, const AdjointSecond& second,
                       std::size_t max_particles) {
    const std::size_t N = std::min(first.particles, max_particles), K = first.steps;
    os << "step,particle,p,q,P,Q\n";
    for (std::size_t k = 0; k <= K; ++k)
        for (std::size_t p = 0; p < N; ++p) {
            os << k << ',' << p << ',' << format_real(first.p_at(p, k)) << ',';
            if (k < K) os << format_real(first.q_at(p, k));
            os << ',' << format_real(second.P_at(p, k)) << ',';
            if (k < K) os << format_real(second.Q_at(p, k));
            os << "\n";
        }
}

void write_adjoint_summary(std::ostream& os, const AdjointFirst& first, const AdjointSecond& second) {
    auto block = [&](const char* prefix, const AdjointDiagnostics& d) {
        double worst = 0.0;
        for (std::size_t k = 0; k < d.residual_mean.size(); ++k)
            if (d.residual_stderr[k] > 0.0) worst = std::max(worst, std::abs(d.residual_mean[k]) / d.residual_stderr[k]);
        os << prefix << ".sup_square = " << format_real(d.sup_square) << "\n";
        os << prefix << ".integrated_square = " << format_real(d.integrated_square) << "\n";
        os << prefix << ".residual_qv = " << format_real(d.residual_qv) << "\n";
        os << prefix << ".max_condition = " << format_real(d.max_condition) << "\n";
        os << prefix << ".worst_residual_mean_in_stderrs = " << format_real(worst) << "\n";
        std::size_t outside = 0;
        for (std::size_t k = 0; k < d.residual_cross.size(); ++k)
            if (std::abs(d.residual_cross[k]) > 3.0 * d.residual_cross_stderr[k]) ++outside;
        os << prefix << ".steps_residual_correlated_with_noise = " << outside << "\n";
    };
    block("first", first.diagnostics);
    block("second", second.diagnostics);
}

}  // namespace mfc
