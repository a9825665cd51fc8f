#include "apq/gqmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "apq/linalg.hpp"
#include "apq/parallel.hpp"

namespace apq {

namespace {

constexpr double kSigmaFloor = 1e-300;

struct Prepared {
    Eigen::VectorXd pos;   // (eps_t^+)^delta
    Eigen::VectorXd neg;   // (-eps_t^-)^delta
    Eigen::VectorXd absr;  // |eps_t|^r
    double sigma0 = 0.0;
    double pos0 = 0.0;
    double neg0 = 0.0;
    double r = 2.0;
    double delta = 2.0;
    double c = 1.0;  // r / delta
};

void check_fit_init(const InitRule& init) {
    if (init.kind == InitRule::Kind::unconditional)
        throw InputError("GQMLE needs a parameter-free initial value (sample_mean or fixed)");
}

Prepared prepare(const SeriesData& series, double r, double delta, const InitRule& init) {
    check_fit_init(init);
    series.validate();
    if (!(r > 0.0)) throw InputError("r must be positive");
    if (!(delta > 0.0)) throw InputError("delta must be positive");
    Prepared p;
    const Eigen::Index n = series.size();
    p.pos.resize(n);
    p.neg.resize(n);
    p.absr.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const double e = series.values(t);
        p.pos(t) = positive_power(e, delta);
        p.neg(t) = negative_power(e, delta);
        const double a = std::abs(e);
        p.absr(t) = r == delta ? p.pos(t) + p.neg(t) : (r == 2.0 ? a * a : (r == 1.0 ? a : std::pow(a, r)));
    }
    const auto s0 = initial_state(series, Params{1.0, 0.0, 0.0, 0.0, delta}, init);
    p.sigma0 = s0.sigma_delta;
    p.pos0 = positive_power(s0.epsilon, delta);
    p.neg0 = negative_power(s0.epsilon, delta);
    p.r = r;
    p.delta = delta;
    p.c = r / delta;
    return p;
}

inline double pow_neg_c(double h, double logh, double c) {
    if (c == 1.0) return 1.0 / h;
    if (c == 0.5) return 1.0 / std::sqrt(h);
    if (c == 2.0) return 1.0 / (h * h);
    return std::exp(-c * logh);
}

ObjectiveValue evaluate(const Prepared& P, const Vector4d& th, bool second_order) {
    const double w = th(0), ap = th(1), am = th(2), b = th(3);
    const double c = P.c;
    const Eigen::Index n = P.absr.size();
    double hprev = P.sigma0, pp = P.pos0, pn = P.neg0;
    Vector4d g = Vector4d::Zero();
    Vector4d s = Vector4d::Zero();
    ObjectiveValue out;
    double value = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double h_raw = w + ap * pp + am * pn + b * hprev;
        Vector4d gnew(1.0, pp, pn, hprev);
        gnew += b * g;
        if (second_order) {
            s = b * s + g;
            s(3) += g(3);
        }
        g = gnew;
        double h = h_raw;
        if (!(h >= kSigmaFloor)) {
            h = kSigmaFloor;
            out.floor_hit = true;
        }
        const double logh = std::log(h);
        const double q = P.absr(t) * pow_neg_c(h, logh, c);
        value += c * logh + q;
        const double inv = 1.0 / h;
        const double d1 = c * inv * (1.0 - q);
        out.gradient += d1 * g;
        if (second_order) {
            const double d2 = c * inv * inv * ((c + 1.0) * q - 1.0);
            const Vector4d gs = g * inv;
            out.hessian.noalias() += d2 * g * g.transpose();
            out.fisher.noalias() += gs * gs.transpose();
            out.hessian.row(3) += d1 * s.transpose();
            out.hessian.col(3) += d1 * s;
            out.hessian(3, 3) -= d1 * s(3);
        }
        hprev = h_raw;
        pp = P.pos(t);
        pn = P.neg(t);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.value = value * inv_n;
    out.gradient *= inv_n;
    out.hessian *= inv_n;
    out.fisher *= inv_n * c * c;
    return out;
}

// Optimisation coordinates: x = (log omega, free alphas..., beta), where the
// symmetric variant ties both alphas to a single coordinate.
struct Space {
    bool symmetric = false;
    int k = 4;
    Eigen::VectorXd lo, hi;      // bounds on natural coordinates nu = (omega, alphas, beta)
    Eigen::Matrix<double, 4, Eigen::Dynamic> A;  // theta = A nu

    Eigen::VectorXd nu_of_x(const Eigen::VectorXd& x) const {
        Eigen::VectorXd nu = x;
        nu(0) = std::exp(x(0));
        return nu;
    }
    Eigen::VectorXd x_of_nu(const Eigen::VectorXd& nu) const {
        Eigen::VectorXd x = nu;
        x(0) = std::log(nu(0));
        return x;
    }
    Vector4d theta_of_x(const Eigen::VectorXd& x) const {
        return A * nu_of_x(x);
    }
    Eigen::VectorXd xlo() const { return x_of_nu(lo); }
    Eigen::VectorXd xhi() const { return x_of_nu(hi); }
    Eigen::VectorXd nu_of_theta(const Vector4d& th) const {
        Eigen::VectorXd nu(k);
        if (symmetric) nu << th(0), 0.5 * (th(1) + th(2)), th(3);
        else nu = th;
        return nu;
    }
};

Eigen::VectorXd clamp(const Eigen::VectorXd& v, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return v.cwiseMax(lo).cwiseMin(hi);
}

double projected_gradient_norm(const Eigen::VectorXd& nu, const Eigen::VectorXd& g_nu, const Space& sp) {
    return (nu - clamp(nu - g_nu, sp.lo, sp.hi)).lpNorm<Eigen::Infinity>();
}

struct LocalResult {
    Vector4d theta;
    double value = 0.0;
    double projected_gradient = 0.0;
    int iterations = 0;
    bool converged = false;
};

LocalResult projected_newton(const Prepared& P, const Space& sp, const Vector4d& start, const OptimOptions& opts) {
    const int k = sp.k;
    const Eigen::VectorXd xlo = sp.xlo(), xhi = sp.xhi();
    Eigen::VectorXd x = clamp(sp.x_of_nu(clamp(sp.nu_of_theta(start), sp.lo, sp.hi)), xlo, xhi);

    LocalResult res;
    ObjectiveValue cur = evaluate(P, sp.theta_of_x(x), true);
    for (int iter = 0; iter <= opts.max_iter; ++iter) {
        res.iterations = iter;
        if (!std::isfinite(cur.value)) break;
        const Eigen::VectorXd nu = sp.nu_of_x(x);
        const Eigen::VectorXd g_nu = sp.A.transpose() * cur.gradient;
        res.projected_gradient = projected_gradient_norm(nu, g_nu, sp);
        if (res.projected_gradient < opts.tol) {
            res.converged = true;
            break;
        }
        if (iter == opts.max_iter) break;

        // Chain rule to x-space.
        Eigen::MatrixXd J = sp.A;
        J.col(0) *= nu(0);
        const Eigen::VectorXd gx = J.transpose() * cur.gradient;
        Eigen::MatrixXd Hx = J.transpose() * cur.hessian * J;
        Hx(0, 0) += nu(0) * g_nu(0);
        const Eigen::MatrixXd Fx = J.transpose() * cur.fisher * J;

        const double eps_act = std::min(1e-8, (x - clamp(x - gx, xlo, xhi)).lpNorm<Eigen::Infinity>());
        std::vector<int> free_idx, bound_idx;
        for (int i = 0; i < k; ++i) {
            const bool at_lo = x(i) <= xlo(i) + eps_act && gx(i) > 0.0;
            const bool at_hi = x(i) >= xhi(i) - eps_act && gx(i) < 0.0;
            (at_lo || at_hi ? bound_idx : free_idx).push_back(i);
        }
        Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
        if (!free_idx.empty()) {
            const int m = static_cast<int>(free_idx.size());
            Eigen::MatrixXd B(m, m), Bf(m, m);
            Eigen::VectorXd gf(m);
            for (int a = 0; a < m; ++a) {
                gf(a) = gx(free_idx[a]);
                for (int b = 0; b < m; ++b) {
                    B(a, b) = Hx(free_idx[a], free_idx[b]);
                    Bf(a, b) = Fx(free_idx[a], free_idx[b]);
                }
            }
            Eigen::LLT<Eigen::MatrixXd> llt(B);
            bool ok = llt.info() == Eigen::Success;
            if (ok) {
                const double dmin = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
                const double dmax = llt.matrixL().toDenseMatrix().diagonal().maxCoeff();
                ok = dmin > 1e-8 * dmax;
            }
            Eigen::VectorXd df;
            if (ok) {
                df = -llt.solve(gf);
            } else {
                Bf.diagonal() += Eigen::VectorXd::Constant(m, 1e-12 * std::max(1.0, Bf.diagonal().maxCoeff()));
                Eigen::LDLT<Eigen::MatrixXd> ldlt(Bf);
                df = -ldlt.solve(gf);
                if (!df.allFinite() || gf.dot(df) >= 0.0) df = -gf;
            }
            for (int a = 0; a < m; ++a) d(free_idx[a]) = df(a);
        }
        for (int i : bound_idx) {
            const double scale = std::max({Hx(i, i), Fx(i, i), 1e-12});
            d(i) = -gx(i) / scale;
        }

        double step = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new;
        ObjectiveValue trial;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = clamp(x + step * d, xlo, xhi);
            const Eigen::VectorXd dx = x_new - x;
            trial = evaluate(P, sp.theta_of_x(x_new), false);
            const double slope = gx.dot(dx);
            if (std::isfinite(trial.value) && trial.value <= cur.value + 1e-4 * slope) {
                accepted = true;
                break;
            }
            // Near the optimum the predicted decrease falls below the rounding
            // level of the objective; accept a full step that reduces the
            // projected gradient instead.
            if (ls == 0 && std::isfinite(trial.value) && -slope < 1e-13 * (1.0 + std::abs(cur.value))) {
                const ObjectiveValue full = evaluate(P, sp.theta_of_x(x_new), true);
                const Eigen::VectorXd gn = sp.A.transpose() * full.gradient;
                if (projected_gradient_norm(sp.nu_of_x(x_new), gn, sp) < res.projected_gradient) {
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No descent possible along the projection arc at working precision.
            res.converged = res.projected_gradient < std::sqrt(opts.tol);
            break;
        }
        const double move = (x_new - x).lpNorm<Eigen::Infinity>();
        x = x_new;
        cur = evaluate(P, sp.theta_of_x(x), true);
        if (move <= 1e-15 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
            const Eigen::VectorXd g_end = sp.A.transpose() * cur.gradient;
            res.projected_gradient = projected_gradient_norm(sp.nu_of_x(x), g_end, sp);
            res.converged = res.projected_gradient < std::sqrt(opts.tol);
            res.iterations = iter + 1;
            break;
        }
    }
    res.theta = sp.theta_of_x(x);
    res.value = cur.value;
    return res;
}

Space make_space(const SeriesData& series, double delta, const OptimOptions& opts) {
    Space sp;
    sp.symmetric = opts.symmetric_alpha;
    sp.k = sp.symmetric ? 3 : 4;
    double mean_pow = 0.0;
    for (Eigen::Index t = 0; t < series.size(); ++t) mean_pow += std::pow(std::abs(series.values(t)), delta);
    mean_pow /= static_cast<double>(series.size());
    const double omega_hi = std::max(opts.omega_upper_factor * mean_pow, 10.0 * opts.omega_lower);
    sp.lo.resize(sp.k);
    sp.hi.resize(sp.k);
    sp.A = Eigen::Matrix<double, 4, Eigen::Dynamic>::Zero(4, sp.k);
    if (sp.symmetric) {
        sp.lo << opts.omega_lower, 0.0, 0.0;
        sp.hi << omega_hi, opts.alpha_upper, opts.beta_upper;
        sp.A(0, 0) = 1.0;
        sp.A(1, 1) = 1.0;
        sp.A(2, 1) = 1.0;
        sp.A(3, 2) = 1.0;
    } else {
        sp.lo << opts.omega_lower, 0.0, 0.0, 0.0;
        sp.hi << omega_hi, opts.alpha_upper, opts.alpha_upper, opts.beta_upper;
        sp.A.setIdentity();
    }
    return sp;
}

std::vector<Vector4d> start_grid(const SeriesData& series, double delta, const OptimOptions& opts) {
    const Eigen::Index m = std::min<Eigen::Index>(series.size(), 100);
    double level = 0.0;
    for (Eigen::Index t = 0; t < m; ++t) level += std::pow(std::abs(series.values(t)), delta);
    level /= static_cast<double>(m);
    if (!(level > 0.0) || !std::isfinite(level)) level = 1.0;

    const double betas[] = {0.9, 0.7, 0.5};
    const double splits[3][2] = {{0.5, 0.5}, {0.25, 0.75}, {0.75, 0.25}};
    std::vector<Vector4d> grid;
    if (opts.warm_start) grid.push_back(*opts.warm_start);
    std::vector<Vector4d> all;
    for (double b : betas) {
        for (const auto& s : splits) {
            if (opts.symmetric_alpha && s[0] != s[1]) continue;
            const double mass = 1.0 - b;
            all.emplace_back(level * 0.5 * (1.0 - b), mass * s[0], mass * s[1], b);
        }
    }
    const int count = std::clamp(opts.multistarts, 1, static_cast<int>(all.size()));
    for (int i = 0; i < count; ++i) grid.push_back(all[static_cast<std::size_t>(i)]);
    return grid;
}

}  // namespace

ObjectiveValue gqmle_objective(const Params& theta, const SeriesData& series, double r, const InitRule& init) {
    const Prepared P = prepare(series, r, theta.delta, init);
    return evaluate(P, theta.theta(), true);
}

GqmleFit evaluate_gqmle_at(const SeriesData& series, const Params& theta, double r, const InitRule& init) {
    check_fit_init(init);
    GqmleFit fit;
    fit.theta_hat = theta;
    fit.r = r;
    const double delta = theta.delta;
    const auto s0 = initial_state(series, theta, init);
    fit.path = volatility_path<double>(series.values, theta, s0);
    const Eigen::Index n = series.size();
    fit.residuals.resize(n);
    fit.regressors.resize(n, 4);
    const double c = r / delta;
    double prev_h = s0.sigma_delta;
    double prev_e = s0.epsilon;
    Vector4d prev_g = Vector4d::Zero();
    double obj = 0.0, m2r = 0.0;
    const double inv_delta = 1.0 / delta;
    for (Eigen::Index t = 0; t < n; ++t) {
        double h = fit.path.sigma_delta(t);
        if (!(h >= kSigmaFloor)) {
            h = kSigmaFloor;
            fit.floor_hit = true;
        }
        const double eta = series.values(t) / std::pow(h, inv_delta);
        fit.residuals(t) = eta;
        const Vector4d z(1.0, positive_power(prev_e, delta), negative_power(prev_e, delta), prev_h);
        fit.regressors.row(t) = z.transpose();
        const Vector4d g = fit.path.grad.row(t).transpose();
        const double w = 1.0 / (h * h);
        fit.J_tilde.noalias() += w * g * g.transpose();
        fit.Omega_tilde.noalias() += w * z * z.transpose();
        fit.H_tilde.noalias() += w * z * g.transpose();
        fit.Gamma_tilde.noalias() += (theta.beta * w) * z * prev_g.transpose();
        const double q = std::pow(std::abs(eta), r);
        obj += c * std::log(h) + q;
        m2r += q * q;
        prev_h = fit.path.sigma_delta(t);
        prev_e = series.values(t);
        prev_g = g;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    fit.J_tilde *= inv_n;
    fit.Omega_tilde *= inv_n;
    fit.H_tilde *= inv_n;
    fit.Gamma_tilde *= inv_n;
    fit.objective = obj * inv_n;
    fit.kappa2r_hat = (m2r * inv_n - 1.0) / (r * r);
    return fit;
}

GqmleFit fit_gqmle(const SeriesData& series, double r, double delta, const OptimOptions& opts) {
    series.validate();
    if (series.size() < 50) throw InputError("GQMLE needs at least 50 observations");
    if (!(r > 0.0 && r <= 4.0)) throw InputError("r must lie in (0, 4]");
    if (!(delta > 0.0)) throw InputError("delta must be positive");
    if (!(opts.tol > 0.0) || opts.max_iter < 1) throw InputError("invalid optimizer tolerance or iteration cap");
    if (!(opts.omega_lower > 0.0) || !(opts.alpha_upper > 0.0) || !(opts.beta_upper > 0.0 && opts.beta_upper < 1.0))
        throw InputError("invalid box bounds");

    const Prepared P = prepare(series, r, delta, opts.init);
    const Space sp = make_space(series, delta, opts);
    const std::vector<Vector4d> grid = start_grid(series, delta, opts);

    std::vector<LocalResult> results(grid.size());
    std::vector<double> start_values(grid.size());
    parallel_for(grid.size(), opts.jobs, [&](std::size_t i) {
        const Vector4d th0 = sp.A * clamp(sp.nu_of_theta(grid[i]), sp.lo, sp.hi);
        start_values[i] = evaluate(P, th0, false).value;
        results[i] = projected_newton(P, sp, grid[i], opts);
    });

    int best = -1;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!std::isfinite(results[i].value)) continue;
        if (best < 0 || results[i].value < results[static_cast<std::size_t>(best)].value) best = static_cast<int>(i);
    }
    if (best < 0) throw NumericalError("GQMLE objective is not finite at any start");

    const LocalResult& win = results[static_cast<std::size_t>(best)];
    GqmleFit fit = evaluate_gqmle_at(series, Params::from_theta(win.theta, delta), r, opts.init);
    for (std::size_t i = 0; i < results.size(); ++i) {
        StartRecord rec;
        rec.start = sp.A * clamp(sp.nu_of_theta(grid[i]), sp.lo, sp.hi);
        rec.start_objective = start_values[i];
        rec.end = results[i].theta;
        rec.end_objective = results[i].value;
        rec.projected_gradient = results[i].projected_gradient;
        rec.iterations = results[i].iterations;
        rec.converged = results[i].converged;
        fit.starts.push_back(rec);
    }
    fit.best_start = best;
    fit.iterations = win.iterations;
    fit.projected_gradient = win.projected_gradient;
    fit.converged = win.converged;

    const Vector4d& th = win.theta;
    const double span = sp.hi(0) - sp.lo(0);
    fit.omega_at_bound = th(0) <= sp.lo(0) * (1.0 + 1e-6) || th(0) >= sp.hi(0) - 1e-9 * span;
    fit.alpha_at_zero = th(1) == 0.0 || th(2) == 0.0;
    fit.beta_at_bound = th(3) == 0.0 || th(3) >= opts.beta_upper;
    if (series.size() < 250) fit.warnings.emplace_back("fewer than 250 observations");
    if (fit.omega_at_bound) fit.warnings.emplace_back("omega at a box bound");
    if (fit.alpha_at_zero) fit.warnings.emplace_back("alpha at zero");
    if (fit.beta_at_bound) fit.warnings.emplace_back("beta at a box bound");
    if (fit.floor_hit) fit.warnings.emplace_back("sigma floor reached");
    if (!fit.converged)
        throw NumericalError("GQMLE did not converge (projected gradient " + std::to_string(win.projected_gradient) + ")");
    return fit;
}

GqmleCovariance gqmle_avar(const GqmleFit& fit) {
    const double n = static_cast<double>(fit.n());
    const double delta = fit.delta();
    const double r = fit.r;
    const bool allow_pseudo = fit.alpha_at_zero || fit.beta_at_bound;
    GqmleCovariance out;
    const SpdInverse Jinv = invert_spd(fit.J_tilde, 1e12, allow_pseudo);
    out.condition = Jinv.condition;
    out.pseudo_inverse = Jinv.pseudo;
    out.cov_theta = fit.kappa2r_hat * delta * delta * Matrix4d(Jinv.inverse) / n;
    out.cov_theta = 0.5 * (out.cov_theta + out.cov_theta.transpose()).eval();

    const Matrix3d Jvv = fit.J_tilde.bottomRightCorner<3, 3>();
    const SpdInverse Jvv_inv = invert_spd(Jvv, 1e12, allow_pseudo);
    out.pseudo_inverse = out.pseudo_inverse || Jvv_inv.pseudo;
    Matrix3d meat = Matrix3d::Zero();
    for (Eigen::Index t = 0; t < fit.n(); ++t) {
        const double h = std::max(fit.path.sigma_delta(t), kSigmaFloor);
        const double q = std::pow(std::abs(fit.residuals(t)), r);
        const Eigen::Vector3d v = ((1.0 - q) / h) * fit.path.grad.row(t).tail<3>().transpose();
        meat.noalias() += v * v.transpose();
    }
    meat /= n;
    const Matrix3d Ji = Jvv_inv.inverse;
    out.cov_vartheta_star = (delta * delta / (r * r)) * Ji * meat * Ji / n;
    out.cov_vartheta_star = 0.5 * (out.cov_vartheta_star + out.cov_vartheta_star.transpose()).eval();
    return out;
}

}  // namespace apq
