#include "apq/risk.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "apq/digest.hpp"
#include "apq/hybrid.hpp"
#include "apq/parallel.hpp"
#include "apq/stats.hpp"

namespace apq {

namespace {

// 0 log 0 = 0.
double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

struct RefitResult {
    bool ok = false;
    Params theta;
    Vector4d theta_tau = Vector4d::Zero();
    double sigma_last = 0.0;  // sigma^delta at the last in-window observation
};

RefitResult refit(const SeriesData& series, Eigen::Index window, const ForecastConfig& cfg, double level) {
    RefitResult out;
    try {
        const SeriesData head = series.head(window);
        const GqmleFit f = fit_gqmle(head, cfg.r, cfg.delta, cfg.optim);
        const QuantileFit q = fit_quantile(head, f, level);
        out.theta = f.theta_hat;
        out.theta_tau = q.theta_tau_hat;
        out.sigma_last = f.path.sigma_delta(window - 1);
        out.ok = std::isfinite(out.sigma_last) && q.theta_tau_hat.allFinite();
    } catch (const std::runtime_error&) {
        out.ok = false;
    } catch (const std::invalid_argument&) {
        out.ok = false;
    }
    return out;
}

std::string config_digest(const ForecastConfig& c) {
    Digest d;
    d.add(c.delta).add(c.r).add(c.tau).add(to_string(c.side));
    d.add(static_cast<std::uint64_t>(c.refit_every));
    d.add(c.optim.tol).add(static_cast<std::uint64_t>(c.optim.multistarts));
    return d.hex();
}

}  // namespace

std::string to_string(Side side) { return side == Side::lower ? "lower" : "upper"; }

Side parse_side(const std::string& text) {
    if (text == "lower" || text == "L") return Side::lower;
    if (text == "upper" || text == "U") return Side::upper;
    throw InputError("side must be 'lower' or 'upper'");
}

ForecastRun expanding_window_forecast(const SeriesData& series, const ForecastConfig& cfg) {
    series.validate();
    if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) throw InputError("tau must lie in (0,1)");
    if (cfg.refit_every < 1) throw InputError("refit_every must be at least 1");
    const Eigen::Index n = series.size();
    Eigen::Index start = cfg.start_index > 0
                             ? cfg.start_index
                             : static_cast<Eigen::Index>(std::floor(cfg.start_fraction * static_cast<double>(n)));
    if (start < 250) throw InputError("initial window must hold at least 250 observations");
    if (start >= n) throw InputError("initial window leaves no out-of-sample observations");

    ForecastRun run;
    run.tau = cfg.tau;
    run.side = cfg.side;
    run.refit_every = cfg.refit_every;
    run.model_config = config_digest(cfg);
    const double level = run.level();
    const double delta = cfg.delta;

    std::vector<Eigen::Index> refit_at;
    for (Eigen::Index t = start; t < n; t += cfg.refit_every) refit_at.push_back(t);
    std::vector<RefitResult> fits(refit_at.size());
    parallel_for(refit_at.size(), cfg.jobs, [&](std::size_t i) { fits[i] = refit(series, refit_at[i], cfg, level); });

    std::vector<double> var, realized;
    std::optional<RefitResult> active;
    double sigma = 0.0;  // sigma^delta at observation t - 1 under the active parameters
    std::size_t next_refit = 0;
    for (Eigen::Index t = start; t < n; ++t) {
        const double prev_eps = series.values(t - 1);
        if (next_refit < refit_at.size() && refit_at[next_refit] == t) {
            if (fits[next_refit].ok) {
                active = fits[next_refit];
                sigma = active->sigma_last;
            } else if (active) {
                sigma = recursion_step(active->theta, positive_power(series.values(t - 2), delta),
                                       negative_power(series.values(t - 2), delta), sigma);
            }
            ++next_refit;
            if (!fits[next_refit - 1].ok) {
                run.gaps.push_back(t);
                continue;
            }
        } else if (active) {
            sigma = recursion_step(active->theta, positive_power(series.values(t - 2), delta),
                                   negative_power(series.values(t - 2), delta), sigma);
        }
        if (!active) {
            run.gaps.push_back(t);
            continue;
        }
        const Vector4d z(1.0, positive_power(prev_eps, delta), negative_power(prev_eps, delta), sigma);
        var.push_back(inverse_transform(active->theta_tau.dot(z), delta));
        realized.push_back(series.values(t));
        run.targets.push_back(t);
    }
    const auto total = static_cast<double>(n - start);
    if (static_cast<double>(run.gaps.size()) > 0.05 * total)
        throw NumericalError("more than 5% of forecast origins failed to fit (" + std::to_string(run.gaps.size()) +
                             " of " + std::to_string(n - start) + ")");
    run.var_series = Eigen::Map<Eigen::VectorXd>(var.data(), static_cast<Eigen::Index>(var.size()));
    run.realized = Eigen::Map<Eigen::VectorXd>(realized.data(), static_cast<Eigen::Index>(realized.size()));
    return run;
}

std::vector<int> exceedances(const Eigen::Ref<const Eigen::VectorXd>& realized,
                             const Eigen::Ref<const Eigen::VectorXd>& var_series, Side side) {
    if (realized.size() != var_series.size()) throw InputError("realized and VaR series differ in length");
    std::vector<int> flags(static_cast<std::size_t>(realized.size()));
    for (Eigen::Index t = 0; t < realized.size(); ++t)
        flags[static_cast<std::size_t>(t)] =
            side == Side::lower ? realized(t) < var_series(t) : realized(t) > var_series(t);
    return flags;
}

CcResult cc_test(const std::vector<int>& flags, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0,1)");
    if (flags.size() < 20) throw InputError("CC test needs at least 20 flags");
    CcResult res;
    double n1 = 0.0;
    for (int f : flags) {
        if (f != 0 && f != 1) throw InputError("exceedance flags must be 0 or 1");
        n1 += f;
    }
    const double n = static_cast<double>(flags.size());
    const double n0 = n - n1;
    const double pi = n1 / n;
    res.lr_uc = -2.0 * (xlogy(n0, 1.0 - tau) + xlogy(n1, tau)) + 2.0 * (xlogy(n0, 1.0 - pi) + xlogy(n1, pi));

    auto& c = res.transitions;
    for (std::size_t i = 1; i < flags.size(); ++i) ++c[static_cast<std::size_t>(2 * flags[i - 1] + flags[i])];
    const double n00 = static_cast<double>(c[0]), n01 = static_cast<double>(c[1]);
    const double n10 = static_cast<double>(c[2]), n11 = static_cast<double>(c[3]);
    if (n1 == 0.0 || n0 == 0.0) {
        res.degenerate = true;
        res.lr_ind = 0.0;
        res.lr_cc = res.lr_uc;
        res.dof = 1;
        res.p_value = stats::chi_square_sf(res.lr_uc, 1.0);
        return res;
    }
    const double p2 = (n01 + n11) / (n00 + n01 + n10 + n11);
    const double p01 = n00 + n01 > 0.0 ? n01 / (n00 + n01) : 0.0;
    const double p11 = n10 + n11 > 0.0 ? n11 / (n10 + n11) : 0.0;
    const double restricted = xlogy(n00 + n10, 1.0 - p2) + xlogy(n01 + n11, p2);
    const double unrestricted = xlogy(n00, 1.0 - p01) + xlogy(n01, p01) + xlogy(n10, 1.0 - p11) + xlogy(n11, p11);
    res.lr_ind = std::max(0.0, -2.0 * (restricted - unrestricted));
    res.lr_cc = res.lr_uc + res.lr_ind;
    res.dof = 2;
    res.p_value = stats::chi_square_sf(res.lr_cc, 2.0);
    return res;
}

DqResult dq_quadratic_form(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& hit,
                           double tau) {
    if (X.rows() != hit.size()) throw InputError("design and hit vector differ in length");
    const Eigen::Index k = X.cols();
    const Eigen::VectorXd xh = X.transpose() * hit;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X.transpose() * X);
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double cut = 1e-12 * std::max(lam.maxCoeff(), 0.0);
    int rank = 0;
    Eigen::VectorXd inv(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        inv(i) = lam(i) > cut ? 1.0 / lam(i) : 0.0;
        rank += lam(i) > cut;
    }
    const Eigen::VectorXd proj = es.eigenvectors().transpose() * xh;
    DqResult res;
    res.statistic = proj.dot(inv.asDiagonal() * proj) / (tau * (1.0 - tau));
    res.dof = rank;
    res.pseudo_inverse = rank < k;
    res.p_value = rank > 0 ? stats::chi_square_sf(res.statistic, rank) : 1.0;
    return res;
}

DqResult dq_test(const Eigen::Ref<const Eigen::VectorXd>& realized, const Eigen::Ref<const Eigen::VectorXd>& var_series,
                 double tau, Side side, int lags) {
    if (side == Side::upper) return dq_test(-realized, -var_series, tau, Side::lower, lags);
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0,1)");
    if (lags < 0) throw InputError("lags must be nonnegative");
    const Eigen::Index n = realized.size();
    if (var_series.size() != n) throw InputError("realized and VaR series differ in length");
    if (n < lags + 10) throw InputError("series too short for the DQ test");

    Eigen::VectorXd hit(n);
    for (Eigen::Index t = 0; t < n; ++t) hit(t) = (realized(t) < var_series(t) ? 1.0 : 0.0) - tau;
    const Eigen::Index rows = n - lags;
    const Eigen::Index k = lags + 2;
    Eigen::MatrixXd X(rows, k);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::Index t = i + lags;
        X(i, 0) = 1.0;
        for (int l = 1; l <= lags; ++l) X(i, l) = hit(t - l);
        X(i, k - 1) = var_series(t);
    }
    return dq_quadratic_form(X, hit.tail(rows), tau);
}

double coverage_error(const ForecastRun& run) {
    if (run.n_out() == 0) throw InputError("empty forecast run");
    const auto flags = exceedances(run.realized, run.var_series, run.side);
    long count = 0;
    for (int f : flags) count += f;
    return static_cast<double>(count) / static_cast<double>(run.n_out()) - run.tau;
}

BacktestReport backtest(const ForecastRun& run) {
    BacktestReport rep;
    rep.n_out = run.n_out();
    const auto flags = exceedances(run.realized, run.var_series, run.side);
    for (int f : flags) rep.n_exceed += f;
    rep.coverage_error = coverage_error(run);
    rep.cc = cc_test(flags, run.tau);
    rep.dq = dq_test(run.realized, run.var_series, run.tau, run.side);
    rep.cc_pvalue = rep.cc.p_value;
    rep.dq_pvalue = rep.dq.p_value;
    rep.min_pvalue = std::min(rep.cc_pvalue, rep.dq_pvalue);
    rep.good = rep.min_pvalue > 0.05;
    return rep;
}

}  // namespace apq
