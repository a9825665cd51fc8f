#include "apq/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "apq/inference.hpp"
#include "apq/parallel.hpp"

namespace apq {

namespace {

constexpr Eigen::Index kStationaryBurnin = 500;
constexpr Eigen::Index kGammaDraws = 1000000;
constexpr std::uint64_t kGammaStream = 0x6a09e667f3bcc909ULL;
constexpr double kMaxFailureShare = 0.02;

Params with_alpha_plus(Params p, double alpha_plus) {
    p.alpha_plus = alpha_plus;
    return p;
}

double mean_of(std::vector<double>& v) { return pairwise_sum(v.begin(), v.end()) / static_cast<double>(v.size()); }

void check_failures(int failures, int total, const std::string& what) {
    if (total > 0 && static_cast<double>(failures) > kMaxFailureShare * total)
        throw NumericalError(what + ": " + std::to_string(failures) + " of " + std::to_string(total) +
                             " replications failed");
}

Eigen::Index burnin_for(const ExperimentConfig& c, double gamma, double se) {
    if (c.burnin) return *c.burnin;
    return gamma + 3.0 * se < 0.0 ? kStationaryBurnin : 0;
}

}  // namespace

std::string to_string(Design design) {
    switch (design) {
        case Design::stationary_estimation: return "stationary_estimation";
        case Design::boundary_estimation: return "boundary_estimation";
        case Design::stationarity_power: return "stationarity_power";
        case Design::asymmetry_power: return "asymmetry_power";
        case Design::custom: return "custom";
    }
    return "custom";
}

Design parse_design(const std::string& text) {
    for (Design d : {Design::stationary_estimation, Design::boundary_estimation, Design::stationarity_power,
                     Design::asymmetry_power, Design::custom})
        if (to_string(d) == text) return d;
    throw InputError("unknown design '" + text + "'");
}

void ExperimentConfig::validate() const {
    if (replications < 0) throw InputError("replications must be non-negative");
    if (n < 250) throw InputError("n must be at least 250");
    if (!(delta > 0.0) || !(r > 0.0)) throw InputError("delta and r must be positive");
    if (theta0.delta != delta) throw InputError("theta0.delta differs from delta");
    theta0.validate();
    for (double tau : taus)
        if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0,1)");
    for (double a : alpha_plus_grid)
        if (!(a >= 0.0)) throw InputError("alpha_plus grid values must be non-negative");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("significance level must lie in (0,1)");
    if (burnin && *burnin < 0) throw InputError("burn-in must be non-negative");
    (void)dist.abs_moment(r);
}

ExperimentConfig preset(Design design, ExperimentConfig c) {
    c.design = design;
    switch (design) {
        case Design::stationary_estimation:
            c.delta = 2.0;
            c.r = 2.0;
            c.taus = {0.05};
            c.dist = InnovationDist::normal();
            c.theta0 = Params{0.1, 0.05, 0.15, 0.9, 2.0};
            c.alpha_plus_grid.clear();
            break;
        case Design::boundary_estimation:
            c.delta = 1.0;
            c.r = 1.0;
            c.taus = {0.1};
            c.dist = InnovationDist::normal();
            c.theta0 = Params{0.1, 0.1083685, 0.15, 0.9, 1.0};
            c.alpha_plus_grid.clear();
            break;
        case Design::stationarity_power:
            c.delta = 2.0;
            c.r = 2.0;
            c.taus = {0.05};
            c.dist = InnovationDist::normal();
            c.theta0 = Params{0.1, 0.07224697, 0.15, 0.9, 2.0};
            c.alpha_plus_grid = {0.01, 0.03, 0.05, 0.07224697, 0.09, 0.11, 0.13};
            break;
        case Design::asymmetry_power:
            c.delta = 2.0;
            c.r = 1.0;
            c.taus = {0.05, 0.1};
            c.dist = InnovationDist::normal();
            c.theta0 = Params{0.1, 0.15, 0.15, 0.9, 2.0};
            c.alpha_plus_grid.clear();
            for (int k = 0; k < 15; ++k) c.alpha_plus_grid.push_back(0.01 + 0.02 * k);
            break;
        case Design::custom: break;
    }
    return c;
}

double rescale_factor(const InnovationDist& dist, double r, double delta) {
    return std::pow(dist.abs_moment(r), delta / r);
}

Vector4d rescale_estimate(const QuantileFit& qfit, const InnovationDist& dist, double r, double delta) {
    Vector4d out = qfit.theta_tau_hat;
    out(3) *= rescale_factor(dist, r, delta);
    return out;
}

Eigen::Index default_burnin(const Params& theta0, const InnovationDist& dist) {
    const LyapunovEstimate g = lyapunov_mc(theta0, dist, kGammaDraws, kGammaStream);
    return g.gamma + 3.0 * g.std_error < 0.0 ? kStationaryBurnin : 0;
}

EstimationSummary run_estimation_study(const ExperimentConfig& config) {
    config.validate();
    if (config.taus.empty()) throw InputError("estimation study needs at least one tau");
    EstimationSummary out;
    out.config = config;
    const LyapunovEstimate g = lyapunov_mc(config.theta0, config.dist, kGammaDraws, kGammaStream, config.jobs);
    out.gamma0 = g.gamma;
    out.burnin = burnin_for(config, g.gamma, g.std_error);
    const std::size_t ntau = config.taus.size();
    const double c = rescale_factor(config.dist, config.r, config.delta);

    std::vector<EstimationRecord> recs(static_cast<std::size_t>(config.replications));
    std::vector<int> cert_fail(recs.size(), 0);
    parallel_for(recs.size(), config.jobs, [&](std::size_t i) {
        EstimationRecord& rec = recs[i];
        rec.replication = static_cast<int>(i);
        try {
            const SeriesData s =
                simulate(config.theta0, config.dist, config.n, out.burnin, derive_seed(config.seed, i)).series;
            const GqmleFit f = fit_gqmle(s, config.r, config.delta);
            for (double tau : config.taus) {
                const QuantileFit q = fit_quantile(s, f, tau);
                cert_fail[i] += !q.certificate.ok();
                rec.estimate.push_back(rescale_estimate(q, config.dist, config.r, config.delta));
                Vector4d se = q.standard_errors();
                se(3) *= c;
                rec.se.push_back(se);
            }
            rec.ok = true;
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
            rec.estimate.clear();
            rec.se.clear();
        }
    });

    for (std::size_t i = 0; i < recs.size(); ++i) {
        out.completed += recs[i].ok;
        out.failures += !recs[i].ok;
        out.certificate_failures += cert_fail[i];
    }
    check_failures(out.failures, config.replications, "estimation study");

    for (std::size_t k = 0; k < ntau; ++k) {
        EstimationCell cell;
        cell.tau = config.taus[k];
        cell.truth = transform(config.dist.quantile(cell.tau), config.delta) * config.theta0.theta();
        if (out.completed == 0) {
            cell.bias.setConstant(std::numeric_limits<double>::quiet_NaN());
            cell.esd = cell.asd = cell.bias;
            out.cells.push_back(cell);
            continue;
        }
        for (int j = 0; j < 4; ++j) {
            std::vector<double> est, se;
            for (const auto& rec : recs) {
                if (!rec.ok) continue;
                est.push_back(rec.estimate[k](j));
                se.push_back(rec.se[k](j));
            }
            const double m = mean_of(est);
            std::vector<double> dev2(est.size());
            for (std::size_t i = 0; i < est.size(); ++i) dev2[i] = (est[i] - m) * (est[i] - m);
            const double ss = pairwise_sum(dev2.begin(), dev2.end());
            cell.bias(j) = m - cell.truth(j);
            cell.esd(j) = est.size() > 1 ? std::sqrt(ss / static_cast<double>(est.size() - 1)) : 0.0;
            cell.asd(j) = mean_of(se);
        }
        out.cells.push_back(cell);
    }
    if (config.keep_records) out.records = std::move(recs);
    return out;
}

TestSummary run_test_study(const ExperimentConfig& config) {
    config.validate();
    TestSummary out;
    out.config = config;
    const std::vector<double> grid =
        config.alpha_plus_grid.empty() ? std::vector<double>{config.theta0.alpha_plus} : config.alpha_plus_grid;
    const Eigen::VectorXd draws = transformed_draws(config.dist, config.delta, kGammaDraws, kGammaStream, config.jobs);
    const std::size_t ntau = config.taus.size();

    for (double ap : grid) {
        const Params theta = with_alpha_plus(config.theta0, ap);
        TestCell cell;
        cell.alpha_plus = ap;
        const LyapunovEstimate g = lyapunov_mc(theta, draws);
        cell.gamma0 = g.gamma;
        cell.burnin = burnin_for(config, g.gamma, g.std_error);

        std::vector<TestRecord> recs(static_cast<std::size_t>(config.replications));
        std::vector<int> cert_fail(recs.size(), 0);
        std::vector<std::array<int, 3>> rej(recs.size(), {0, 0, 0});
        std::vector<std::vector<int>> rej2(recs.size(), std::vector<int>(ntau, 0));
        parallel_for(recs.size(), config.jobs, [&](std::size_t i) {
            TestRecord& rec = recs[i];
            rec.replication = static_cast<int>(i);
            try {
                const SeriesData s =
                    simulate(theta, config.dist, config.n, cell.burnin, derive_seed(config.seed, i)).series;
                const GqmleFit f = fit_gqmle(s, config.r, config.delta);
                const TestReport st = stationarity_test(f, StationarityHypothesis::stationary, config.alpha);
                const TestReport nt = stationarity_test(f, StationarityHypothesis::nonstationary, config.alpha);
                const TestReport s1 = asymmetry_test_global(f, config.alpha);
                rec.stat_T = st.statistic;
                rec.stat_S1 = s1.statistic;
                rej[i] = {st.reject, nt.reject, s1.reject};
                for (std::size_t k = 0; k < ntau; ++k) {
                    const QuantileFit q = fit_quantile(s, f, config.taus[k]);
                    cert_fail[i] += !q.certificate.ok();
                    const TestReport s2 = asymmetry_test_local(f, q, config.alpha);
                    rec.stat_S2.push_back(s2.statistic);
                    rej2[i][k] = s2.reject;
                }
                rec.ok = true;
            } catch (const std::exception& e) {
                rec.ok = false;
                rec.error = e.what();
                rec.stat_S2.clear();
            }
        });

        long r_st = 0, r_nt = 0, r_s1 = 0;
        std::vector<long> r_s2(ntau, 0);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            if (!recs[i].ok) {
                ++cell.failures;
                continue;
            }
            ++cell.completed;
            cell.certificate_failures += cert_fail[i];
            r_st += rej[i][0];
            r_nt += rej[i][1];
            r_s1 += rej[i][2];
            for (std::size_t k = 0; k < ntau; ++k) r_s2[k] += rej2[i][k];
        }
        check_failures(cell.failures, config.replications, "test study at alpha+ = " + std::to_string(ap));
        const double denom = cell.completed > 0 ? static_cast<double>(cell.completed)
                                                : std::numeric_limits<double>::quiet_NaN();
        cell.reject_stationary = static_cast<double>(r_st) / denom;
        cell.reject_nonstationary = static_cast<double>(r_nt) / denom;
        cell.reject_S1 = static_cast<double>(r_s1) / denom;
        for (std::size_t k = 0; k < ntau; ++k) cell.reject_S2.push_back(static_cast<double>(r_s2[k]) / denom);
        if (config.keep_records) cell.records = std::move(recs);
        out.cells.push_back(std::move(cell));
    }
    return out;
}

NonstatApproxRecord nonstat_approx_check(const Params& truth, const Params& theta, const InnovationDist& dist,
                                         Eigen::Index n, std::uint64_t seed, const NonstatCheckOptions& opt) {
    truth.validate();
    theta.validate();
    if (theta.delta != truth.delta) throw InputError("theta and truth use different delta");
    if (!(theta.beta > 0.0)) throw InputError("beta must be positive for the derivative series");
    const int J = opt.truncation;
    if (J < 1) throw InputError("truncation must be at least 1");
    if (!(opt.window_fraction > 0.0 && opt.window_fraction <= 1.0)) throw InputError("window fraction must lie in (0,1]");
    if (!(opt.init_ratio > 0.0)) throw InputError("initial ratio must be positive");

    NonstatApproxRecord rec;
    rec.truncation = J;
    const Eigen::VectorXd draws = transformed_draws(dist, truth.delta, opt.gamma_draws, kGammaStream);
    const LyapunovEstimate g = lyapunov_mc(truth, draws);
    rec.gamma0 = g.gamma;
    rec.gamma0_se = g.std_error;
    if (g.gamma + 3.0 * g.std_error < 0.0) throw InputError("design is strictly stationary (gamma0 < 0)");
    rec.beta_limit = g.gamma > 3.0 * g.std_error ? std::exp(g.gamma) : beta_boundary(truth, draws, 1.0);
    if (!(theta.beta < rec.beta_limit)) throw InputError("beta outside the admissible neighbourhood");

    const SimulatedPath sim = simulate(truth, dist, n, 0, seed);
    const double delta = truth.delta;
    const Eigen::VectorXd& eta = sim.eta;
    const Eigen::VectorXd& log_h = sim.log_h;

    Eigen::VectorXd pos(n), neg(n), a(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        pos(t) = positive_power(eta(t), delta);
        neg(t) = negative_power(eta(t), delta);
        a(t) = a0(truth, eta(t));
    }

    rec.ratio.resize(n);
    Eigen::MatrixXd grad(n, 3);
    rec.ratio(0) = opt.init_ratio;
    grad.row(0).setZero();
    for (Eigen::Index t = 1; t < n; ++t) {
        const double q = std::exp(log_h(t - 1) - log_h(t));
        const double w = theta.omega * std::exp(-log_h(t));
        const double num = theta.alpha_plus * pos(t - 1) + theta.alpha_minus * neg(t - 1);
        rec.ratio(t) = w + num * q + theta.beta * rec.ratio(t - 1) * q;
        const Eigen::RowVector3d direct(pos(t - 1) * q, neg(t - 1) * q, rec.ratio(t - 1) * q);
        grad.row(t) = direct + theta.beta * q * grad.row(t - 1);
    }

    struct Series {
        double v = 0.0, v0 = 0.0, tail = 1.0;
        Eigen::Vector3d d = Eigen::Vector3d::Zero();
    };
    auto series_at = [&](Eigen::Index t, int terms) {
        Series s;
        double prod = 1.0, prod0 = 1.0;  // prod_{k<j} beta / a0 for theta and for the truth
        for (int j = 1; j <= terms; ++j) {
            const Eigen::Index i = t - j;
            const double inv = 1.0 / a(i);
            const double num = theta.alpha_plus * pos(i) + theta.alpha_minus * neg(i);
            s.v += num * inv * prod;
            s.v0 += (a(i) - truth.beta) * inv * prod0;
            s.d(0) += pos(i) * inv * prod;
            s.d(1) += neg(i) * inv * prod;
            if (j >= 2) s.d(2) += static_cast<double>(j - 1) * num * inv / theta.beta * prod;
            prod *= theta.beta * inv;
            prod0 *= truth.beta * inv;
        }
        s.tail = prod;
        return s;
    };

    rec.v = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index t = J; t < n; ++t) rec.v(t) = series_at(t, J).v;

    const auto from = static_cast<Eigen::Index>(std::floor((1.0 - opt.window_fraction) * static_cast<double>(n)));
    rec.window_start = std::max<Eigen::Index>(from, 2 * static_cast<Eigen::Index>(J));
    if (rec.window_start >= n) throw InputError("path too short for the truncation and window");
    for (Eigen::Index t = rec.window_start; t < n; ++t) {
        const Series s = series_at(t, J);
        const Series l = series_at(t, 2 * J);
        rec.tail_bound = std::max(rec.tail_bound, s.tail);
        rec.sup_dev_sigma = std::max(rec.sup_dev_sigma, std::abs(rec.ratio(t) - s.v));
        rec.sup_dev_grad = std::max(rec.sup_dev_grad, (grad.row(t).transpose() - s.d).cwiseAbs().maxCoeff());
        rec.identity_dev = std::max(rec.identity_dev, std::abs(s.v0 - 1.0));
        rec.truncation_change =
            std::max({rec.truncation_change, std::abs(s.v - l.v), (s.d - l.d).cwiseAbs().maxCoeff()});
    }
    return rec;
}

}  // namespace apq
