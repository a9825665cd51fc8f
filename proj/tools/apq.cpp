#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apq/digest.hpp"
#include "apq/io.hpp"

using namespace apq;

namespace {

struct InputArgs {
    std::string path;
    std::string column;
    std::string time_column;
    bool prices = false;
    std::string na = "error";
};

struct ModelArgs {
    double delta = 0.0;
    double r = 2.0;
};

struct Common {
    std::string out;
    unsigned jobs = 1;
    bool record_timing = false;
};

unsigned default_jobs() {
    if (const char* env = std::getenv("APQ_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw InputError("APQ_JOBS must be a positive integer");
    }
    return 1;
}

void add_input(CLI::App* app, InputArgs& in) {
    app->add_option("--input,-i", in.path, "CSV file with a header row")->required()->check(CLI::ExistingFile);
    app->add_option("--column", in.column, "value column (default: first non-time column)");
    app->add_option("--time-column", in.time_column, "label column kept as timestamps");
    app->add_flag("--prices", in.prices, "column holds prices; use log differences");
    app->add_option("--na", in.na, "missing-value policy")->check(CLI::IsMember({"error", "drop"}));
}

void add_model(CLI::App* app, ModelArgs& m) {
    app->add_option("--delta", m.delta, "power index delta (required)")->required()->check(CLI::PositiveNumber);
    app->add_option("--r", m.r, "GQMLE power r")->check(CLI::PositiveNumber);
}

void add_common(CLI::App* app, Common& c) {
    app->add_option("--out,-o", c.out, "JSON report path");
    app->add_option("--jobs,-j", c.jobs, "worker threads (default: APQ_JOBS or 1)")->check(CLI::PositiveNumber);
    app->add_flag("--record-timing", c.record_timing, "store elapsed seconds in the manifest");
}

Ingested load(const InputArgs& in) {
    CsvOptions o;
    o.column = in.column;
    o.time_column = in.time_column;
    o.kind = in.prices ? ColumnKind::prices : ColumnKind::returns;
    o.na = in.na == "drop" ? NaPolicy::drop : NaPolicy::error;
    Ingested data = ingest_csv(in.path, o);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    return data;
}

json input_config(const InputArgs& in, const ModelArgs& m) {
    return json{{"column", in.column},
                {"time_column", in.time_column},
                {"prices", in.prices},
                {"na", in.na},
                {"delta", m.delta},
                {"r", m.r}};
}

std::string fmt(double x) { return format_double(x); }

std::string with_se(double est, double se) { return fmt(est) + " (" + fmt(se) + ")"; }

void print_rows(const std::vector<std::pair<std::string, std::string>>& rows) {
    std::size_t w = 0;
    for (const auto& [k, _] : rows) w = std::max(w, k.size());
    for (const auto& [k, v] : rows) std::cout << "  " << k << std::string(w - k.size() + 2, ' ') << v << '\n';
}

const char* kNames[4] = {"omega", "alpha+", "alpha-", "beta"};

void print_fit(const GqmleFit& f) {
    std::cout << "GQMLE (delta = " << fmt(f.delta()) << ", r = " << fmt(f.r) << ", n = " << f.n() << ")\n";
    Vector4d se = Vector4d::Constant(std::numeric_limits<double>::quiet_NaN());
    try {
        se = gqmle_avar(f).cov_theta.diagonal().cwiseMax(0.0).cwiseSqrt();
    } catch (const NumericalError&) {
    }
    const Vector4d th = f.theta_hat.theta();
    std::vector<std::pair<std::string, std::string>> rows;
    for (int j = 0; j < 4; ++j) rows.emplace_back(kNames[j], with_se(th(j), se(j)));
    rows.emplace_back("converged", f.converged ? "yes" : "no");
    print_rows(rows);
    for (const auto& w : f.warnings) std::cerr << "warning: " << w << '\n';
}

void print_quantile(const QuantileFit& q, double forecast) {
    std::cout << "Quantile fit (tau = " << fmt(q.tau) << ")\n";
    const Vector4d se = q.standard_errors();
    std::vector<std::pair<std::string, std::string>> rows;
    for (int j = 0; j < 4; ++j) rows.emplace_back(std::string(kNames[j]) + "_tau", with_se(q.theta_tau_hat(j), se(j)));
    rows.emplace_back("next-period quantile", fmt(forecast));
    print_rows(rows);
    for (const auto& w : q.warnings) std::cerr << "warning: " << w << '\n';
}

void print_test(const TestReport& r) {
    std::cout << "  " << to_string(r.name) << ": statistic " << fmt(r.statistic) << ", p-value " << fmt(r.p_value)
              << (r.reject ? " (reject)" : "") << '\n';
}

void emit(const Common& c, RunManifest manifest, const json& result, double seconds) {
    if (c.record_timing) manifest.seconds = seconds;
    if (!c.out.empty()) write_text_file(c.out, render_artifact(manifest, result));
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GqmleFit step_one(const SeriesData& s, const ModelArgs& m, unsigned jobs) {
    OptimOptions o;
    o.jobs = jobs;
    return fit_gqmle(s, m.r, m.delta, o);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Asymmetric power GARCH: estimation, conditional quantiles, tests and backtests"};
    app.require_subcommand(1);
    const auto t0 = std::chrono::steady_clock::now();

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate a path and write it as CSV");
    std::string sim_params, sim_dist = "normal", sim_burnin = "auto";
    double sim_delta = 0.0;
    Eigen::Index sim_n = 2000;
    std::uint64_t sim_seed = 1;
    Common sim_c;
    sim->add_option("--params", sim_params, "omega,alpha+,alpha-,beta")->required();
    sim->add_option("--delta", sim_delta, "power index delta")->required()->check(CLI::PositiveNumber);
    sim->add_option("--dist", sim_dist, "normal or st:<nu>");
    sim->add_option("--n", sim_n, "path length")->check(CLI::PositiveNumber);
    sim->add_option("--seed", sim_seed, "seed");
    sim->add_option("--burnin", sim_burnin, "burn-in length or 'auto'");
    sim->add_option("--out,-o", sim_c.out, "CSV output path (default: stdout)");

    // fit
    auto* fit = app.add_subcommand("fit", "GQMLE fit");
    InputArgs fit_in;
    ModelArgs fit_m;
    Common fit_c;
    add_input(fit, fit_in);
    add_model(fit, fit_m);
    add_common(fit, fit_c);

    // quantile
    auto* qnt = app.add_subcommand("quantile", "hybrid conditional quantile fits");
    InputArgs q_in;
    ModelArgs q_m;
    Common q_c;
    std::vector<double> q_taus;
    add_input(qnt, q_in);
    add_model(qnt, q_m);
    add_common(qnt, q_c);
    qnt->add_option("--tau", q_taus, "quantile level (repeatable)")->required()->check(CLI::Range(0.0, 1.0));

    // test
    auto* tst = app.add_subcommand("test", "stationarity or asymmetry tests");
    InputArgs t_in;
    ModelArgs t_m;
    Common t_c;
    std::string which;
    std::vector<double> t_taus;
    double t_alpha = 0.05;
    add_input(tst, t_in);
    add_model(tst, t_m);
    add_common(tst, t_c);
    tst->add_option("--which", which, "stationarity or asymmetry")
        ->required()
        ->check(CLI::IsMember({"stationarity", "asymmetry"}));
    tst->add_option("--tau", t_taus, "levels for the local asymmetry test (repeatable)")->check(CLI::Range(0.0, 1.0));
    tst->add_option("--alpha", t_alpha, "significance level")->check(CLI::Range(0.0, 1.0));

    // backtest
    auto* bt = app.add_subcommand("backtest", "expanding-window VaR forecasts with CC and DQ tests");
    InputArgs b_in;
    ModelArgs b_m;
    Common b_c;
    double b_tau = 0.05, b_frac = 0.5;
    std::string b_side = "lower", b_csv;
    int b_refit = 1;
    Eigen::Index b_start = 0;
    add_input(bt, b_in);
    add_model(bt, b_m);
    add_common(bt, b_c);
    bt->add_option("--tau", b_tau, "tail probability")->check(CLI::Range(0.0, 1.0));
    bt->add_option("--side", b_side, "lower or upper tail")->check(CLI::IsMember({"lower", "upper"}));
    bt->add_option("--refit-every", b_refit, "refit cadence")->check(CLI::PositiveNumber);
    bt->add_option("--start-fraction", b_frac, "share of the sample in the first window")->check(CLI::Range(0.0, 1.0));
    bt->add_option("--start-index", b_start, "first forecast target (overrides --start-fraction)");
    bt->add_option("--csv", b_csv, "forecast CSV path");

    // mc
    auto* mc = app.add_subcommand("mc", "Monte Carlo study from a JSON config");
    std::string mc_config, mc_csv;
    Common mc_c;
    bool mc_times10 = false;
    mc->add_option("--config", mc_config, "experiment config JSON")->required()->check(CLI::ExistingFile);
    mc->add_option("--csv", mc_csv, "summary CSV path");
    mc->add_flag("--times10", mc_times10, "scale bias/ESD/ASD by 10 in the CSV");
    add_common(mc, mc_c);

    try {
        const unsigned env_jobs = default_jobs();
        for (Common* c : {&fit_c, &q_c, &t_c, &b_c, &mc_c}) c->jobs = env_jobs;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    try {
        if (*sim) {
            std::vector<double> v;
            std::stringstream ss(sim_params);
            std::string item;
            while (std::getline(ss, item, ',')) {
                std::size_t used = 0;
                double x = 0.0;
                try {
                    x = std::stod(item, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used == 0 || used != item.size()) throw InputError("cannot parse --params entry '" + item + "'");
                v.push_back(x);
            }
            if (v.size() != 4) throw InputError("--params needs omega,alpha+,alpha-,beta");
            const Params p{v[0], v[1], v[2], v[3], sim_delta};
            const InnovationDist dist = InnovationDist::parse(sim_dist);
            Eigen::Index burnin = 0;
            if (sim_burnin == "auto") burnin = default_burnin(p, dist);
            else {
                try {
                    burnin = std::stol(sim_burnin);
                } catch (const std::exception&) {
                    throw InputError("--burnin must be an integer or 'auto'");
                }
            }
            const SimulatedPath path = simulate(p, dist, sim_n, burnin, sim_seed);
            RunManifest man;
            man.subcommand = "simulate";
            man.config = json{{"params", p}, {"dist", dist}, {"n", sim_n}, {"burnin", burnin}};
            man.seed = sim_seed;
            const std::string text = render_csv_artifact(man, path_csv(path));
            if (sim_c.out.empty()) std::cout << text;
            else write_text_file(sim_c.out, text);
            std::cerr << "simulate: " << sim_n << " observations, " << fmt(elapsed(t0)) << " s\n";
            return 0;
        }

        if (*fit) {
            const Ingested data = load(fit_in);
            const GqmleFit f = step_one(data.series, fit_m, fit_c.jobs);
            print_fit(f);
            RunManifest man{"fit", input_config(fit_in, fit_m), series_digest(data.series)};
            emit(fit_c, man, json{{"fit", fit_report(f)}}, elapsed(t0));
        } else if (*qnt) {
            const Ingested data = load(q_in);
            const GqmleFit f = step_one(data.series, q_m, q_c.jobs);
            print_fit(f);
            json fits = json::array();
            for (double tau : q_taus) {
                const QuantileFit q = fit_quantile(data.series, f, tau);
                const double fc = conditional_quantile_forecast(data.series, f, q);
                print_quantile(q, fc);
                fits.push_back(quantile_report(q, fc));
            }
            json cfg = input_config(q_in, q_m);
            cfg["taus"] = q_taus;
            RunManifest man{"quantile", cfg, series_digest(data.series)};
            emit(q_c, man, json{{"fit", fit_report(f)}, {"quantiles", fits}}, elapsed(t0));
        } else if (*tst) {
            const Ingested data = load(t_in);
            const GqmleFit f = step_one(data.series, t_m, t_c.jobs);
            json reports = json::array();
            std::cout << "Tests (alpha = " << fmt(t_alpha) << ")\n";
            if (which == "stationarity") {
                for (auto h : {StationarityHypothesis::stationary, StationarityHypothesis::nonstationary}) {
                    const TestReport r = stationarity_test(f, h, t_alpha);
                    print_test(r);
                    reports.push_back(r);
                }
            } else {
                const TestReport g = asymmetry_test_global(f, t_alpha);
                print_test(g);
                reports.push_back(g);
                for (double tau : t_taus) {
                    const TestReport l = asymmetry_test_local(f, fit_quantile(data.series, f, tau), t_alpha);
                    std::cout << "  (tau = " << fmt(tau) << ")";
                    print_test(l);
                    json jl = l;
                    jl["tau"] = tau;
                    reports.push_back(jl);
                }
            }
            json cfg = input_config(t_in, t_m);
            cfg["which"] = which;
            cfg["taus"] = t_taus;
            cfg["alpha"] = t_alpha;
            RunManifest man{"test", cfg, series_digest(data.series)};
            emit(t_c, man, json{{"tests", reports}}, elapsed(t0));
        } else if (*bt) {
            const Ingested data = load(b_in);
            ForecastConfig fc;
            fc.delta = b_m.delta;
            fc.r = b_m.r;
            fc.tau = b_tau;
            fc.side = parse_side(b_side);
            fc.start_fraction = b_frac;
            fc.start_index = b_start;
            fc.refit_every = b_refit;
            fc.jobs = b_c.jobs;
            const ForecastRun run = expanding_window_forecast(data.series, fc);
            const BacktestReport rep = backtest(run);
            std::cout << "Backtest (tau = " << fmt(b_tau) << ", side = " << b_side << ", refit every " << b_refit
                      << ")\n";
            print_rows({{"out-of-sample", std::to_string(rep.n_out)},
                        {"exceedances", std::to_string(rep.n_exceed)},
                        {"gaps", std::to_string(run.gaps.size())},
                        {"coverage error", fmt(rep.coverage_error)},
                        {"CC p-value", fmt(rep.cc_pvalue)},
                        {"DQ p-value", fmt(rep.dq_pvalue)},
                        {"min p-value", fmt(rep.min_pvalue) + (rep.good ? " (good)" : "")}});
            json cfg = input_config(b_in, b_m);
            cfg["tau"] = b_tau;
            cfg["side"] = b_side;
            cfg["refit_every"] = b_refit;
            cfg["start_fraction"] = b_frac;
            cfg["start_index"] = b_start;
            RunManifest man{"backtest", cfg, series_digest(data.series)};
            if (!b_csv.empty()) write_text_file(b_csv, render_csv_artifact(man, forecast_csv(run)));
            emit(b_c, man, json{{"backtest", rep}, {"forecasts", forecast_report(run)}}, elapsed(t0));
        } else if (*mc) {
            std::ifstream in(mc_config);
            json raw;
            try {
                raw = json::parse(in);
            } catch (const json::exception& e) {
                throw InputError(mc_config + ": " + e.what());
            }
            ExperimentConfig cfg = experiment_config_from_json(raw);
            cfg.jobs = mc_c.jobs;
            const bool testing = cfg.design == Design::stationarity_power || cfg.design == Design::asymmetry_power;
            std::string study = testing ? "tests" : "estimation";
            if (raw.contains("study")) study = raw.at("study").get<std::string>();
            if (study != "tests" && study != "estimation") throw InputError("study must be 'estimation' or 'tests'");
            json mcfg = cfg;
            mcfg["study"] = study;
            RunManifest man{"mc", mcfg, Digest().add(mcfg.dump()).hex()};
            man.seed = cfg.seed;
            json result;
            std::string csv;
            if (study == "estimation") {
                const EstimationSummary s = run_estimation_study(cfg);
                result = estimation_report(s);
                csv = estimation_csv(s, mc_times10);
                std::cout << "Estimation study: " << to_string(cfg.design) << ", n = " << cfg.n << ", "
                          << s.completed << " replications (" << s.failures << " failed)\n";
                for (const auto& c : s.cells) {
                    std::cout << "  tau = " << fmt(c.tau) << "\n";
                    for (int j = 0; j < 4; ++j)
                        std::cout << "    " << kNames[j] << ": bias " << fmt(c.bias(j)) << ", ESD " << fmt(c.esd(j))
                                  << ", ASD " << fmt(c.asd(j)) << '\n';
                }
            } else {
                const TestSummary s = run_test_study(cfg);
                result = test_study_report(s);
                csv = power_csv(s);
                std::cout << "Test study: " << to_string(cfg.design) << ", n = " << cfg.n << '\n';
                for (const auto& c : s.cells) {
                    std::cout << "  alpha+ = " << fmt(c.alpha_plus) << ": T(stationary) " << fmt(c.reject_stationary)
                              << ", T(nonstationary) " << fmt(c.reject_nonstationary) << ", S1 " << fmt(c.reject_S1);
                    for (std::size_t k = 0; k < c.reject_S2.size(); ++k)
                        std::cout << ", S2(" << fmt(cfg.taus[k]) << ") " << fmt(c.reject_S2[k]);
                    std::cout << '\n';
                }
            }
            if (!mc_csv.empty()) write_text_file(mc_csv, render_csv_artifact(man, csv));
            emit(mc_c, man, result, elapsed(t0));
        }
        std::cerr << app.get_subcommands().front()->get_name() << ": " << fmt(elapsed(t0)) << " s\n";
        return 0;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
}
