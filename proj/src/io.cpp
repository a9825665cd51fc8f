#include "apq/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "apq/digest.hpp"

namespace apq {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    std::string out = s.substr(a, b - a);
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

bool is_na(const std::string& s) {
    std::string l;
    for (char c : s) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return l.empty() || l == "na" || l == "nan" || l == "null" || l == "." || l == "n/a";
}

json vec(const Eigen::Ref<const Eigen::VectorXd>& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json mat(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec(m.row(i).transpose()));
    return a;
}

json named4(const Vector4d& v) {
    return json{{"omega", v(0)}, {"alpha_plus", v(1)}, {"alpha_minus", v(2)}, {"beta", v(3)}};
}

const char* kComponents[4] = {"omega", "alpha_plus", "alpha_minus", "beta"};

}  // namespace

Ingested ingest_csv(std::istream& in, const CsvOptions& opt, const std::string& source) {
    Ingested out;
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (line.empty() || line[0] == '#') continue;
        header = split_fields(line);
        break;
    }
    if (header.empty()) throw InputError(source + ": missing header row");

    auto find_col = [&](const std::string& name) -> std::ptrdiff_t {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    std::ptrdiff_t tcol = -1;
    if (!opt.time_column.empty()) {
        tcol = find_col(opt.time_column);
        if (tcol < 0) throw InputError(source + ": no column named '" + opt.time_column + "'");
    }
    std::ptrdiff_t vcol = -1;
    if (!opt.column.empty()) {
        vcol = find_col(opt.column);
        if (vcol < 0) throw InputError(source + ": no column named '" + opt.column + "'");
    } else {
        for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(header.size()); ++c)
            if (c != tcol) {
                vcol = c;
                break;
            }
        if (vcol < 0) throw InputError(source + ": no numeric column");
    }

    std::vector<double> values;
    std::vector<std::string> stamps;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw InputError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        ++out.rows;
        const std::string& cell = fields[static_cast<std::size_t>(vcol)];
        if (is_na(cell)) {
            if (opt.na == NaPolicy::error)
                throw InputError(source + ":" + std::to_string(lineno) + ": missing value");
            out.warnings.push_back(source + ":" + std::to_string(lineno) + ": missing value dropped");
            continue;
        }
        double x = 0.0;
        std::size_t used = 0;
        try {
            x = std::stod(cell, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != cell.size() || !std::isfinite(x))
            throw InputError(source + ":" + std::to_string(lineno) + ": cannot parse '" + cell + "' as a number");
        if (opt.kind == ColumnKind::prices && !(x > 0.0))
            throw InputError(source + ":" + std::to_string(lineno) + ": price must be positive");
        values.push_back(x);
        stamps.push_back(tcol >= 0 ? fields[static_cast<std::size_t>(tcol)] : std::string());
    }

    if (opt.kind == ColumnKind::prices) {
        if (values.size() < 2) throw InputError(source + ": need at least two prices");
        Eigen::VectorXd r(static_cast<Eigen::Index>(values.size() - 1));
        for (std::size_t i = 1; i < values.size(); ++i)
            r(static_cast<Eigen::Index>(i - 1)) = std::log(values[i] / values[i - 1]);
        stamps.erase(stamps.begin());
        out.series = SeriesData(std::move(r), tcol >= 0 ? std::move(stamps) : std::vector<std::string>{});
    } else {
        if (values.empty()) throw InputError(source + ": no observations");
        out.series = SeriesData(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())),
                                tcol >= 0 ? std::move(stamps) : std::vector<std::string>{});
    }
    return out;
}

Ingested ingest_csv(const std::string& path, const CsvOptions& opt) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return ingest_csv(in, opt, path);
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void to_json(json& j, const Params& p) {
    j = json{{"omega", p.omega},
             {"alpha_plus", p.alpha_plus},
             {"alpha_minus", p.alpha_minus},
             {"beta", p.beta},
             {"delta", p.delta}};
}

void to_json(json& j, const InnovationDist& d) { j = d.name(); }

json fit_report(const GqmleFit& fit) {
    json j;
    j["theta"] = fit.theta_hat;
    j["r"] = fit.r;
    j["n"] = fit.n();
    j["objective"] = fit.objective;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["projected_gradient"] = fit.projected_gradient;
    j["best_start"] = fit.best_start;
    j["flags"] = {{"omega_at_bound", fit.omega_at_bound},
                  {"alpha_at_zero", fit.alpha_at_zero},
                  {"beta_at_bound", fit.beta_at_bound},
                  {"floor_hit", fit.floor_hit}};
    j["kappa2r_hat"] = fit.kappa2r_hat;
    json warnings = fit.warnings;
    try {
        const GqmleCovariance cov = gqmle_avar(fit);
        j["standard_errors"] = named4(cov.cov_theta.diagonal().cwiseMax(0.0).cwiseSqrt());
        j["cov_theta"] = mat(cov.cov_theta);
        j["cov_vartheta_star"] = mat(cov.cov_vartheta_star);
        j["pseudo_inverse"] = cov.pseudo_inverse;
    } catch (const NumericalError& e) {
        j["standard_errors"] = nullptr;
        warnings.push_back(std::string("covariance unavailable: ") + e.what());
    }
    j["warnings"] = warnings;
    return j;
}

json quantile_report(const QuantileFit& q, double forecast) {
    json j;
    j["tau"] = q.tau;
    j["theta_tau"] = named4(q.theta_tau_hat);
    j["standard_errors"] = named4(q.standard_errors());
    j["Sigma"] = mat(q.Sigma_tilde);
    j["q_tau_eta"] = q.q_tau_eta;
    j["b_tau"] = q.b_tau_tilde;
    j["density_at_b"] = q.f_at_b;
    j["bandwidth"] = q.bandwidth;
    j["objective"] = q.objective;
    j["iterations"] = q.iterations;
    j["exact_fits"] = q.exact_fits;
    j["certificate_ok"] = q.certificate.ok();
    j["certificate_max_violation"] = q.certificate.max_violation;
    j["gamma_tilde"] = q.gamma_tilde;
    j["nonstationary"] = q.nonstationary;
    j["pseudo_inverse"] = q.pseudo_inverse;
    j["forecast"] = forecast;
    j["warnings"] = q.warnings;
    return j;
}

void to_json(json& j, const TestReport& r) {
    j = json{{"name", to_string(r.name)},
             {"statistic", r.statistic},
             {"p_value", r.p_value},
             {"null_distribution", to_string(r.null_dist)},
             {"alpha", r.alpha},
             {"reject", r.reject},
             {"estimate", r.estimate},
             {"scale", r.scale},
             {"inputs_digest", r.inputs_digest}};
}

void to_json(json& j, const BacktestReport& r) {
    j = json{{"n_out", r.n_out},
             {"n_exceed", r.n_exceed},
             {"coverage_error", r.coverage_error},
             {"cc_pvalue", r.cc_pvalue},
             {"dq_pvalue", r.dq_pvalue},
             {"min_pvalue", r.min_pvalue},
             {"good", r.good},
             {"cc",
              {{"lr_uc", r.cc.lr_uc},
               {"lr_ind", r.cc.lr_ind},
               {"lr_cc", r.cc.lr_cc},
               {"dof", r.cc.dof},
               {"degenerate", r.cc.degenerate},
               {"transitions", r.cc.transitions}}},
             {"dq", {{"statistic", r.dq.statistic}, {"dof", r.dq.dof}, {"pseudo_inverse", r.dq.pseudo_inverse}}}};
}

json forecast_report(const ForecastRun& run) {
    json j;
    j["tau"] = run.tau;
    j["level"] = run.level();
    j["side"] = to_string(run.side);
    j["refit_every"] = run.refit_every;
    j["window"] = "expanding";
    j["model_config"] = run.model_config;
    j["n_out"] = run.n_out();
    j["gaps"] = run.gaps;
    j["targets"] = run.targets;
    j["var"] = vec(run.var_series);
    j["realized"] = vec(run.realized);
    return j;
}

void to_json(json& j, const ExperimentConfig& c) {
    j = json{{"design", to_string(c.design)},
             {"delta", c.delta},
             {"r", c.r},
             {"taus", c.taus},
             {"dist", c.dist},
             {"n", c.n},
             {"replications", c.replications},
             {"theta0", c.theta0},
             {"alpha_plus_grid", c.alpha_plus_grid},
             {"seed", c.seed},
             {"burnin", c.burnin ? json(*c.burnin) : json("auto")},
             {"alpha", c.alpha}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    if (!j.is_object()) throw InputError("experiment config must be a JSON object");
    static const std::vector<std::string> known = {"design", "delta", "r", "taus", "tau", "dist", "n",
                                                   "replications", "theta0", "alpha_plus_grid", "seed", "burnin",
                                                   "alpha", "keep_records", "study"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw InputError("unknown config key '" + key + "'");
    try {
        ExperimentConfig c;
        if (j.contains("design")) c = preset(parse_design(j.at("design").get<std::string>()), c);
        if (j.contains("delta")) c.delta = j.at("delta").get<double>();
        if (j.contains("r")) c.r = j.at("r").get<double>();
        if (j.contains("taus")) c.taus = j.at("taus").get<std::vector<double>>();
        if (j.contains("tau")) c.taus = {j.at("tau").get<double>()};
        if (j.contains("dist")) c.dist = InnovationDist::parse(j.at("dist").get<std::string>());
        if (j.contains("n")) c.n = j.at("n").get<Eigen::Index>();
        if (j.contains("replications")) c.replications = j.at("replications").get<int>();
        if (j.contains("theta0")) {
            const json& t = j.at("theta0");
            if (t.is_array()) {
                const auto v = t.get<std::vector<double>>();
                if (v.size() != 4) throw InputError("theta0 needs four entries");
                c.theta0 = Params{v[0], v[1], v[2], v[3], c.delta};
            } else {
                c.theta0 = Params{t.at("omega").get<double>(), t.at("alpha_plus").get<double>(),
                                  t.at("alpha_minus").get<double>(), t.at("beta").get<double>(), c.delta};
            }
        }
        c.theta0.delta = c.delta;
        if (j.contains("alpha_plus_grid")) c.alpha_plus_grid = j.at("alpha_plus_grid").get<std::vector<double>>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("burnin")) {
            const json& b = j.at("burnin");
            if (b.is_string() && b.get<std::string>() == "auto") c.burnin.reset();
            else c.burnin = b.get<Eigen::Index>();
        }
        if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
        if (j.contains("keep_records")) c.keep_records = j.at("keep_records").get<bool>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed experiment config: ") + e.what());
    }
}

json estimation_report(const EstimationSummary& s) {
    json j;
    j["config"] = s.config;
    j["gamma0"] = s.gamma0;
    j["burnin"] = s.burnin;
    j["completed"] = s.completed;
    j["failures"] = s.failures;
    j["certificate_failures"] = s.certificate_failures;
    json cells = json::array();
    for (const auto& c : s.cells)
        cells.push_back(json{{"tau", c.tau},
                             {"truth", named4(c.truth)},
                             {"bias", named4(c.bias)},
                             {"esd", named4(c.esd)},
                             {"asd", named4(c.asd)}});
    j["cells"] = cells;
    if (!s.records.empty()) {
        json recs = json::array();
        for (const auto& r : s.records) {
            json e = json::array(), se = json::array();
            for (std::size_t k = 0; k < r.estimate.size(); ++k) {
                e.push_back(vec(r.estimate[k]));
                se.push_back(vec(r.se[k]));
            }
            recs.push_back(json{{"replication", r.replication}, {"ok", r.ok}, {"error", r.error}, {"estimate", e}, {"se", se}});
        }
        j["records"] = recs;
    }
    return j;
}

json test_study_report(const TestSummary& s) {
    json j;
    j["config"] = s.config;
    json cells = json::array();
    for (const auto& c : s.cells) {
        json cell{{"alpha_plus", c.alpha_plus},
                  {"gamma0", c.gamma0},
                  {"burnin", c.burnin},
                  {"completed", c.completed},
                  {"failures", c.failures},
                  {"certificate_failures", c.certificate_failures},
                  {"reject_stationary", c.reject_stationary},
                  {"reject_nonstationary", c.reject_nonstationary},
                  {"reject_S1", c.reject_S1},
                  {"reject_S2", c.reject_S2}};
        if (!c.records.empty()) {
            json recs = json::array();
            for (const auto& r : c.records)
                recs.push_back(json{{"replication", r.replication},
                                    {"ok", r.ok},
                                    {"error", r.error},
                                    {"T", r.stat_T},
                                    {"S1", r.stat_S1},
                                    {"S2", r.stat_S2}});
            cell["records"] = recs;
        }
        cells.push_back(cell);
    }
    j["cells"] = cells;
    return j;
}

json nonstat_report(const NonstatApproxRecord& r) {
    return json{{"gamma0", r.gamma0},
                {"gamma0_se", r.gamma0_se},
                {"beta_limit", r.beta_limit},
                {"truncation", r.truncation},
                {"tail_bound", r.tail_bound},
                {"sup_dev_sigma", r.sup_dev_sigma},
                {"sup_dev_grad", r.sup_dev_grad},
                {"identity_dev", r.identity_dev},
                {"truncation_change", r.truncation_change},
                {"window_start", r.window_start}};
}

std::string estimation_csv(const EstimationSummary& s, bool times10) {
    const double k = times10 ? 10.0 : 1.0;
    std::ostringstream out;
    out << "tau,component,truth,bias,esd,asd\n";
    for (const auto& c : s.cells)
        for (int j = 0; j < 4; ++j)
            out << format_double(c.tau) << ',' << kComponents[j] << ',' << format_double(k * c.truth(j)) << ','
                << format_double(k * c.bias(j)) << ',' << format_double(k * c.esd(j)) << ','
                << format_double(k * c.asd(j)) << '\n';
    return out.str();
}

std::string power_csv(const TestSummary& s) {
    std::ostringstream out;
    out << "alpha_plus,gamma0,test,rejection_rate,replications\n";
    auto row = [&](const TestCell& c, const std::string& name, double rate) {
        out << format_double(c.alpha_plus) << ',' << format_double(c.gamma0) << ',' << name << ','
            << format_double(rate) << ',' << c.completed << '\n';
    };
    for (const auto& c : s.cells) {
        row(c, "T_stationary", c.reject_stationary);
        row(c, "T_nonstationary", c.reject_nonstationary);
        row(c, "S1", c.reject_S1);
        for (std::size_t k = 0; k < c.reject_S2.size(); ++k)
            row(c, "S2_tau=" + format_double(s.config.taus[k]), c.reject_S2[k]);
    }
    return out.str();
}

std::string forecast_csv(const ForecastRun& run) {
    std::ostringstream out;
    out << "target,realized,var,exceed\n";
    const auto flags = exceedances(run.realized, run.var_series, run.side);
    for (Eigen::Index i = 0; i < run.n_out(); ++i)
        out << run.targets[static_cast<std::size_t>(i)] << ',' << format_double(run.realized(i)) << ','
            << format_double(run.var_series(i)) << ',' << flags[static_cast<std::size_t>(i)] << '\n';
    return out.str();
}

std::string path_csv(const SimulatedPath& path) {
    std::ostringstream out;
    out << "t,return,h\n";
    for (Eigen::Index t = 0; t < path.series.size(); ++t)
        out << t << ',' << format_double(path.series.values(t)) << ',' << format_double(path.h(t)) << '\n';
    return out.str();
}

json RunManifest::to_json() const {
    json j{{"subcommand", subcommand},
           {"config", config},
           {"input_digest", input_digest},
           {"version", version},
           {"seed", seed}};
    j["digest"] = digest();
    if (seconds) j["timing_seconds"] = *seconds;
    return j;
}

std::string RunManifest::digest() const {
    Digest d;
    d.add(subcommand).add(config.dump()).add(input_digest).add(version).add(seed);
    return d.hex();
}

std::string series_digest(const SeriesData& series) {
    Digest d;
    d.add(series.values);
    return d.hex();
}

std::string render_artifact(const RunManifest& manifest, const json& result) {
    json j;
    j["manifest"] = manifest.to_json();
    j["result"] = result;
    return j.dump(2) + "\n";
}

std::string render_csv_artifact(const RunManifest& manifest, const std::string& csv) {
    return "# manifest " + manifest.digest() + "\n" + csv;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
    if (!out) throw InputError("failed writing '" + path + "'");
}

}  // namespace apq
