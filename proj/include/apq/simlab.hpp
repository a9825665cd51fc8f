#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apq/core.hpp"
#include "apq/hybrid.hpp"

namespace apq {

enum class Design { stationary_estimation, boundary_estimation, stationarity_power, asymmetry_power, custom };

std::string to_string(Design design);
Design parse_design(const std::string& text);

struct ExperimentConfig {
    Design design = Design::custom;
    double delta = 2.0;
    double r = 2.0;
    std::vector<double> taus{0.05};
    InnovationDist dist = InnovationDist::normal();
    Eigen::Index n = 2000;
    int replications = 500;
    Params theta0{0.1, 0.05, 0.15, 0.9, 2.0};
    std::vector<double> alpha_plus_grid;  ///< test studies; empty means {theta0.alpha_plus}
    std::uint64_t seed = 20240611;
    unsigned jobs = 1;
    std::optional<Eigen::Index> burnin;  ///< unset: 500 when gamma0 < 0, otherwise 0
    bool keep_records = false;
    double alpha = 0.05;

    void validate() const;
};

/// Fills the parameter grid of a named design. `custom` returns `base` unchanged.
ExperimentConfig preset(Design design, ExperimentConfig base = {});

/// (omega, alpha+, alpha-, c beta) with c = (E|eta|^r)^(delta/r).
Vector4d rescale_estimate(const QuantileFit& qfit, const InnovationDist& dist, double r, double delta);
double rescale_factor(const InnovationDist& dist, double r, double delta);

/// Burn-in rule shared by the studies and the CLI.
Eigen::Index default_burnin(const Params& theta0, const InnovationDist& dist);

struct EstimationRecord {
    int replication = 0;
    bool ok = false;
    std::string error;
    std::vector<Vector4d> estimate;  ///< rescaled theta_tau_hat per tau
    std::vector<Vector4d> se;        ///< rescaled plug-in standard errors per tau
};

struct EstimationCell {
    double tau = 0.0;
    Vector4d truth = Vector4d::Zero();  ///< b_tau theta0
    Vector4d bias = Vector4d::Zero();
    Vector4d esd = Vector4d::Zero();
    Vector4d asd = Vector4d::Zero();  ///< mean plug-in standard error
};

struct EstimationSummary {
    ExperimentConfig config;
    double gamma0 = 0.0;
    Eigen::Index burnin = 0;
    int completed = 0;
    int failures = 0;
    int certificate_failures = 0;
    std::vector<EstimationCell> cells;
    std::vector<EstimationRecord> records;
};

EstimationSummary run_estimation_study(const ExperimentConfig& config);

struct TestRecord {
    int replication = 0;
    bool ok = false;
    std::string error;
    double stat_T = 0.0;
    double stat_S1 = 0.0;
    std::vector<double> stat_S2;  ///< per tau
};

struct TestCell {
    double alpha_plus = 0.0;
    double gamma0 = 0.0;
    Eigen::Index burnin = 0;
    int completed = 0;
    int failures = 0;
    int certificate_failures = 0;
    double reject_stationary = 0.0;     ///< T test of H0: gamma0 < 0
    double reject_nonstationary = 0.0;  ///< T test of H0: gamma0 >= 0
    double reject_S1 = 0.0;
    std::vector<double> reject_S2;  ///< per tau
    std::vector<TestRecord> records;
};

struct TestSummary {
    ExperimentConfig config;
    std::vector<TestCell> cells;
};

TestSummary run_test_study(const ExperimentConfig& config);

struct NonstatCheckOptions {
    int truncation = 200;
    double init_ratio = 1.0;  ///< sigma_0^delta(theta) / h_0
    double window_fraction = 0.1;
    Eigen::Index gamma_draws = 1000000;
};

struct NonstatApproxRecord {
    double gamma0 = 0.0;
    double gamma0_se = 0.0;
    double beta_limit = 0.0;  ///< admissible beta bound for theta
    int truncation = 0;
    double tail_bound = 0.0;         ///< max over the window of prod_{k<=J} beta / a0
    double sup_dev_sigma = 0.0;      ///< sup |sigma_t^delta(theta)/h_t - v_t|
    double sup_dev_grad = 0.0;       ///< sup max-norm of (1/h_t) d sigma_t^delta / d vartheta - d_t
    double identity_dev = 0.0;       ///< sup |v_t(vartheta0) - 1|
    double truncation_change = 0.0;  ///< sup |v_t, d_t at J - at 2J|
    Eigen::Index window_start = 0;
    Eigen::VectorXd ratio;  ///< sigma_t^delta(theta)/h_t along the whole path
    Eigen::VectorXd v;      ///< v_t(vartheta), NaN where fewer than J lags exist
};

/// Compares the normalized volatility of a candidate theta along a path
/// simulated from `truth` with its stationary approximation.
NonstatApproxRecord nonstat_approx_check(const Params& truth, const Params& theta, const InnovationDist& dist,
                                         Eigen::Index n, std::uint64_t seed, const NonstatCheckOptions& options = {});

}  // namespace apq
