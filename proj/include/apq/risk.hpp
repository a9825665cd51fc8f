#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apq/core.hpp"
#include "apq/gqmle.hpp"

namespace apq {

enum class Side { lower, upper };

std::string to_string(Side side);
Side parse_side(const std::string& text);

struct ForecastConfig {
    double delta = 2.0;
    double r = 2.0;
    double tau = 0.05;  ///< listed tail probability; the upper side forecasts the 1 - tau quantile
    Side side = Side::lower;
    double start_fraction = 0.5;
    Eigen::Index start_index = 0;  ///< first forecast target when positive, overrides start_fraction
    int refit_every = 1;
    unsigned jobs = 1;
    OptimOptions optim{};
};

struct ForecastRun {
    double tau = 0.05;
    Side side = Side::lower;
    std::vector<Eigen::Index> targets;  ///< index of the observation each forecast is for
    Eigen::VectorXd var_series;
    Eigen::VectorXd realized;
    std::vector<Eigen::Index> gaps;  ///< targets without a forecast
    int refit_every = 1;
    std::string model_config;

    Eigen::Index n_out() const { return var_series.size(); }
    /// Quantile level actually forecast.
    double level() const { return side == Side::lower ? tau : 1.0 - tau; }
};

/// One-step-ahead quantile forecasts from an expanding window. The forecast
/// for observation t uses observations [0, t) only.
ForecastRun expanding_window_forecast(const SeriesData& series, const ForecastConfig& config);

/// Exceedance flags: realized < VaR on the lower side, realized > VaR on the upper side.
std::vector<int> exceedances(const Eigen::Ref<const Eigen::VectorXd>& realized,
                             const Eigen::Ref<const Eigen::VectorXd>& var_series, Side side);

struct CcResult {
    double lr_uc = 0.0;
    double lr_ind = 0.0;
    double lr_cc = 0.0;
    double p_value = 1.0;
    int dof = 2;
    bool degenerate = false;  ///< independence part undefined; p-value from LR_uc on one degree of freedom
    std::array<long, 4> transitions{};  ///< n00, n01, n10, n11
};

/// Christoffersen conditional-coverage likelihood-ratio test.
CcResult cc_test(const std::vector<int>& flags, double tau);

struct DqResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int dof = 6;
    bool pseudo_inverse = false;
};

/// Hit'X (X'X)^+ X'Hit / (tau (1 - tau)) with a rank-adjusted chi-square p-value.
DqResult dq_quadratic_form(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& hit,
                           double tau);

/// Engle-Manganelli dynamic-quantile test with `lags` lagged hits and the contemporaneous VaR.
DqResult dq_test(const Eigen::Ref<const Eigen::VectorXd>& realized, const Eigen::Ref<const Eigen::VectorXd>& var_series,
                 double tau, Side side = Side::lower, int lags = 4);

double coverage_error(const ForecastRun& run);

struct BacktestReport {
    Eigen::Index n_out = 0;
    Eigen::Index n_exceed = 0;
    double coverage_error = 0.0;
    double cc_pvalue = 1.0;
    double dq_pvalue = 1.0;
    double min_pvalue = 1.0;
    bool good = false;  ///< min_pvalue > 0.05
    CcResult cc;
    DqResult dq;
};

BacktestReport backtest(const ForecastRun& run);

}  // namespace apq
