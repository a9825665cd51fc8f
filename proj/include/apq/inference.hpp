#pragma once

#include <string>

#include <Eigen/Core>

#include "apq/gqmle.hpp"
#include "apq/hybrid.hpp"

namespace apq {

enum class TestKind { stationarity_ST, stationarity_NT, asymmetry_global, asymmetry_local };
enum class NullDist { normal_upper, normal_lower, normal_two_sided };
enum class StationarityHypothesis { stationary, nonstationary };

std::string to_string(TestKind kind);
std::string to_string(NullDist dist);

/// p-value of a standard-normal statistic in the given direction.
double normal_p_value(double statistic, NullDist dist);

struct TestReport {
    TestKind name = TestKind::stationarity_ST;
    double statistic = 0.0;
    double p_value = 1.0;
    NullDist null_dist = NullDist::normal_upper;
    double alpha = 0.05;
    bool reject = false;
    double estimate = 0.0;  ///< gamma_tilde or the alpha difference
    double scale = 0.0;     ///< sigma_u or the standard deviation of the difference (sqrt(n) scale)
    std::string inputs_digest;
};

struct GammaEstimate {
    double gamma = 0.0;
    double sigma_u = 0.0;  ///< sample SD (n - 1) of log a0(eta_t)
    Eigen::Index n = 0;
};

/// Mean and SD of log a0(eta_t) at the GQMLE residuals.
GammaEstimate gamma_hat(const GqmleFit& step1);

struct GammaVariance {
    double sigma2_u = 0.0;
    double sigma2_stationary = 0.0;     ///< sigma_u^2 + delta^2 kappa (a'J^{-1}a - (1 - E[beta/a0])^2)
    double sigma2_nonstationary = 0.0;  ///< sigma_u^2
};

/// Plug-in asymptotic variance of sqrt(n)(gamma_tilde - gamma0) in both regimes. Reporting only.
GammaVariance gamma_variance(const GqmleFit& step1);

/// Hash of the fitted parameters, r and residuals.
std::string fit_digest(const GqmleFit& step1);

TestReport stationarity_test(const GqmleFit& step1, StationarityHypothesis hypothesis, double alpha = 0.05);
TestReport asymmetry_test_global(const GqmleFit& step1, double alpha = 0.05);
TestReport asymmetry_test_local(const GqmleFit& step1, const QuantileFit& qfit, double alpha = 0.05);

}  // namespace apq
