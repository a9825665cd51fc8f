#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apq/errors.hpp"
#include "apq/rng.hpp"

namespace apq {

template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;

/// Parameters of the first-order asymmetric power GARCH recursion
///
///   h_t = omega + alpha_plus (eps_{t-1}^+)^delta
///               + alpha_minus (-eps_{t-1}^-)^delta + beta h_{t-1},
///   eps_t = h_t^{1/delta} eta_t.
///
/// The exponent delta is fixed and known; theta() returns the four free
/// coefficients in the order (omega, alpha_plus, alpha_minus, beta).
template <typename Scalar>
struct ModelParams {
    Scalar omega{};
    Scalar alpha_plus{};
    Scalar alpha_minus{};
    Scalar beta{};
    Scalar delta{2};

    Vector4<Scalar> theta() const { return {omega, alpha_plus, alpha_minus, beta}; }

    static ModelParams from_theta(const Vector4<Scalar>& t, Scalar delta) {
        return {t(0), t(1), t(2), t(3), delta};
    }

    /// Throws InputError unless omega > 0, alphas and beta >= 0, delta > 0.
    void validate() const {
        if (!(omega > Scalar(0)) || !(alpha_plus >= Scalar(0)) || !(alpha_minus >= Scalar(0)) ||
            !(beta >= Scalar(0)) || !(delta > Scalar(0)))
            throw InputError("invalid model parameters: need omega>0, alpha+>=0, alpha->=0, beta>=0, delta>0");
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using Params = ModelParams<double>;

/// T(x) = |x|^delta sgn(x).
template <typename Scalar>
Scalar transform(Scalar x, Scalar delta) {
    using std::abs;
    using std::pow;
    if (x == Scalar(0)) return Scalar(0);
    const Scalar m = pow(abs(x), delta);
    return x < Scalar(0) ? -m : m;
}

/// T^{-1}(x) = |x|^{1/delta} sgn(x).
template <typename Scalar>
Scalar inverse_transform(Scalar x, Scalar delta) {
    using std::abs;
    using std::pow;
    if (x == Scalar(0)) return Scalar(0);
    const Scalar m = pow(abs(x), Scalar(1) / delta);
    return x < Scalar(0) ? -m : m;
}

/// (x^+)^delta
template <typename Scalar>
Scalar positive_power(Scalar x, Scalar delta) {
    using std::pow;
    return x > Scalar(0) ? pow(x, delta) : Scalar(0);
}

/// (-x^-)^delta
template <typename Scalar>
Scalar negative_power(Scalar x, Scalar delta) {
    using std::pow;
    return x < Scalar(0) ? pow(-x, delta) : Scalar(0);
}

/// a0(x) = alpha_plus (x^+)^delta + alpha_minus (-x^-)^delta + beta.
template <typename Scalar>
Scalar a0(const ModelParams<Scalar>& p, Scalar x) {
    return p.alpha_plus * positive_power(x, p.delta) + p.alpha_minus * negative_power(x, p.delta) + p.beta;
}

/// One step of the volatility recursion given the powered parts of the
/// previous shock. Simulation and filtering share this expression so the
/// two agree to the last bit.
template <typename Scalar>
Scalar recursion_step(const ModelParams<Scalar>& p, Scalar pos, Scalar neg, Scalar prev) {
    return p.omega + p.alpha_plus * pos + p.alpha_minus * neg + p.beta * prev;
}

class InnovationDist {
public:
    enum class Kind { normal, student_t };

    static InnovationDist normal() { return InnovationDist(Kind::normal, 0.0); }
    /// t_nu rescaled by sqrt((nu-2)/nu) so that E eta^2 = 1; needs nu > 2.
    static InnovationDist student_t(double nu);
    /// Parses "normal" or "st:<nu>" (also "t5" style shorthands "st5").
    static InnovationDist parse(const std::string& spec);

    Kind kind() const noexcept { return kind_; }
    double nu() const noexcept { return nu_; }
    std::string name() const;

    double draw(Rng& rng) const;
    /// E|eta|^r in closed form; requires r < nu for the t family.
    double abs_moment(double r) const;
    /// Q_tau of eta.
    double quantile(double tau) const;

    friend bool operator==(const InnovationDist&, const InnovationDist&) = default;

private:
    InnovationDist(Kind k, double nu) : kind_(k), nu_(nu) {}
    Kind kind_;
    double nu_;
};

struct SeriesData {
    Eigen::VectorXd values;
    std::vector<std::string> timestamps;

    SeriesData() = default;
    explicit SeriesData(Eigen::VectorXd v, std::vector<std::string> ts = {})
        : values(std::move(v)), timestamps(std::move(ts)) {}

    Eigen::Index size() const noexcept { return values.size(); }
    /// Throws InputError on empty or non-finite data.
    void validate() const;
    /// Copy of observations [0, count).
    SeriesData head(Eigen::Index count) const;
};

/// How sigma_0^delta and eps_0 are chosen before the first observation.
///
/// sample_mean: eps_0 = 0, sigma_0^delta = mean |eps_t|^delta over the whole sample.
/// leading_mean: eps_0 = 0, sigma_0^delta = mean |eps_t|^delta over the first `block` observations.
/// unconditional: eps_0 = 0, sigma_0^delta = omega / (1 - min(beta, 0.99)).
/// fixed: user-supplied values.
struct InitRule {
    enum class Kind { sample_mean, leading_mean, unconditional, fixed };
    Kind kind = Kind::leading_mean;
    double sigma_delta0 = 0.0;
    double epsilon0 = 0.0;
    Eigen::Index block = 100;

    static InitRule sample_mean() { return {Kind::sample_mean, 0.0, 0.0, 0}; }
    static InitRule leading_mean(Eigen::Index block = 100) { return {Kind::leading_mean, 0.0, 0.0, block}; }
    static InitRule unconditional() { return {Kind::unconditional, 0.0, 0.0, 0}; }
    static InitRule fixed(double sigma_delta0, double epsilon0) { return {Kind::fixed, sigma_delta0, epsilon0, 0}; }
};

/// Recursion state after observing eps_t: sigma_t^delta, its gradient and eps_t.
template <typename Scalar>
struct VolatilityState {
    Scalar sigma_delta{};
    Scalar epsilon{};
    Vector4<Scalar> grad = Vector4<Scalar>::Zero();
};

/// Advances the state by one observation.
template <typename Scalar>
void advance(VolatilityState<Scalar>& s, const ModelParams<Scalar>& p, Scalar next_epsilon) {
    const Scalar pos = positive_power(s.epsilon, p.delta);
    const Scalar neg = negative_power(s.epsilon, p.delta);
    const Scalar prev = s.sigma_delta;
    s.sigma_delta = recursion_step(p, pos, neg, prev);
    s.grad = Vector4<Scalar>(Scalar(1), pos, neg, prev) + p.beta * s.grad;
    s.epsilon = next_epsilon;
}

template <typename Scalar>
struct VolatilityPathT {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sigma_delta;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 4, Eigen::RowMajor> grad;
    Scalar init_sigma_delta{};
    Scalar init_epsilon{};
    VolatilityState<Scalar> final_state;
};

using VolatilityPath = VolatilityPathT<double>;

/// Filters sigma_t^delta(theta), t = 1..n, continuing from `state`.
template <typename Scalar>
VolatilityPathT<Scalar> volatility_path(const Eigen::Ref<const Eigen::VectorXd>& eps,
                                        const ModelParams<Scalar>& p, VolatilityState<Scalar> state) {
    using std::isfinite;
    VolatilityPathT<Scalar> out;
    const Eigen::Index n = eps.size();
    out.sigma_delta.resize(n);
    out.grad.resize(n, 4);
    out.init_sigma_delta = state.sigma_delta;
    out.init_epsilon = state.epsilon;
    for (Eigen::Index t = 0; t < n; ++t) {
        if (!std::isfinite(eps(t))) throw InputError("non-finite observation", static_cast<std::size_t>(t));
        advance(state, p, Scalar(eps(t)));
        if (!isfinite(state.sigma_delta))
            throw NumericalError("sigma^delta overflow", static_cast<std::size_t>(t));
        out.sigma_delta(t) = state.sigma_delta;
        out.grad.row(t) = state.grad.transpose();
    }
    out.final_state = state;
    return out;
}

/// Initial state implied by `rule` for `series` under `params`.
VolatilityState<double> initial_state(const SeriesData& series, const Params& params, const InitRule& rule);

VolatilityPath volatility_path(const SeriesData& series, const Params& params, const InitRule& rule = {});

struct SimulatedPath {
    SeriesData series;
    Eigen::VectorXd h;      ///< h_t for the returned window; +inf once beyond double range
    Eigen::VectorXd log_h;  ///< log h_t, always finite
    Eigen::VectorXd eta;
    double init_h = 0.0;        ///< h at the last burn-in step (or the start value)
    double init_epsilon = 0.0;  ///< eps at the last burn-in step (0 without burn-in)
    bool log_space = false;     ///< true when h exceeded 1e250 at some step
};

/// Simulates n observations after `burnin` discarded steps. The recursion
/// starts from h_0 = omega / (1 - min(beta, 0.99)) and eps_0 = 0.
/// Throws NumericalError (with index) if eps_t is not representable.
SimulatedPath simulate(const Params& params, const InnovationDist& dist, Eigen::Index n,
                       Eigen::Index burnin, std::uint64_t seed);

/// Draws of T(eta) = |eta|^delta sgn(eta) used as common random numbers.
/// Draws come in fixed blocks with per-block derived seeds, so the
/// sample does not depend on `jobs`.
Eigen::VectorXd transformed_draws(const InnovationDist& dist, double delta, Eigen::Index ndraws,
                                  std::uint64_t seed, unsigned jobs = 1);

struct LyapunovEstimate {
    double gamma = 0.0;
    double std_error = 0.0;
    Eigen::Index ndraws = 0;
};

LyapunovEstimate lyapunov_mc(const Params& params, const Eigen::Ref<const Eigen::VectorXd>& tdraws);
LyapunovEstimate lyapunov_mc(const Params& params, const InnovationDist& dist, Eigen::Index ndraws,
                             std::uint64_t seed, unsigned jobs = 1);

/// (E a0(eta)^{-p})^{-1/p}.
double beta_boundary(const Params& params, const Eigen::Ref<const Eigen::VectorXd>& tdraws, double p);
double beta_boundary(const Params& params, const InnovationDist& dist, double p, Eigen::Index ndraws,
                     std::uint64_t seed, unsigned jobs = 1);

struct RootResult {
    double alpha_plus = 0.0;
    double gamma_at_root = 0.0;
    int iterations = 0;
};

/// Solves gamma0(alpha_plus) = 0 by bisection on a fixed draw set.
RootResult alpha_plus_for_zero_gamma(double alpha_minus, double beta, double delta,
                                     const Eigen::Ref<const Eigen::VectorXd>& tdraws, double tol = 1e-6);
RootResult alpha_plus_for_zero_gamma(double alpha_minus, double beta, double delta, const InnovationDist& dist,
                                     Eigen::Index ndraws, std::uint64_t seed, double tol = 1e-6,
                                     unsigned jobs = 1);

}  // namespace apq
