#include "apq/quantile_regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "apq/errors.hpp"

namespace apq {

namespace {

constexpr double kZeroTol = 1e-12;
constexpr double kDescentTol = 1e-12;

struct Scaled {
    Eigen::MatrixXd A;      // columns equilibrated by powers of two
    Eigen::VectorXd c;
    Eigen::VectorXd col;    // b = col .* b_scaled
    double tau;
};

Scaled scale_problem(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                     const Eigen::Ref<const Eigen::VectorXd>& w, double tau) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = X.cols();
    if (!(tau > 0.0 && tau < 1.0)) throw InputError("tau must lie in (0,1)");
    if (k < 1) throw InputError("design needs at least one column");
    if (y.size() != n || w.size() != n) throw InputError("design, response and weights differ in length");
    if (n <= k) throw InputError("need more observations than regressors");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(std::isfinite(w(i)) && w(i) > 0.0))
            throw InputError("weights must be positive and finite", static_cast<std::size_t>(i));
        if (!std::isfinite(y(i)) || !X.row(i).allFinite())
            throw InputError("non-finite design or response", static_cast<std::size_t>(i));
    }
    Scaled s;
    s.A = X.array().colwise() / w.array();
    s.c = y.array() / w.array();
    s.col = Eigen::VectorXd::Ones(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double m = s.A.col(j).cwiseAbs().maxCoeff();
        if (m > 0.0 && std::isfinite(m)) {
            s.col(j) = std::ldexp(1.0, -std::ilogb(m));
            s.A.col(j) *= s.col(j);
        }
    }
    s.tau = tau;
    return s;
}

Eigen::VectorXd residual_scale(const Scaled& p, const Eigen::VectorXd& b) {
    return p.c.cwiseAbs() + p.A.cwiseAbs() * b.cwiseAbs();
}

[[noreturn]] void throw_rank_deficient(const Scaled& p) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p.A, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::Index last = sv.size() - 1;
    const double cond = sv(last) > 0.0 ? sv(0) / sv(last) : std::numeric_limits<double>::infinity();
    Eigen::VectorXd null = p.col.cwiseProduct(svd.matrixV().col(last));
    null.normalize();
    throw SingularMatrixError("quantile regression design is rank deficient", null, cond);
}

std::vector<Eigen::Index> initial_basis(const Scaled& p, const Eigen::VectorXd& b0) {
    const Eigen::Index n = p.A.rows();
    const Eigen::Index k = p.A.cols();
    const Eigen::VectorXd r = (p.c - p.A * b0).cwiseAbs();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return r(a) < r(b); });

    std::vector<Eigen::Index> basis;
    Eigen::MatrixXd Q(k, k);
    for (Eigen::Index idx : order) {
        Eigen::VectorXd v = p.A.row(idx).transpose();
        const double v0 = v.norm();
        if (v0 == 0.0) continue;
        const auto m = static_cast<Eigen::Index>(basis.size());
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index q = 0; q < m; ++q) v -= Q.col(q) * Q.col(q).dot(v);
        const double vn = v.norm();
        if (vn <= 1e-9 * v0) continue;
        Q.col(m) = v / vn;
        basis.push_back(idx);
        if (static_cast<Eigen::Index>(basis.size()) == k) return basis;
    }
    throw_rank_deficient(p);
}

struct Edge {
    Eigen::Index pos = -1;  // position in the basis
    int sign = 0;           // +1: basic residual turns positive
    double slope = 0.0;
};

struct Vertex {
    Eigen::VectorXd b;
    Eigen::MatrixXd Minv;
    Eigen::MatrixXd P;  // A * Minv
    Eigen::VectorXd r;
    std::vector<char> zero;  // nonbasic zero residuals
    Eigen::VectorXd mu;      // Minv' * G
};

bool load_vertex(const Scaled& p, const std::vector<Eigen::Index>& basis, Vertex& v) {
    const Eigen::Index n = p.A.rows();
    const Eigen::Index k = p.A.cols();
    Eigen::MatrixXd M(k, k);
    Eigen::VectorXd cb(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        M.row(j) = p.A.row(basis[static_cast<std::size_t>(j)]);
        cb(j) = p.c(basis[static_cast<std::size_t>(j)]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
    if (!lu.isInvertible()) return false;
    v.b = lu.solve(cb);
    v.Minv = lu.inverse();
    v.P = p.A * v.Minv;
    v.r = p.c - p.A * v.b;
    const Eigen::VectorXd scale = residual_scale(p, v.b);
    v.zero.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index j = 0; j < k; ++j) v.r(basis[static_cast<std::size_t>(j)]) = 0.0;
    std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
    for (Eigen::Index idx : basis) in_basis[static_cast<std::size_t>(idx)] = 1;
    Eigen::VectorXd G = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (in_basis[static_cast<std::size_t>(i)]) continue;
        if (std::abs(v.r(i)) <= kZeroTol * scale(i)) {
            v.zero[static_cast<std::size_t>(i)] = 1;
            v.r(i) = 0.0;
            continue;
        }
        G += check_score(v.r(i), p.tau) * p.A.row(i).transpose();
    }
    v.mu = v.Minv.transpose() * G;
    return true;
}

// Directional derivative along the edge that frees basic observation `pos`.
double edge_slope(const Scaled& p, const Vertex& v, Eigen::Index pos, int sign, double& scale) {
    const double tau = p.tau;
    double slope = (sign > 0 ? tau : 1.0 - tau) + sign * v.mu(pos);
    scale = 1.0 + std::abs(v.mu(pos));
    const Eigen::Index n = p.A.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!v.zero[static_cast<std::size_t>(i)]) continue;
        const double q = -sign * v.P(i, pos);
        slope += q < 0.0 ? tau * -q : (1.0 - tau) * q;
        scale += std::abs(q);
    }
    return slope;
}

// Steepest edge by default; lowest observation index first when `bland`.
Edge best_edge(const Scaled& p, const Vertex& v, const std::vector<Eigen::Index>& basis, bool bland) {
    const auto k = static_cast<Eigen::Index>(basis.size());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return basis[static_cast<std::size_t>(a)] < basis[static_cast<std::size_t>(b)];
    });
    Edge best;
    double best_score = 0.0;
    for (Eigen::Index pos : order) {
        const double dnorm = v.Minv.col(pos).norm();
        for (int sign : {+1, -1}) {
            double scale = 0.0;
            const double slope = edge_slope(p, v, pos, sign, scale);
            if (!(slope < -kDescentTol * scale)) continue;
            if (bland) return Edge{pos, sign, slope};
            const double score = slope / dnorm;
            if (best.pos < 0 || score < best_score) {
                best = Edge{pos, sign, slope};
                best_score = score;
            }
        }
    }
    return best;
}

// Exact line search along an edge: walk the kinks until the slope turns nonnegative.
Eigen::Index entering_index(const Scaled& p, const Vertex& v, const std::vector<char>& in_basis, const Edge& e,
                            double& step) {
    const Eigen::Index n = p.A.rows();
    std::vector<std::pair<double, Eigen::Index>> kinks;
    kinks.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (in_basis[static_cast<std::size_t>(i)] || v.zero[static_cast<std::size_t>(i)]) continue;
        const double q = -e.sign * v.P(i, e.pos);
        if (q == 0.0) continue;
        const double t = v.r(i) / q;
        if (t > 0.0) kinks.emplace_back(t, i);
    }
    std::sort(kinks.begin(), kinks.end());
    double slope = e.slope;
    for (const auto& [t, i] : kinks) {
        slope += std::abs(v.P(i, e.pos));
        if (slope >= 0.0) {
            step = t;
            return i;
        }
    }
    throw NumericalError("quantile regression objective unbounded along an edge");
}

// At a degenerate vertex the edges of one basis need not span every descent
// direction; try the other bases drawn from the zero-residual set.
bool escape_degenerate(const Scaled& p, Vertex& v, std::vector<Eigen::Index>& basis, Edge& edge) {
    const auto k = static_cast<Eigen::Index>(basis.size());
    std::vector<Eigen::Index> pool = basis;
    for (std::size_t i = 0; i < v.zero.size(); ++i)
        if (v.zero[i]) pool.push_back(static_cast<Eigen::Index>(i));
    std::sort(pool.begin(), pool.end());
    const auto m = static_cast<Eigen::Index>(pool.size());
    if (m <= k) return false;
    std::vector<char> pick(static_cast<std::size_t>(m), 0);
    std::fill(pick.begin(), pick.begin() + k, 1);
    int tried = 0;
    do {
        if (++tried > 5000) break;
        std::vector<Eigen::Index> cand;
        for (Eigen::Index i = 0; i < m; ++i)
            if (pick[static_cast<std::size_t>(i)]) cand.push_back(pool[static_cast<std::size_t>(i)]);
        if (cand == basis) continue;
        Vertex trial;
        if (!load_vertex(p, cand, trial)) continue;
        const Edge e = best_edge(p, trial, cand, true);
        if (e.pos >= 0) {
            basis = cand;
            v = std::move(trial);
            edge = e;
            return true;
        }
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return false;
}

QrCertificate interval_certificate(const Scaled& p, const Eigen::VectorXd& r, const std::vector<char>& zero) {
    const Eigen::Index n = p.A.rows();
    const Eigen::Index k = p.A.cols();
    const double tau = p.tau;
    Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd hi = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd mag = Eigen::VectorXd::Zero(k);
    QrCertificate cert;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            const double a = p.A(i, j);
            mag(j) += std::abs(a);
            if (zero[static_cast<std::size_t>(i)]) {
                lo(j) += std::min(-tau * a, (1.0 - tau) * a);
                hi(j) += std::max(-tau * a, (1.0 - tau) * a);
            } else {
                s(j) += check_score(r(i), tau) * a;
            }
        }
        if (zero[static_cast<std::size_t>(i)]) ++cert.zero_residuals;
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double viol = std::max({0.0, lo(j) - s(j), s(j) - hi(j)});
        worst = std::max(worst, viol / std::max(mag(j), 1e-300));
    }
    cert.max_violation = worst;
    cert.interval_condition = worst <= 1e-10;
    return cert;
}

}  // namespace

QrCertificate verify_quantile_optimality(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                         const Eigen::Ref<const Eigen::VectorXd>& y,
                                         const Eigen::Ref<const Eigen::VectorXd>& w, double tau,
                                         const Eigen::Ref<const Eigen::VectorXd>& coef) {
    const Scaled p = scale_problem(X, y, w, tau);
    if (coef.size() != X.cols()) throw InputError("coefficient length does not match the design");
    const Eigen::VectorXd b = coef.cwiseQuotient(p.col);
    const Eigen::VectorXd r = p.c - p.A * b;
    const Eigen::VectorXd scale = residual_scale(p, b);
    std::vector<char> zero(static_cast<std::size_t>(r.size()), 0);
    for (Eigen::Index i = 0; i < r.size(); ++i) zero[static_cast<std::size_t>(i)] = std::abs(r(i)) <= 1e-9 * scale(i);
    QrCertificate cert = interval_certificate(p, r, zero);
    cert.degenerate = cert.zero_residuals > X.cols();
    return cert;
}

QrSolution weighted_quantile_regression(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                        const Eigen::Ref<const Eigen::VectorXd>& y,
                                        const Eigen::Ref<const Eigen::VectorXd>& w, double tau,
                                        const std::optional<Eigen::VectorXd>& start) {
    const Scaled p = scale_problem(X, y, w, tau);
    const Eigen::Index n = p.A.rows();
    const Eigen::Index k = p.A.cols();

    Eigen::VectorXd b0;
    if (start) {
        if (start->size() != k || !start->allFinite()) throw InputError("start vector does not match the design");
        b0 = start->cwiseQuotient(p.col);
    } else {
        b0 = p.A.colPivHouseholderQr().solve(p.c);
        if (!b0.allFinite()) b0.setZero();
    }
    std::vector<Eigen::Index> basis = initial_basis(p, b0);

    Vertex v;
    if (!load_vertex(p, basis, v)) throw_rank_deficient(p);

    const long max_iter = 50L * static_cast<long>(n) + 1000L;
    int degenerate_run = 0;
    QrSolution sol;
    for (long it = 0;; ++it) {
        if (it > max_iter) throw NumericalError("quantile regression simplex did not terminate");
        Edge e = best_edge(p, v, basis, degenerate_run > static_cast<int>(k));
        if (e.pos < 0) {
            const bool has_zero = std::any_of(v.zero.begin(), v.zero.end(), [](char z) { return z != 0; });
            if (!has_zero || !escape_degenerate(p, v, basis, e)) break;
        }
        std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
        for (Eigen::Index idx : basis) in_basis[static_cast<std::size_t>(idx)] = 1;
        double step = 0.0;
        const Eigen::Index enter = entering_index(p, v, in_basis, e, step);
        const double move = step * v.Minv.col(e.pos).norm();
        degenerate_run = move <= 1e-14 * (1.0 + v.b.norm()) ? degenerate_run + 1 : 0;
        std::vector<Eigen::Index> next = basis;
        next[static_cast<std::size_t>(e.pos)] = enter;
        Vertex nv;
        if (!load_vertex(p, next, nv)) throw NumericalError("quantile regression pivot produced a singular basis");
        basis = std::move(next);
        v = std::move(nv);
        sol.iterations = static_cast<int>(it + 1);
    }

    sol.coef = v.b.cwiseProduct(p.col);
    sol.residuals = y - X * sol.coef;
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) obj += check_loss(v.r(i), tau);
    sol.objective = obj;

    std::vector<char> zero = v.zero;
    for (Eigen::Index idx : basis) zero[static_cast<std::size_t>(idx)] = 1;
    QrCertificate cert = interval_certificate(p, v.r, zero);
    cert.edges_nonnegative = true;
    cert.basic_duals = -v.mu;
    cert.basis = basis;
    cert.degenerate = cert.zero_residuals > k;
    sol.certificate = std::move(cert);
    if (!sol.certificate.interval_condition)
        throw NumericalError("quantile regression optimality certificate failed");
    return sol;
}

}  // namespace apq
