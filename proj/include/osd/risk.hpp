#pragma once

// Empirical-risk problems (finite-population means, log-normal, quasi-binomial
// logistic) and a damped Newton fitter over weighted unit subsets.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osd/error.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/matrix.hpp"
#include "osd/sampling.hpp"

namespace osd {

enum class ModelKind { FinPop, LogNormal, QbLogit };

inline std::string_view to_token(ModelKind k) {
    switch (k) {
        case ModelKind::FinPop: return "finpop";
        case ModelKind::LogNormal: return "lognormal";
        case ModelKind::QbLogit: return "qblogit";
    }
    return "?";
}

inline std::optional<ModelKind> parse_model(std::string_view token) {
    if (token == "finpop") return ModelKind::FinPop;
    if (token == "lognormal") return ModelKind::LogNormal;
    if (token == "qblogit") return ModelKind::QbLogit;
    return std::nullopt;
}

/// One term of a weighted risk sum_u weight_u * l_{index_u}(theta).
struct UnitWeight {
    std::size_t index;
    double weight;
};

inline std::vector<UnitWeight> all_units(std::size_t N) {
    std::vector<UnitWeight> u(N);
    for (std::size_t i = 0; i < N; ++i) u[i] = {i, 1.0};
    return u;
}

namespace detail {

inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

inline Vector normalized_weights(std::span<const double> w, std::size_t N) {
    if (w.size() != N) throw Error(ErrorKind::InvalidInput, "weight vector length does not match data");
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        if (!(w[i] > 0.0) || !std::isfinite(w[i]))
            throw Error(ErrorKind::InvalidWeights, "weight " + std::to_string(i) + " must be positive", w[i]);
        total += w[i];
    }
    Vector out(w.begin(), w.end());
    for (double& x : out) x /= total;
    return out;
}

}  // namespace detail

/// A differentiable empirical risk l0(theta) = sum_i l_i(theta) over N units.
/// Built through finpop_problem, lognormal_problem or qblogit_problem.
class RiskProblem {
public:
    ModelKind kind() const noexcept { return kind_; }
    std::size_t size() const noexcept { return N_; }
    std::size_t dim() const noexcept { return p_; }

    /// Normalized unit weights (all ones for the logistic model).
    std::span<const double> weights() const noexcept { return w_; }
    /// finpop: N x m outcomes; qblogit: N x p model matrix.
    const Matrix& matrix() const noexcept { return m_; }
    /// lognormal: log outcomes; qblogit: responses in [0,1].
    std::span<const double> response() const noexcept { return r_; }
    /// Auxiliary covariates (lognormal z columns), possibly 0 columns.
    const Matrix& aux() const noexcept { return aux_; }
    /// Group labels (finpop), possibly empty.
    std::span<const int> groups() const noexcept { return groups_; }

    const std::vector<std::string>& parameter_names() const noexcept { return names_; }
    void set_parameter_names(std::vector<std::string> names) {
        if (names.size() != p_) throw Error(ErrorKind::InvalidInput, "parameter name count mismatch");
        names_ = std::move(names);
    }
    void set_aux(Matrix aux) {
        if (aux.rows() != N_ && !(aux.rows() == 0 && aux.cols() == 0))
            throw Error(ErrorKind::InvalidInput, "auxiliary matrix row count mismatch");
        aux_ = std::move(aux);
    }
    void set_groups(std::vector<int> g) {
        if (!g.empty() && g.size() != N_) throw Error(ErrorKind::InvalidInput, "group label count mismatch");
        groups_ = std::move(g);
    }

    bool in_domain(std::span<const double> theta) const {
        if (theta.size() != p_) return false;
        for (double t : theta)
            if (!std::isfinite(t)) return false;
        if (kind_ == ModelKind::LogNormal) return theta[1] > 0.0;
        return true;
    }

    double loss(std::size_t i, std::span<const double> theta) const {
        switch (kind_) {
            case ModelKind::FinPop: {
                double s = 0.0;
                for (std::size_t j = 0; j < p_; ++j) {
                    const double d = m_(i, j) - theta[j];
                    s += d * d;
                }
                return 0.5 * w_[i] * s;
            }
            case ModelKind::LogNormal: {
                const double r = r_[i] - theta[0];
                const double s2 = theta[1] * theta[1];
                return 0.5 * w_[i] * (r * r / s2 + std::log(s2));
            }
            case ModelKind::QbLogit: {
                const double t = dot(m_.row(i), theta);
                return detail::softplus(t) - r_[i] * t;
            }
        }
        return 0.0;
    }

    /// psi_i(theta), the gradient of l_i.
    Vector gradient(std::size_t i, std::span<const double> theta) const {
        Vector g(p_);
        switch (kind_) {
            case ModelKind::FinPop:
                for (std::size_t j = 0; j < p_; ++j) g[j] = -w_[i] * (m_(i, j) - theta[j]);
                break;
            case ModelKind::LogNormal: {
                const double r = r_[i] - theta[0];
                const double s = theta[1];
                g[0] = -w_[i] * r / (s * s);
                g[1] = -w_[i] * (r * r / (s * s * s) - 1.0 / s);
                break;
            }
            case ModelKind::QbLogit: {
                const double pi = detail::sigmoid(dot(m_.row(i), theta));
                for (std::size_t j = 0; j < p_; ++j) g[j] = -(r_[i] - pi) * m_(i, j);
                break;
            }
        }
        return g;
    }

    /// acc += scale * (Hessian of l_i at theta).
    void add_unit_hessian(std::size_t i, std::span<const double> theta, double scale, SymMatrix& acc) const {
        switch (kind_) {
            case ModelKind::FinPop:
                for (std::size_t j = 0; j < p_; ++j) acc.set(j, j, acc(j, j) + scale * w_[i]);
                break;
            case ModelKind::LogNormal: {
                const double r = r_[i] - theta[0];
                const double s = theta[1];
                const double s2 = s * s;
                const double w = scale * w_[i];
                acc.set(0, 0, acc(0, 0) + w / s2);
                acc.set(0, 1, acc(0, 1) + 2.0 * w * r / (s2 * s));
                acc.set(1, 1, acc(1, 1) + w * (3.0 * r * r / (s2 * s2) - 1.0 / s2));
                break;
            }
            case ModelKind::QbLogit: {
                const double pi = std::clamp(detail::sigmoid(dot(m_.row(i), theta)), 1e-12, 1.0 - 1e-12);
                acc.add_outer(m_.row(i), scale * pi * (1.0 - pi));
                break;
            }
        }
    }

    double risk(std::span<const UnitWeight> units, std::span<const double> theta) const {
        double s = 0.0;
        for (const auto& u : units) s += u.weight * loss(u.index, theta);
        return s;
    }
    double full_risk(std::span<const double> theta) const {
        double s = 0.0;
        for (std::size_t i = 0; i < N_; ++i) s += loss(i, theta);
        return s;
    }

    Vector gradient_sum(std::span<const UnitWeight> units, std::span<const double> theta) const {
        Vector g(p_, 0.0);
        for (const auto& u : units) {
            const Vector gi = gradient(u.index, theta);
            for (std::size_t j = 0; j < p_; ++j) g[j] += u.weight * gi[j];
        }
        return g;
    }

    SymMatrix hessian(std::span<const UnitWeight> units, std::span<const double> theta) const {
        SymMatrix h(p_);
        for (const auto& u : units) add_unit_hessian(u.index, theta, u.weight, h);
        return h;
    }

    /// Full-data H(theta). For finite-population means this is exactly the
    /// identity because the weights sum to one.
    SymMatrix hessian(std::span<const double> theta) const {
        if (kind_ == ModelKind::FinPop) return SymMatrix::identity(p_);
        return hessian(all_units(N_), theta);
    }

    /// Expected Hessian; equals H for all three models (canonical links).
    std::optional<SymMatrix> expected_hessian(std::span<const double> theta) const { return hessian(theta); }

    /// finpop: unweighted mean; lognormal: weighted moments; qblogit: zero.
    Vector default_theta_init() const {
        Vector t(p_, 0.0);
        switch (kind_) {
            case ModelKind::FinPop:
                for (std::size_t i = 0; i < N_; ++i)
                    for (std::size_t j = 0; j < p_; ++j) t[j] += m_(i, j) / static_cast<double>(N_);
                break;
            case ModelKind::LogNormal: {
                double eta = 0.0;
                for (std::size_t i = 0; i < N_; ++i) eta += w_[i] * r_[i];
                double var = 0.0;
                for (std::size_t i = 0; i < N_; ++i) var += w_[i] * (r_[i] - eta) * (r_[i] - eta);
                t[0] = eta;
                t[1] = std::sqrt(var);
                break;
            }
            case ModelKind::QbLogit: break;
        }
        return t;
    }

    friend RiskProblem finpop_problem(const Matrix& Y, std::span<const double> w);
    friend RiskProblem lognormal_problem(std::span<const double> y, std::span<const double> w);
    friend RiskProblem qblogit_problem(const Matrix& X, std::span<const double> y);

private:
    RiskProblem() = default;

    ModelKind kind_{};
    std::size_t N_ = 0;
    std::size_t p_ = 0;
    Matrix m_;
    Vector r_;
    Vector w_;
    Matrix aux_;
    std::vector<int> groups_;
    std::vector<std::string> names_;
};

inline std::vector<std::string> indexed_names(const std::string& stem, std::size_t p) {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < p; ++j) out.push_back(stem + std::to_string(j + 1));
    return out;
}

/// theta0 = weighted mean of the rows of Y.
inline RiskProblem finpop_problem(const Matrix& Y, std::span<const double> w) {
    if (Y.rows() == 0 || Y.cols() == 0) throw Error(ErrorKind::InvalidInput, "finpop: empty outcome matrix");
    if (!Y.all_finite()) throw Error(ErrorKind::InvalidData, "finpop: non-finite outcome");
    RiskProblem pr;
    pr.kind_ = ModelKind::FinPop;
    pr.N_ = Y.rows();
    pr.p_ = Y.cols();
    pr.w_ = detail::normalized_weights(w, pr.N_);
    pr.m_ = Y;
    pr.names_ = indexed_names("theta", pr.p_);
    return pr;
}

/// theta = (eta, sigma) of a weighted log-normal likelihood.
inline RiskProblem lognormal_problem(std::span<const double> y, std::span<const double> w) {
    if (y.empty()) throw Error(ErrorKind::InvalidInput, "lognormal: empty outcome vector");
    RiskProblem pr;
    pr.kind_ = ModelKind::LogNormal;
    pr.N_ = y.size();
    pr.p_ = 2;
    pr.r_.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(y[i] > 0.0) || !std::isfinite(y[i]))
            throw Error(ErrorKind::InvalidData, "lognormal: outcome " + std::to_string(i) + " must be positive", y[i]);
        pr.r_[i] = std::log(y[i]);
    }
    pr.w_ = detail::normalized_weights(w, pr.N_);
    pr.names_ = {"eta", "sigma"};
    return pr;
}

/// Quasi-binomial logistic regression with fractional responses in [0, 1].
inline RiskProblem qblogit_problem(const Matrix& X, std::span<const double> y) {
    if (X.rows() == 0 || X.cols() == 0) throw Error(ErrorKind::InvalidInput, "qblogit: empty model matrix");
    if (y.size() != X.rows()) throw Error(ErrorKind::InvalidInput, "qblogit: response length mismatch");
    if (!X.all_finite()) throw Error(ErrorKind::InvalidData, "qblogit: non-finite model matrix entry");
    for (std::size_t j = 0; j < X.cols(); ++j) {
        bool nonzero = false;
        for (std::size_t i = 0; i < X.rows() && !nonzero; ++i) nonzero = X(i, j) != 0.0;
        if (!nonzero) throw Error(ErrorKind::InvalidInput, "qblogit: column " + std::to_string(j + 1) + " is all zero");
    }
    for (std::size_t i = 0; i < y.size(); ++i)
        if (!(y[i] >= 0.0 && y[i] <= 1.0))
            throw Error(ErrorKind::InvalidData, "qblogit: response " + std::to_string(i) + " outside [0,1]", y[i]);
    RiskProblem pr;
    pr.kind_ = ModelKind::QbLogit;
    pr.N_ = X.rows();
    pr.p_ = X.cols();
    pr.m_ = X;
    pr.r_.assign(y.begin(), y.end());
    pr.w_.assign(pr.N_, 1.0);
    pr.names_ = indexed_names("theta", pr.p_);
    return pr;
}

struct FitResult {
    Vector theta0;
    int iterations = 0;
    double final_gradient_norm = 0.0;
    SymMatrix hessian_at_opt;
};

namespace detail {

// Smallest generalized eigenvalue of (H, G) for G positive definite; used to
// detect logistic curvature collapsing under (quasi-)separation.
inline double relative_curvature(const SymMatrix& h, const SymMatrix& g) {
    const auto lg = cholesky(g);
    if (!lg) return 0.0;
    const std::size_t p = h.dim();
    Matrix linv(p, p);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = j; i < p; ++i) {
            double s = i == j ? 1.0 : 0.0;
            for (std::size_t k = j; k < i; ++k) s -= (*lg)(i, k) * linv(k, j);
            linv(i, j) = s / (*lg)(i, i);
        }
    }
    return min_eigenvalue(congruence(linv, h));
}

inline constexpr double kSeparationFloor = 1e-6;

inline void check_curvature(const RiskProblem& pr, std::span<const UnitWeight> units, const SymMatrix& h) {
    if (!cholesky(h)) throw Error(ErrorKind::SingularHessian, "Hessian is not positive definite");
    if (pr.kind() != ModelKind::QbLogit) return;
    SymMatrix g(pr.dim());
    for (const auto& u : units) g.add_outer(pr.matrix().row(u.index), 0.25 * u.weight);
    const double rc = relative_curvature(h, g);
    if (!(rc > kSeparationFloor))
        throw Error(ErrorKind::SingularHessian, "logistic curvature collapsed (separation)", rc);
}

}  // namespace detail

/// Minimizes sum_u weight_u l_u(theta) by Newton steps with step halving.
/// Stops when the gradient max-norm is <= tol.
inline FitResult fit_units(const RiskProblem& pr, std::span<const UnitWeight> units, std::span<const double> theta_init,
                           double tol, int max_iter) {
    if (units.empty()) throw Error(ErrorKind::EmptySample, "no units selected");
    if (!pr.in_domain(theta_init)) {
        if (pr.kind() == ModelKind::LogNormal && theta_init.size() == 2 && theta_init[1] == 0.0)
            throw Error(ErrorKind::SingularHessian, "zero dispersion: log-normal Hessian is singular");
        throw Error(ErrorKind::OutOfDomain, "initial parameter outside the model domain");
    }
    Vector theta(theta_init.begin(), theta_init.end());
    const std::size_t p = pr.dim();
    constexpr double eps = std::numeric_limits<double>::epsilon();
    for (int iter = 0;; ++iter) {
        const Vector g = pr.gradient_sum(units, theta);
        const double gnorm = norm_inf(g);
        if (!std::isfinite(gnorm)) throw Error(ErrorKind::NoConvergence, "non-finite gradient");
        if (gnorm <= tol) {
            SymMatrix h = pr.hessian(units, theta);
            detail::check_curvature(pr, units, h);
            return FitResult{theta, iter, gnorm, std::move(h)};
        }
        if (iter >= max_iter)
            throw Error(ErrorKind::NoConvergence, "Newton iteration limit reached, |g| = " + std::to_string(gnorm), gnorm);
        const SymMatrix h = pr.hessian(units, theta);
        detail::check_curvature(pr, units, h);
        const Vector step = cholesky_solve(*cholesky(h), g);
        const double r0 = pr.risk(units, theta);
        double t = 1.0;
        bool accepted = false;
        Vector cand(p);
        for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
            for (std::size_t j = 0; j < p; ++j) cand[j] = theta[j] - t * step[j];
            if (!pr.in_domain(cand)) continue;
            const double r1 = pr.risk(units, cand);
            if (r1 <= r0 + 64.0 * eps * std::abs(r0)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) throw Error(ErrorKind::NoConvergence, "line search failed to decrease the risk", gnorm);
        theta = cand;
    }
}

inline FitResult fit_full(const RiskProblem& pr, std::span<const double> theta_init, double tol = 1e-10,
                          int max_iter = 100) {
    return fit_units(pr, all_units(pr.size()), theta_init, tol, max_iter);
}

inline FitResult fit_full(const RiskProblem& pr) { return fit_full(pr, pr.default_theta_init()); }

/// Units with S_i > 0, weighted S_i / mu_i.
inline std::vector<UnitWeight> hansen_hurwitz_units(std::span<const std::int64_t> counts, const SamplingScheme& scheme) {
    if (counts.size() != scheme.size()) throw Error(ErrorKind::InvalidInput, "draw length does not match scheme");
    std::vector<UnitWeight> units;
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] > 0) units.push_back({i, static_cast<double>(counts[i]) / scheme.mu(i)});
    return units;
}

/// Hansen-Hurwitz estimate of l0(theta) from a draw.
inline double hh_risk(const RiskProblem& pr, std::span<const std::int64_t> counts, const SamplingScheme& scheme,
                      std::span<const double> theta) {
    return pr.risk(hansen_hurwitz_units(counts, scheme), theta);
}

inline FitResult weighted_fit(const RiskProblem& pr, std::span<const std::int64_t> counts, const SamplingScheme& scheme,
                              std::span<const double> theta_init, double tol = 1e-10, int max_iter = 100) {
    const auto units = hansen_hurwitz_units(counts, scheme);
    if (units.empty()) throw Error(ErrorKind::EmptySample, "draw selected no units");
    return fit_units(pr, units, theta_init, tol, max_iter);
}

}  // namespace osd
