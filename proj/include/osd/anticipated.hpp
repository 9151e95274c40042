#pragma once

// Anticipated gradient sets: the unknown outcome of each unit is replaced by
// a random variable from an auxiliary model and psi_i psi_i^T by its
// expectation. The expectation is stored as factor rows (see GradientSet), so
// every criterion and solver works on it unchanged.

#include <cmath>
#include <span>
#include <vector>

#include "osd/covariance.hpp"
#include "osd/criteria.hpp"
#include "osd/error.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/matrix.hpp"

namespace osd {

/// Log-normal model with log Y_i ~ Normal(yhat_i, sigma_i^2), evaluated at
/// theta = (eta, sigma). Two factor rows per unit; the Hessian is the
/// expected Hessian under the same auxiliary model.
inline GradientSet lognormal_anticipated(std::span<const double> w, std::span<const double> yhat,
                                         std::span<const double> sigma_i, std::span<const double> theta) {
    const std::size_t N = w.size();
    if (yhat.size() != N || sigma_i.size() != N || theta.size() != 2)
        throw Error(ErrorKind::InvalidInput, "lognormal_anticipated: length mismatch");
    const double eta = theta[0];
    const double s = theta[1];
    if (!(s > 0.0)) throw Error(ErrorKind::OutOfDomain, "lognormal_anticipated: sigma must be positive", s);
    const double s2 = s * s;
    GradientSet g;
    g.rows_per_unit = 2;
    g.psi = Matrix(2 * N, 2);
    SymMatrix h(2);
    for (std::size_t i = 0; i < N; ++i) {
        if (!(sigma_i[i] >= 0.0)) throw Error(ErrorKind::NotPSD, "negative auxiliary dispersion", sigma_i[i]);
        const double m = yhat[i] - eta;
        const double v = sigma_i[i] * sigma_i[i];
        const double er1 = m;
        const double er2 = m * m + v;
        const double er3 = m * m * m + 3.0 * m * v;
        const double er4 = m * m * m * m + 6.0 * m * m * v + 3.0 * v * v;
        const double wi2 = w[i] * w[i];
        // psi = -w (r / s^2, (r^2 - s^2) / s^3)
        SymMatrix e(2);
        e.set(0, 0, wi2 * er2 / (s2 * s2));
        e.set(0, 1, wi2 * (er3 - s2 * er1) / (s2 * s2 * s));
        e.set(1, 1, wi2 * (er4 - 2.0 * s2 * er2 + s2 * s2) / (s2 * s2 * s2));
        const Matrix f = psd_factor(e);
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t j = 0; j < 2; ++j) g.psi(2 * i + k, j) = f(j, k);
        h.set(0, 0, h(0, 0) + w[i] / s2);
        h.set(0, 1, h(0, 1) + 2.0 * w[i] * er1 / (s2 * s));
        h.set(1, 1, h(1, 1) + w[i] * (3.0 * er2 / (s2 * s2) - 1.0 / s2));
    }
    g.hessian = h;
    g.expected_hessian = h;
    g.theta0.assign(theta.begin(), theta.end());
    return g;
}

/// h_ii = p_i (1 - p_i) x_i^T (X^T W X)^-1 x_i at theta.
inline Vector leverage(const Matrix& X, std::span<const double> theta) {
    const std::size_t N = X.rows();
    const std::size_t p = X.cols();
    SymMatrix h(p);
    Vector wts(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double pi = std::clamp(detail::sigmoid(dot(X.row(i), theta)), 1e-12, 1.0 - 1e-12);
        wts[i] = pi * (1.0 - pi);
        h.add_outer(X.row(i), wts[i]);
    }
    const auto l = cholesky(h);
    if (!l) throw Error(ErrorKind::SingularHessian, "leverage: X^T W X is singular");
    Vector out(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto xi = X.row(i);
        const Vector z = cholesky_solve(*l, xi);
        out[i] = wts[i] * dot(xi, z);
    }
    return out;
}

/// Logistic model with Y_i having variance p_i (1 - p_i): one factor row
/// sqrt(p_i (1 - p_i)) x_i per unit, optionally deflated by (1 - h_ii).
inline GradientSet logit_anticipated(const Matrix& X, std::span<const double> theta, bool deflate) {
    const std::size_t N = X.rows();
    const std::size_t p = X.cols();
    if (theta.size() != p) throw Error(ErrorKind::InvalidInput, "logit_anticipated: theta length mismatch");
    Vector h;
    if (deflate) h = leverage(X, theta);
    GradientSet g;
    g.psi = Matrix(N, p);
    SymMatrix hess(p);
    for (std::size_t i = 0; i < N; ++i) {
        const double pi = std::clamp(detail::sigmoid(dot(X.row(i), theta)), 1e-12, 1.0 - 1e-12);
        const double var = pi * (1.0 - pi);
        hess.add_outer(X.row(i), var);
        const double scale = std::sqrt(var * (deflate ? std::max(1.0 - h[i], 0.0) : 1.0));
        for (std::size_t j = 0; j < p; ++j) g.psi(i, j) = scale * X(i, j);
    }
    g.hessian = hess;
    g.expected_hessian = hess;
    g.theta0.assign(theta.begin(), theta.end());
    return g;
}

/// Finite-population means with Y_i of mean yhat_i and dispersion Sigma_i.
/// `sigma` holds either one shared matrix or one per unit. Factor rows per
/// unit: w_i (yhat_i - theta) followed by the columns of w_i chol(Sigma_i).
inline GradientSet finpop_anticipated(std::span<const double> w, const Matrix& yhat, const std::vector<SymMatrix>& sigma,
                                      std::span<const double> theta) {
    const std::size_t N = w.size();
    const std::size_t p = theta.size();
    if (yhat.rows() != N || yhat.cols() != p) throw Error(ErrorKind::InvalidInput, "finpop_anticipated: yhat shape");
    if (sigma.size() != 1 && sigma.size() != N)
        throw Error(ErrorKind::InvalidInput, "finpop_anticipated: need one shared or N dispersion matrices");
    std::vector<Matrix> factors;
    factors.reserve(sigma.size());
    for (const auto& s : sigma) {
        if (s.dim() != p) throw Error(ErrorKind::InvalidInput, "finpop_anticipated: dispersion dimension");
        factors.push_back(psd_factor(s));
    }
    GradientSet g;
    g.rows_per_unit = 1 + p;
    g.psi = Matrix(N * (1 + p), p);
    for (std::size_t i = 0; i < N; ++i) {
        const Matrix& f = factors[sigma.size() == 1 ? 0 : i];
        const std::size_t base = i * (1 + p);
        for (std::size_t j = 0; j < p; ++j) g.psi(base, j) = w[i] * (yhat(i, j) - theta[j]);
        for (std::size_t k = 0; k < p; ++k)
            for (std::size_t j = 0; j < p; ++j) g.psi(base + 1 + k, j) = w[i] * f(j, k);
    }
    g.hessian = SymMatrix::identity(p);
    g.expected_hessian = g.hessian;
    g.theta0.assign(theta.begin(), theta.end());
    return g;
}

/// Coefficients of a linear criterion on an anticipated gradient set; for
/// non-linear criteria pass the linearization scheme.
inline CoefficientSet anticipated_coefficients(const CriterionSpec& spec, const GradientSet& anticipated,
                                               const std::optional<SamplingScheme>& at = std::nullopt) {
    return coefficients(spec, anticipated, at);
}

}  // namespace osd
