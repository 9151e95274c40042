#pragma once

// Dense symmetric kernels: Jacobi eigendecomposition, PSD factorization,
// SPD inverse/solve, trace products and spectral matrix functions.

#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "osd/config.hpp"
#include "osd/error.hpp"
#include "osd/matrix.hpp"

namespace osd {

/// Eigenvalues sorted descending; `vectors` holds the matching orthonormal
/// eigenvectors as columns.
struct EigenPair {
    Vector values;
    Matrix vectors;

    std::size_t dim() const noexcept { return values.size(); }
    Vector vector(std::size_t k) const { return vectors.col(k); }
    double max() const { return values.front(); }
    double min() const { return values.back(); }
};

namespace detail {

inline void require_finite(const SymMatrix& m, const char* who) {
    if (!m.all_finite()) throw Error(ErrorKind::InvalidInput, std::string(who) + ": non-finite entries");
}

inline double off_diagonal_frobenius(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace detail

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Each eigenvector
/// is signed so its first non-negligible component is positive.
inline EigenPair sym_eigen(const SymMatrix& m) {
    detail::require_finite(m, "sym_eigen");
    const auto& cfg = numeric_config();
    const std::size_t n = m.dim();
    Matrix a = m.matrix();
    Matrix v = Matrix::identity(n);
    const double scale = m.frobenius();

    if (scale > 0.0) {
        for (int sweep = 0; sweep < cfg.eigen_max_sweeps; ++sweep) {
            if (detail::off_diagonal_frobenius(a) <= cfg.eigen_tol * scale) break;
            for (std::size_t p = 0; p + 1 < n; ++p) {
                for (std::size_t q = p + 1; q < n; ++q) {
                    const double apq = a(p, q);
                    if (apq == 0.0) continue;
                    const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                    const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                    const double c = 1.0 / std::sqrt(1.0 + t * t);
                    const double s = t * c;
                    for (std::size_t k = 0; k < n; ++k) {
                        const double akp = a(k, p), akq = a(k, q);
                        a(k, p) = c * akp - s * akq;
                        a(k, q) = s * akp + c * akq;
                    }
                    for (std::size_t k = 0; k < n; ++k) {
                        const double apk = a(p, k), aqk = a(q, k);
                        a(p, k) = c * apk - s * aqk;
                        a(q, k) = s * apk + c * aqk;
                    }
                    a(p, q) = 0.0;
                    a(q, p) = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                        const double vkp = v(k, p), vkq = v(k, q);
                        v(k, p) = c * vkp - s * vkq;
                        v(k, q) = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EigenPair out{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.values[k] = a(src, src);
        double sign = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(v(i, src)) > 1e-12) {
                sign = v(i, src) > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = sign * v(i, src);
    }
    return out;
}

/// Reconstructs Q diag(f(lambda)) Q^T.
template <class F>
SymMatrix spectral_apply(const EigenPair& e, F&& f) {
    const std::size_t n = e.dim();
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double fk = f(e.values[k]);
        if (fk == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            const double vik = fk * e.vectors(i, k);
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * e.vectors(j, k);
        }
    }
    return SymMatrix(out);
}

/// Lower Cholesky factor, or nullopt when a pivot is not clearly positive.
inline std::optional<Matrix> cholesky(const SymMatrix& m) {
    const std::size_t n = m.dim();
    const double floor = numeric_config().spd_tol * m.frobenius();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > floor) || d <= 0.0) return std::nullopt;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

/// Solves L L^T x = b given the lower Cholesky factor.
inline Vector cholesky_solve(const Matrix& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    Vector y(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
        y[i] /= l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= l(k, ii) * y[k];
        y[ii] /= l(ii, ii);
    }
    return y;
}

/// Returns L with L L^T = M. Cholesky when M is strictly positive definite,
/// otherwise Q sqrt(Lambda) with small negative eigenvalues clamped to zero.
inline Matrix psd_factor(const SymMatrix& m, double tol = numeric_config().psd_tol) {
    detail::require_finite(m, "psd_factor");
    if (auto l = cholesky(m)) return *l;
    const EigenPair e = sym_eigen(m);
    const double norm = m.frobenius();
    if (e.min() < -tol * norm)
        throw Error(ErrorKind::NotPSD, "psd_factor: min eigenvalue " + std::to_string(e.min()), e.min());
    const std::size_t n = m.dim();
    Matrix l(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double s = std::sqrt(std::max(e.values[k], 0.0));
        for (std::size_t i = 0; i < n; ++i) l(i, k) = e.vectors(i, k) * s;
    }
    return l;
}

inline double min_eigenvalue(const SymMatrix& m) { return sym_eigen(m).min(); }

/// Inverse of a symmetric positive definite matrix.
inline SymMatrix spd_inverse(const SymMatrix& m) {
    detail::require_finite(m, "spd_inverse");
    const double norm = m.frobenius();
    const double lmin = min_eigenvalue(m);
    if (!(lmin > numeric_config().spd_tol * norm))
        throw Error(ErrorKind::SingularMatrix, "spd_inverse: min eigenvalue " + std::to_string(lmin), lmin);
    const std::size_t n = m.dim();
    if (auto l = cholesky(m)) {
        Matrix inv(n, n);
        Vector e(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            std::fill(e.begin(), e.end(), 0.0);
            e[j] = 1.0;
            const Vector x = cholesky_solve(*l, e);
            for (std::size_t i = 0; i < n; ++i) inv(i, j) = x[i];
        }
        return SymMatrix(inv);
    }
    return spectral_apply(sym_eigen(m), [](double x) { return 1.0 / x; });
}

/// tr(A B) for symmetric A, B.
inline double trace_prod(const SymMatrix& a, const SymMatrix& b) {
    if (a.dim() != b.dim()) throw Error(ErrorKind::InvalidInput, "trace_prod: dimension mismatch");
    const auto da = a.matrix().data();
    const auto db = b.matrix().data();
    double s = 0.0;
    for (std::size_t k = 0; k < da.size(); ++k) s += da[k] * db[k];
    return s;
}

/// M^q through the eigendecomposition. Negative eigenvalues beyond the PSD
/// tolerance are rejected; q <= 0 additionally needs full rank.
inline SymMatrix sym_power(const SymMatrix& m, double q) {
    const EigenPair e = sym_eigen(m);
    const double norm = m.frobenius();
    const auto& cfg = numeric_config();
    if (e.min() < -cfg.psd_tol * norm) throw Error(ErrorKind::NotPSD, "sym_power: negative eigenvalue", e.min());
    if (q <= 0.0 && !(e.min() > cfg.spd_tol * norm))
        throw Error(ErrorKind::SingularMatrix, "sym_power: rank-deficient matrix", e.min());
    return spectral_apply(e, [q](double x) { return x > 0.0 ? std::pow(x, q) : 0.0; });
}

/// log det of a positive definite matrix.
inline double log_det(const SymMatrix& m) {
    if (auto l = cholesky(m)) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.dim(); ++i) s += std::log((*l)(i, i));
        return 2.0 * s;
    }
    const EigenPair e = sym_eigen(m);
    if (!(e.min() > 0.0)) throw Error(ErrorKind::SingularMatrix, "log_det: matrix not positive definite", e.min());
    double s = 0.0;
    for (double x : e.values) s += std::log(x);
    return s;
}

}  // namespace osd
