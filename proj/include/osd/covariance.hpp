#pragma once

#include <optional>
#include <span>
#include <variant>

#include "osd/error.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/matrix.hpp"
#include "osd/risk.hpp"
#include "osd/sampling.hpp"

namespace osd {

/// Per-unit score information at theta0.
///
/// `psi` holds `rows_per_unit` consecutive rows per unit: unit i owns rows
/// i*r .. i*r + r - 1, and the unit's contribution to V is the sum of their
/// outer products. With r == 1 the rows are the gradients psi_i(theta0)
/// themselves; anticipated (expected) gradient outer products use r > 1.
struct GradientSet {
    Matrix psi;
    std::size_t rows_per_unit = 1;
    SymMatrix hessian;
    std::optional<SymMatrix> expected_hessian;
    Vector theta0;

    std::size_t units() const noexcept { return rows_per_unit ? psi.rows() / rows_per_unit : 0; }
    std::size_t dim() const noexcept { return psi.cols(); }
};

/// Exact gradients of `problem` at theta0.
inline GradientSet gradient_set(const RiskProblem& problem, std::span<const double> theta0) {
    GradientSet g;
    g.psi = Matrix(problem.size(), problem.dim());
    for (std::size_t i = 0; i < problem.size(); ++i) {
        const Vector gi = problem.gradient(i, theta0);
        std::copy(gi.begin(), gi.end(), g.psi.row(i).begin());
    }
    g.hessian = problem.hessian(theta0);
    g.expected_hessian = problem.expected_hessian(theta0);
    g.theta0.assign(theta0.begin(), theta0.end());
    return g;
}

/// max_j |sum_i psi_ij| relative to the largest row norm; ~0 at a fitted theta0.
inline double gradient_balance(const GradientSet& g) {
    Vector sums(g.dim(), 0.0);
    double max_row = 0.0;
    for (std::size_t i = 0; i < g.psi.rows(); ++i) {
        max_row = std::max(max_row, norm2(g.psi.row(i)));
        for (std::size_t j = 0; j < g.dim(); ++j) sums[j] += g.psi(i, j);
    }
    return max_row > 0.0 ? norm_inf(sums) / max_row : 0.0;
}

/// V(theta0) = sum_i psi_i psi_i^T (full-data score outer products).
inline SymMatrix score_outer(const GradientSet& g) {
    SymMatrix v(g.dim());
    for (std::size_t k = 0; k < g.psi.rows(); ++k) v.add_outer(g.psi.row(k), 1.0);
    return v;
}

/// Per-unit weight of psi_i psi_i^T in V(mu).
inline double variance_factor(DesignFamily family, double mu) {
    return family == DesignFamily::PoissonWithoutReplacement ? 1.0 / mu - 1.0 : 1.0 / mu;
}

inline SymMatrix v_matrix(const GradientSet& g, const SamplingScheme& scheme) {
    if (scheme.size() != g.units())
        throw Error(ErrorKind::InvalidInput, "scheme length " + std::to_string(scheme.size()) +
                                                 " does not match " + std::to_string(g.units()) + " units");
    SymMatrix v(g.dim());
    const std::size_t r = g.rows_per_unit;
    for (std::size_t i = 0; i < scheme.size(); ++i) {
        const double f = variance_factor(scheme.family(), scheme.mu(i));
        if (f == 0.0) continue;
        for (std::size_t k = 0; k < r; ++k) v.add_outer(g.psi.row(i * r + k), f);
    }
    return v;
}

struct CovarianceReport {
    SymMatrix v;
    SymMatrix gamma;
    DesignFamily family{};
};

inline SymMatrix hessian_inverse(const GradientSet& g) {
    try {
        return spd_inverse(g.hessian);
    } catch (const Error& e) {
        throw Error(ErrorKind::SingularHessian, std::string("Hessian not invertible: ") + e.what(), e.value());
    }
}

/// Gamma = H^-1 V(mu) H^-1 given a precomputed H^-1.
inline SymMatrix gamma_from(const SymMatrix& hinv, const SymMatrix& v) { return congruence(hinv.matrix(), v); }

inline CovarianceReport gamma(const GradientSet& g, const SamplingScheme& scheme) {
    SymMatrix v = v_matrix(g, scheme);
    SymMatrix gm = gamma_from(hessian_inverse(g), v);
    return {std::move(v), std::move(gm), scheme.family()};
}

enum class DispersionKind { ER, KL, ObservedInfo, ExpectedInfo, Sandwich, Explicit };

/// Returns M with d-optimality equivalent to L-optimality for L L^T = M.
inline SymMatrix dispersion_matrix(DispersionKind kind, const GradientSet& g,
                                   const std::optional<SymMatrix>& explicit_sigma = std::nullopt) {
    switch (kind) {
        case DispersionKind::ER:
        case DispersionKind::ObservedInfo: return g.hessian;
        case DispersionKind::KL:
        case DispersionKind::ExpectedInfo:
            if (!g.expected_hessian) throw Error(ErrorKind::Unsupported, "expected Hessian not available");
            return *g.expected_hessian;
        case DispersionKind::Sandwich: {
            const SymMatrix vinv = spd_inverse(score_outer(g));
            return congruence(g.hessian.matrix(), vinv);
        }
        case DispersionKind::Explicit:
            if (!explicit_sigma) throw Error(ErrorKind::InvalidInput, "explicit dispersion requires a matrix");
            return spd_inverse(*explicit_sigma);
    }
    throw Error(ErrorKind::InvalidInput, "unknown dispersion kind");
}

}  // namespace osd
