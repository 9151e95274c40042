#pragma once

// Optimality criteria: objective values, matrix derivatives phi(Gamma) and
// the per-unit coefficients c_i = ||L^T H^-1 psi_i||^2 that drive the
// square-root allocation rule.

#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "osd/config.hpp"
#include "osd/covariance.hpp"
#include "osd/error.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/matrix.hpp"
#include "osd/risk.hpp"
#include "osd/sampling.hpp"

namespace osd {

enum class CriterionKind { A, C, L, V, D, E, PhiQ, Distance };

struct CriterionSpec {
    CriterionKind kind = CriterionKind::A;
    Vector c;                                // C
    Matrix l;                                // L (p x m)
    std::optional<SymMatrix> gram;           // V
    double q = 1.0;                          // PhiQ
    DispersionKind distance = DispersionKind::ER;
    std::optional<SymMatrix> explicit_sigma; // Distance(Explicit)
    std::optional<SymMatrix> dispersion;     // Distance, once bound to a gradient set

    static CriterionSpec a_opt() { return {}; }
    static CriterionSpec c_opt(Vector c) {
        if (c.empty() || norm_inf(c) == 0.0) throw Error(ErrorKind::InvalidInput, "c-optimality needs a non-zero vector");
        CriterionSpec s;
        s.kind = CriterionKind::C;
        s.c = std::move(c);
        return s;
    }
    static CriterionSpec l_opt(Matrix l) {
        if (l.empty() || l.max_abs() == 0.0) throw Error(ErrorKind::InvalidInput, "L-optimality needs a non-zero matrix");
        CriterionSpec s;
        s.kind = CriterionKind::L;
        s.l = std::move(l);
        return s;
    }
    static CriterionSpec v_opt(SymMatrix gram) {
        CriterionSpec s;
        s.kind = CriterionKind::V;
        s.gram = std::move(gram);
        return s;
    }
    static CriterionSpec d_opt() {
        CriterionSpec s;
        s.kind = CriterionKind::D;
        return s;
    }
    static CriterionSpec e_opt() {
        CriterionSpec s;
        s.kind = CriterionKind::E;
        return s;
    }
    static CriterionSpec phi_q(double q) {
        if (!(q > 0.0) || !std::isfinite(q)) throw Error(ErrorKind::InvalidInput, "phi_q needs 0 < q < inf", q);
        CriterionSpec s;
        s.kind = CriterionKind::PhiQ;
        s.q = q;
        return s;
    }
    static CriterionSpec distance_opt(DispersionKind kind, std::optional<SymMatrix> sigma = std::nullopt) {
        CriterionSpec s;
        s.kind = CriterionKind::Distance;
        s.distance = kind;
        s.explicit_sigma = std::move(sigma);
        return s;
    }

    /// A, c, L, V and the distance criteria have gradient-independent phi.
    bool is_linear() const noexcept {
        return kind != CriterionKind::D && kind != CriterionKind::E && kind != CriterionKind::PhiQ;
    }
};

namespace detail {

inline std::string format_number(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

}  // namespace detail

/// Short human-readable token, e.g. "A", "c:1,0", "phi:0.5", "d-er".
inline std::string label(const CriterionSpec& s) {
    switch (s.kind) {
        case CriterionKind::A: return "A";
        case CriterionKind::C: {
            std::string out = "c:";
            for (std::size_t j = 0; j < s.c.size(); ++j) out += (j ? "," : "") + detail::format_number(s.c[j]);
            return out;
        }
        case CriterionKind::L: return "L";
        case CriterionKind::V: return "V";
        case CriterionKind::D: return "D";
        case CriterionKind::E: return "E";
        case CriterionKind::PhiQ: return "phi:" + detail::format_number(s.q);
        case CriterionKind::Distance:
            switch (s.distance) {
                case DispersionKind::ER: return "d-er";
                case DispersionKind::KL: return "d-kl";
                case DispersionKind::Sandwich: return "d-s";
                case DispersionKind::ObservedInfo: return "d-obs";
                case DispersionKind::ExpectedInfo: return "d-exp";
                case DispersionKind::Explicit: return "d-sigma";
            }
    }
    return "?";
}

/// V-optimality with the empirical feature Gram matrix X^T X / N. Only the
/// logistic model has a feature map.
inline CriterionSpec v_criterion(const RiskProblem& problem) {
    if (problem.kind() != ModelKind::QbLogit)
        throw Error(ErrorKind::Unsupported, "V-optimality requires a regression model matrix");
    SymMatrix g(problem.dim());
    const double inv_n = 1.0 / static_cast<double>(problem.size());
    for (std::size_t i = 0; i < problem.size(); ++i) g.add_outer(problem.matrix().row(i), inv_n);
    return CriterionSpec::v_opt(std::move(g));
}

/// Fills in the dispersion matrix of a distance criterion for `grads`.
inline CriterionSpec bind(CriterionSpec spec, const GradientSet& grads) {
    if (spec.kind == CriterionKind::Distance)
        spec.dispersion = dispersion_matrix(spec.distance, grads, spec.explicit_sigma);
    return spec;
}

namespace detail {

inline void check_dims(const CriterionSpec& s, std::size_t p) {
    switch (s.kind) {
        case CriterionKind::C:
            if (s.c.size() != p) throw Error(ErrorKind::InvalidInput, "c vector length must equal p");
            break;
        case CriterionKind::L:
            if (s.l.rows() != p) throw Error(ErrorKind::InvalidInput, "L matrix must have p rows");
            break;
        case CriterionKind::V:
            if (!s.gram || s.gram->dim() != p) throw Error(ErrorKind::InvalidInput, "V Gram matrix must be p x p");
            break;
        case CriterionKind::Distance:
            if (!s.dispersion) throw Error(ErrorKind::InvalidInput, "distance criterion not bound to a gradient set");
            if (s.dispersion->dim() != p) throw Error(ErrorKind::InvalidInput, "dispersion matrix must be p x p");
            break;
        default: break;
    }
}

inline void require_full_rank(const EigenPair& e, double norm, const char* who) {
    if (!(e.min() > numeric_config().spd_tol * norm))
        throw Error(ErrorKind::SingularMatrix, std::string(who) + ": covariance is rank deficient", e.min());
}

/// Constant phi for linear criteria.
inline SymMatrix linear_phi(const CriterionSpec& s, std::size_t p) {
    const double inv_p = 1.0 / static_cast<double>(p);
    switch (s.kind) {
        case CriterionKind::A: return SymMatrix::identity(p) * inv_p;
        case CriterionKind::C: return SymMatrix::outer(s.c);
        case CriterionKind::L: return SymMatrix(s.l * s.l.transpose()) * (1.0 / static_cast<double>(s.l.cols()));
        case CriterionKind::V: return *s.gram;
        case CriterionKind::Distance: return *s.dispersion * inv_p;
        default: throw Error(ErrorKind::InvalidInput, "criterion is not linear");
    }
}

}  // namespace detail

/// Objective value Phi(Gamma).
inline double phi_value(const CriterionSpec& s, const SymMatrix& g) {
    const std::size_t p = g.dim();
    detail::check_dims(s, p);
    switch (s.kind) {
        case CriterionKind::A: return g.trace() / static_cast<double>(p);
        case CriterionKind::C: return quad_form(g, s.c);
        case CriterionKind::L:
        case CriterionKind::V:
        case CriterionKind::Distance: return trace_prod(g, detail::linear_phi(s, p));
        case CriterionKind::D: {
            const EigenPair e = sym_eigen(g);
            detail::require_full_rank(e, g.frobenius(), "D-optimality");
            double s_log = 0.0;
            for (double x : e.values) s_log += std::log(x);
            return std::exp(s_log / static_cast<double>(p));
        }
        case CriterionKind::E: return sym_eigen(g).max();
        case CriterionKind::PhiQ: {
            const EigenPair e = sym_eigen(g);
            detail::require_full_rank(e, g.frobenius(), "phi_q");
            double t = 0.0;
            for (double x : e.values) t += std::pow(x, s.q);
            return std::pow(t / static_cast<double>(p), 1.0 / s.q);
        }
    }
    return 0.0;
}

/// The function whose Gamma-derivative is phi_matrix_derivative: equal to
/// phi_value except for D, where it is log det(Gamma).
inline double phi_potential(const CriterionSpec& s, const SymMatrix& g) {
    if (s.kind == CriterionKind::D) {
        const EigenPair e = sym_eigen(g);
        detail::require_full_rank(e, g.frobenius(), "D-optimality");
        double s_log = 0.0;
        for (double x : e.values) s_log += std::log(x);
        return s_log;
    }
    return phi_value(s, g);
}

/// phi(Gamma) = dPhi/dGamma. D uses the log-det form (Gamma^-1); L-type
/// criteria keep their 1/m normalization so the derivative law is exact.
inline SymMatrix phi_matrix_derivative(const CriterionSpec& s, const SymMatrix& g) {
    const std::size_t p = g.dim();
    detail::check_dims(s, p);
    if (s.is_linear()) return detail::linear_phi(s, p);
    switch (s.kind) {
        case CriterionKind::D: return spd_inverse(g);
        case CriterionKind::E: {
            const EigenPair e = sym_eigen(g);
            if (p > 1) {
                const double gap = e.values[0] - e.values[1];
                if (gap < numeric_config().eigen_gap_error * std::abs(e.values[0]))
                    throw Error(ErrorKind::NotDifferentiable, "largest eigenvalue is not simple", gap);
            }
            return SymMatrix::outer(e.vector(0));
        }
        case CriterionKind::PhiQ: {
            const EigenPair e = sym_eigen(g);
            detail::require_full_rank(e, g.frobenius(), "phi_q");
            const double pd = static_cast<double>(p);
            double t = 0.0;
            for (double x : e.values) t += std::pow(x, s.q);
            const double scale = std::pow(t / pd, 1.0 / s.q - 1.0) / pd;
            const double qm1 = s.q - 1.0;
            return spectral_apply(e, [&](double x) { return scale * std::pow(x, qm1); });
        }
        default: break;
    }
    throw Error(ErrorKind::InvalidInput, "unknown criterion");
}

/// L with L L^T = phi(Gamma).
inline Matrix phi_factor(const CriterionSpec& s, const SymMatrix& phi) {
    if (s.kind == CriterionKind::C) return Matrix::column(s.c);
    if (s.kind == CriterionKind::L) return s.l * (1.0 / std::sqrt(static_cast<double>(s.l.cols())));
    return psd_factor(phi);
}

struct CoefficientSet {
    Vector c;
    CriterionSpec criterion;
    std::optional<SamplingScheme> at;

    std::size_t size() const noexcept { return c.size(); }
    double max() const {
        double m = 0.0;
        for (double x : c) m = std::max(m, x);
        return m;
    }
    /// Units whose coefficient is zero relative to the largest one.
    std::vector<std::size_t> zero_ids() const {
        const double floor = numeric_config().zero_coef_rel_tol * max();
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < c.size(); ++i)
            if (!(c[i] > floor)) ids.push_back(i);
        return ids;
    }
    bool feasible() const { return zero_ids().empty(); }
};

/// c_i = sum over the unit's rows a of ||L^T H^-1 a||^2, given phi.
inline Vector coefficients_from_phi(const CriterionSpec& s, const SymMatrix& phi, const GradientSet& grads,
                                    const SymMatrix& hinv) {
    const Matrix b = phi_factor(s, phi).transpose() * hinv.matrix();
    const std::size_t r = grads.rows_per_unit;
    const std::size_t n_units = grads.units();
    Vector c(n_units, 0.0);
    Vector tmp(b.rows());
    for (std::size_t i = 0; i < n_units; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) {
            const auto a = grads.psi.row(i * r + k);
            for (std::size_t m = 0; m < b.rows(); ++m) {
                const double v = dot(b.row(m), a);
                acc += v * v;
            }
        }
        c[i] = acc;
    }
    return c;
}

/// Raw (unnormalized) coefficients; `at` is the linearization point needed by
/// D, E and phi_q.
inline CoefficientSet coefficients(const CriterionSpec& spec, const GradientSet& grads,
                                   const std::optional<SamplingScheme>& at = std::nullopt) {
    CriterionSpec s = (spec.kind == CriterionKind::Distance && !spec.dispersion) ? bind(spec, grads) : spec;
    const SymMatrix hinv = hessian_inverse(grads);
    SymMatrix phi;
    if (s.is_linear()) {
        detail::check_dims(s, grads.dim());
        phi = detail::linear_phi(s, grads.dim());
    } else {
        if (!at) throw Error(ErrorKind::InvalidInput, "non-linear criterion needs a linearization scheme");
        phi = phi_matrix_derivative(s, gamma_from(hinv, v_matrix(grads, *at)));
    }
    return CoefficientSet{coefficients_from_phi(s, phi, grads, hinv), std::move(s), at};
}

/// Parses a criterion token. `L:@file` needs a loader for the matrix file;
/// `V` and bare `c` need the problem. Both are supplied by the caller.
template <class LoadMatrix>
CriterionSpec parse_criterion(std::string_view token, const RiskProblem* problem, LoadMatrix&& load_matrix) {
    auto parse_list = [&](std::string_view body) {
        Vector out;
        std::size_t pos = 0;
        while (pos <= body.size()) {
            const std::size_t comma = body.find(',', pos);
            const std::string_view item = body.substr(pos, comma == std::string_view::npos ? body.npos : comma - pos);
            double v = 0.0;
            const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
            if (item.empty() || res.ec != std::errc{} || res.ptr != item.data() + item.size())
                throw Error(ErrorKind::InvalidInput, "bad number '" + std::string(item) + "' in criterion token");
            out.push_back(v);
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        return out;
    };
    if (token == "A") return CriterionSpec::a_opt();
    if (token == "D") return CriterionSpec::d_opt();
    if (token == "E") return CriterionSpec::e_opt();
    if (token == "d-er") return CriterionSpec::distance_opt(DispersionKind::ER);
    if (token == "d-kl") return CriterionSpec::distance_opt(DispersionKind::KL);
    if (token == "d-s") return CriterionSpec::distance_opt(DispersionKind::Sandwich);
    if (token == "V") {
        if (!problem) throw Error(ErrorKind::InvalidInput, "V-optimality needs a model");
        return v_criterion(*problem);
    }
    if (token == "c") {
        // Bare "c" targets the first parameter.
        if (!problem) throw Error(ErrorKind::InvalidInput, "c without a vector needs a model");
        Vector e1(problem->dim(), 0.0);
        e1[0] = 1.0;
        return CriterionSpec::c_opt(std::move(e1));
    }
    if (token.starts_with("c:")) return CriterionSpec::c_opt(parse_list(token.substr(2)));
    if (token.starts_with("phi:")) {
        const Vector q = parse_list(token.substr(4));
        if (q.size() != 1) throw Error(ErrorKind::InvalidInput, "phi:<q> takes one number");
        return CriterionSpec::phi_q(q[0]);
    }
    if (token.starts_with("L:@")) return CriterionSpec::l_opt(load_matrix(std::string(token.substr(3))));
    throw Error(ErrorKind::InvalidInput, "unknown criterion token '" + std::string(token) + "'");
}

}  // namespace osd
