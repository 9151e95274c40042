#pragma once

// Closed-form L-optimal schemes (square-root allocation with the PO-WOR
// capping loop) and the fixed-point iteration for non-linear criteria.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osd/covariance.hpp"
#include "osd/criteria.hpp"
#include "osd/error.hpp"
#include "osd/sampling.hpp"

namespace osd {

struct LOptimalResult {
    SamplingScheme scheme;
    std::size_t capped = 0;  // |E|, units pinned at mu = 1 (PO-WOR)
    int passes = 0;          // capping passes executed
};

inline std::string format_ids(const std::vector<std::size_t>& ids, std::size_t limit = 20) {
    std::string s;
    for (std::size_t k = 0; k < ids.size() && k < limit; ++k) s += (k ? "," : "") + std::to_string(ids[k]);
    if (ids.size() > limit) s += ",...";
    return s;
}

/// mu_i proportional to sqrt(c_i) summing to n; under PO-WOR units whose
/// allocation reaches 1 are capped and the remaining budget redistributed.
inline LOptimalResult l_optimal(std::span<const double> c, double n, DesignFamily family) {
    const std::size_t N = c.size();
    if (N == 0) throw Error(ErrorKind::InvalidInput, "empty coefficient vector");
    if (!(n > 0.0)) throw Error(ErrorKind::InvalidBudget, "budget n must be positive", n);
    if (family == DesignFamily::PoissonWithoutReplacement && n > static_cast<double>(N))
        throw Error(ErrorKind::InvalidBudget, "PO-WOR budget exceeds population size", n);

    double cmax = 0.0;
    for (double x : c) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw Error(ErrorKind::InvalidInput, "coefficients must be finite and >= 0", x);
        cmax = std::max(cmax, x);
    }
    std::vector<std::size_t> zeros;
    const double floor = numeric_config().zero_coef_rel_tol * cmax;
    for (std::size_t i = 0; i < N; ++i)
        if (!(c[i] > floor)) zeros.push_back(i);
    if (!zeros.empty())
        throw Error(ErrorKind::Infeasible, "feasible solution does not exist; zero coefficients at ids " + format_ids(zeros),
                    static_cast<double>(zeros.size()));

    Vector sc(N);
    for (std::size_t i = 0; i < N; ++i) sc[i] = std::sqrt(c[i] / cmax);

    Vector mu(N);
    LOptimalResult out{uniform_scheme(1, 1.0, DesignFamily::PoissonWithReplacement), 0, 0};
    if (family == DesignFamily::PoissonWithoutReplacement && n == static_cast<double>(N)) {
        std::fill(mu.begin(), mu.end(), 1.0);
        out.capped = N;
        out.scheme = validate_scheme(std::move(mu), family, n);
        return out;
    }

    std::vector<char> capped(N, 0);
    std::size_t n_capped = 0;
    for (;;) {
        double total = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            if (!capped[i]) total += sc[i];
        const double budget = n - static_cast<double>(n_capped);
        bool over = false;
        for (std::size_t i = 0; i < N; ++i) {
            mu[i] = capped[i] ? 1.0 : budget * sc[i] / total;
            if (!capped[i] && mu[i] > 1.0) over = true;
        }
        if (family != DesignFamily::PoissonWithoutReplacement || !over) break;
        ++out.passes;
        for (std::size_t i = 0; i < N; ++i) {
            if (!capped[i] && mu[i] >= 1.0) {
                capped[i] = 1;
                ++n_capped;
            }
        }
        if (out.passes > static_cast<int>(N)) throw Error(ErrorKind::InvalidInput, "capping loop did not terminate");
    }
    out.capped = n_capped;
    out.scheme = validate_scheme(std::move(mu), family, n);
    return out;
}

inline SamplingScheme l_optimal_scheme(std::span<const double> c, double n, DesignFamily family) {
    return l_optimal(c, n, family).scheme;
}
inline SamplingScheme l_optimal_scheme(const CoefficientSet& c, double n, DesignFamily family) {
    return l_optimal(c.c, n, family).scheme;
}

/// Largest violation of the stationarity conditions for `scheme` given c,
/// measured in units of max sqrt(c). PO-WR / MULTI: proportionality to
/// sqrt(c). PO-WOR: cap mu <= 1, proportionality on the uncapped set, and
/// sqrt(c_i) >= sqrt(c_j) / mu_j for capped i and uncapped j.
inline double stationarity_residual(const SamplingScheme& scheme, std::span<const double> c) {
    const std::size_t N = scheme.size();
    if (c.size() != N) throw Error(ErrorKind::InvalidInput, "coefficient length does not match scheme");
    double cmax = 0.0;
    for (double x : c) cmax = std::max(cmax, x);
    if (!(cmax > 0.0)) return std::numeric_limits<double>::infinity();
    Vector sc(N);
    for (std::size_t i = 0; i < N; ++i) sc[i] = std::sqrt(std::max(c[i], 0.0) / cmax);
    const double n = scheme.budget();
    double worst = 0.0;
    if (scheme.family() != DesignFamily::PoissonWithoutReplacement) {
        double total = 0.0;
        for (double x : sc) total += x;
        for (std::size_t i = 0; i < N; ++i) worst = std::max(worst, std::abs(scheme.mu(i) * total / n - sc[i]));
        return worst;
    }
    constexpr double cap_tol = 1e-12;
    double total_u = 0.0;
    std::size_t n_capped = 0;
    double min_capped = std::numeric_limits<double>::infinity();
    double max_ratio_u = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double m = scheme.mu(i);
        worst = std::max(worst, m - 1.0);
        if (m >= 1.0 - cap_tol) {
            ++n_capped;
            min_capped = std::min(min_capped, sc[i]);
        } else {
            total_u += sc[i];
            max_ratio_u = std::max(max_ratio_u, sc[i] / m);
        }
    }
    const double budget_u = n - static_cast<double>(n_capped);
    if (n_capped < N && budget_u > 0.0)
        for (std::size_t i = 0; i < N; ++i)
            if (scheme.mu(i) < 1.0 - cap_tol)
                worst = std::max(worst, std::abs(scheme.mu(i) * total_u / budget_u - sc[i]));
    if (n_capped > 0 && n_capped < N) worst = std::max(worst, max_ratio_u - min_capped);
    return worst;
}

inline double stationarity_residual(const SamplingScheme& scheme, const CoefficientSet& c) {
    return stationarity_residual(scheme, std::span<const double>(c.c));
}

enum class SolveStatus { Converged, Diverged, MaxIter, Infeasible, NotDifferentiable };

inline std::string_view to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "Converged";
        case SolveStatus::Diverged: return "Diverged";
        case SolveStatus::MaxIter: return "MaxIter";
        case SolveStatus::Infeasible: return "Infeasible";
        case SolveStatus::NotDifferentiable: return "NotDifferentiable";
    }
    return "?";
}

struct SolveTrace {
    SolveStatus status = SolveStatus::MaxIter;
    int iterations = 0;
    double initial_objective = 0.0;
    Vector objective_per_iter;  // Phi(Gamma(mu_t)), t = 1..iterations
    SamplingScheme final_scheme;
    std::size_t capped_set_size = 0;
    std::vector<std::size_t> zero_ids;  // Infeasible only
    double stationarity = std::numeric_limits<double>::quiet_NaN();
    std::string message;

    /// Objective at final_scheme. A diverged run keeps the scheme before the increase.
    double final_objective() const {
        const std::size_t k = objective_per_iter.size();
        if (status == SolveStatus::Diverged) return k >= 2 ? objective_per_iter[k - 2] : initial_objective;
        return k ? objective_per_iter.back() : initial_objective;
    }
};

struct SolverOptions {
    int max_iter = 100;
    double eps = 1e-3;
    double divergence_slack = 1e-12;

    /// Runs to numerical stationarity; used for efficiency references.
    static SolverOptions tight() { return {1000, 1e-12, 1e-12}; }
};

/// Fixed-point iteration: linearize Phi at mu_{t-1}, take the L-optimal
/// scheme for L_t L_t^T = phi(Gamma(mu_{t-1})), stop on relative improvement
/// below eps or on any increase. Linear criteria take exactly one step.
inline SolveTrace fixed_point_solve(const CriterionSpec& spec_in, const GradientSet& grads, DesignFamily family, double n,
                                    const std::optional<SamplingScheme>& mu0_in = std::nullopt,
                                    const SolverOptions& opt = {}) {
    const CriterionSpec spec = bind(spec_in, grads);
    const SymMatrix hinv = hessian_inverse(grads);
    const std::size_t N = grads.units();
    SamplingScheme mu_prev = mu0_in ? *mu0_in : uniform_scheme(N, n, family);
    if (mu_prev.size() != N) throw Error(ErrorKind::InvalidInput, "initial scheme length does not match gradients");
    if (mu_prev.family() != family) throw Error(ErrorKind::InvalidInput, "initial scheme has a different design family");

    auto gamma_at = [&](const SamplingScheme& s) { return gamma_from(hinv, v_matrix(grads, s)); };

    SolveTrace tr{SolveStatus::MaxIter, 0, 0.0, {}, mu_prev, 0, {}, std::numeric_limits<double>::quiet_NaN(), {}};
    SymMatrix g_prev = gamma_at(mu_prev);
    double prev = phi_value(spec, g_prev);
    tr.initial_objective = prev;
    Vector c_final;

    const int T = spec.is_linear() ? 1 : opt.max_iter;
    for (int t = 1; t <= T; ++t) {
        SymMatrix phi;
        try {
            phi = phi_matrix_derivative(spec, g_prev);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NotDifferentiable) throw;
            tr.status = SolveStatus::NotDifferentiable;
            tr.final_scheme = mu_prev;
            tr.message = e.what();
            return tr;
        }
        const Vector c = coefficients_from_phi(spec, phi, grads, hinv);
        LOptimalResult lo{mu_prev, 0, 0};
        try {
            lo = l_optimal(c, n, family);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Infeasible) throw;
            tr.status = SolveStatus::Infeasible;
            tr.final_scheme = mu_prev;
            tr.zero_ids = CoefficientSet{c, spec, std::nullopt}.zero_ids();
            tr.message = t == 1 && spec.is_linear() ? e.what() : "unfeasible solution encountered during iteration";
            return tr;
        }
        SymMatrix g_t = gamma_at(lo.scheme);
        const double obj = phi_value(spec, g_t);
        tr.objective_per_iter.push_back(obj);
        tr.iterations = t;
        if (spec.is_linear()) {
            tr.status = SolveStatus::Converged;
            tr.final_scheme = lo.scheme;
            tr.capped_set_size = lo.capped;
            c_final = c;
            break;
        }
        if (obj > prev + opt.divergence_slack) {
            tr.status = SolveStatus::Diverged;
            tr.final_scheme = mu_prev;
            tr.message = "objective increased";
            break;
        }
        const double rel = (prev - obj) / std::abs(prev);
        mu_prev = lo.scheme;
        g_prev = std::move(g_t);
        tr.final_scheme = lo.scheme;
        tr.capped_set_size = lo.capped;
        if (rel < opt.eps) {
            tr.status = SolveStatus::Converged;
            break;
        }
        prev = obj;
    }

    if (c_final.empty()) {
        try {
            c_final = coefficients_from_phi(spec, phi_matrix_derivative(spec, gamma_at(tr.final_scheme)), grads, hinv);
        } catch (const Error&) {
            return tr;
        }
    }
    tr.stationarity = stationarity_residual(tr.final_scheme, c_final);
    return tr;
}

}  // namespace osd
