#pragma once

// Relative efficiencies, efficiency tables, brute-force and Monte-Carlo
// oracles, and the linear re-parameterization harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "osd/covariance.hpp"
#include "osd/criteria.hpp"
#include "osd/error.hpp"
#include "osd/io.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/optimizer.hpp"
#include "osd/risk.hpp"
#include "osd/sampling.hpp"

namespace osd {

/// Phi(Gamma(mu*)) / Phi(Gamma(mu)).
inline double rel_efficiency(const CriterionSpec& spec, const SymMatrix& gamma_at_mu, const SymMatrix& gamma_at_opt) {
    const double denom = phi_value(spec, gamma_at_mu);
    if (!(denom > 0.0) || !std::isfinite(denom))
        throw Error(ErrorKind::DegenerateCriterion, "criterion value at the evaluated scheme is not positive", denom);
    return phi_value(spec, gamma_at_opt) / denom;
}

struct EfficiencyTable {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    std::vector<std::vector<std::optional<double>>> cells;  // empty when the row did not produce a scheme
    std::vector<int> iterations;
    std::vector<SolveStatus> status;
    std::vector<std::string> notes;

    /// Labels such as c:1,0 are written as c:1;0 since the format has no quoting.
    static std::string csv_cell(std::string s) {
        std::replace(s.begin(), s.end(), ',', ';');
        return s;
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "row_criterion,iterations,status";
        for (const auto& c : cols) out << ',' << csv_cell(c) << "_eff";
        out << '\n';
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out << csv_cell(rows[i]) << ',' << iterations[i] << ',' << to_string(status[i]);
            for (const auto& v : cells[i]) {
                out << ',';
                if (v) out << format_double(*v);
            }
            out << '\n';
        }
        return out.str();
    }

    std::string to_text() const {
        std::size_t w0 = std::string("criterion").size();
        for (const auto& r : rows) w0 = std::max(w0, r.size());
        std::size_t wc = 10;
        for (const auto& c : cols) wc = std::max(wc, c.size() + 6);
        std::ostringstream out;
        out << std::left << std::setw(static_cast<int>(w0) + 2) << "criterion" << std::setw(7) << "iter"
            << std::setw(19) << "status";
        for (const auto& c : cols) out << std::right << std::setw(static_cast<int>(wc)) << (c + "-eff");
        out << '\n';
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out << std::left << std::setw(static_cast<int>(w0) + 2) << rows[i] << std::setw(7) << iterations[i]
                << std::setw(19) << to_string(status[i]);
            for (const auto& v : cells[i]) {
                out << std::right << std::setw(static_cast<int>(wc));
                if (v) {
                    std::ostringstream cell;
                    cell << std::fixed << std::setprecision(4) << *v;
                    out << cell.str();
                } else {
                    out << "";
                }
            }
            out << '\n';
        }
        return out.str();
    }
};

/// Solves every row criterion, then evaluates each row scheme under every
/// column criterion relative to that column's own optimal scheme (solved
/// with the same options). Rows that diverge or fail keep blank cells.
/// The default options run each solve to stationarity so that the column
/// references are optima rather than early-stopped iterates.
inline EfficiencyTable efficiency_table(const GradientSet& grads, DesignFamily family, double n,
                                        const std::vector<CriterionSpec>& row_specs,
                                        const std::vector<CriterionSpec>& col_specs,
                                        const SolverOptions& opt = SolverOptions::tight()) {
    EfficiencyTable t;
    const SymMatrix hinv = hessian_inverse(grads);
    auto gamma_at = [&](const SamplingScheme& s) { return gamma_from(hinv, v_matrix(grads, s)); };

    // One solve per distinct criterion, shared between rows and columns.
    std::map<std::string, SolveTrace> solved;
    auto solve = [&](const CriterionSpec& spec) -> const SolveTrace& {
        const std::string key = label(spec);
        auto it = solved.find(key);
        if (it != solved.end()) return it->second;
        SolveTrace tr{SolveStatus::Infeasible, 0, 0.0, {}, uniform_scheme(grads.units(), n, family), 0, {}, 0.0, {}};
        try {
            tr = fixed_point_solve(spec, grads, family, n, std::nullopt, opt);
        } catch (const Error& e) {
            tr.message = e.what();
        }
        return solved.emplace(key, std::move(tr)).first->second;
    };

    std::vector<CriterionSpec> cols;
    std::vector<std::optional<SymMatrix>> col_opt;
    for (const auto& c : col_specs) {
        cols.push_back(bind(c, grads));
        t.cols.push_back(label(c));
        const SolveTrace& tr = solve(cols.back());
        if (tr.status == SolveStatus::Converged) col_opt.push_back(gamma_at(tr.final_scheme));
        else col_opt.push_back(std::nullopt);
    }

    for (const auto& r : row_specs) {
        t.rows.push_back(label(r));
        std::vector<std::optional<double>> row(cols.size());
        const SolveTrace& tr = solve(bind(r, grads));
        t.iterations.push_back(tr.iterations);
        t.status.push_back(tr.status);
        t.notes.push_back(tr.message);
        if (tr.status == SolveStatus::Converged || tr.status == SolveStatus::MaxIter) {
            const SymMatrix g = gamma_at(tr.final_scheme);
            for (std::size_t j = 0; j < cols.size(); ++j) {
                if (!col_opt[j]) continue;
                try {
                    row[j] = rel_efficiency(cols[j], g, *col_opt[j]);
                } catch (const Error&) {
                }
            }
        }
        t.cells.push_back(std::move(row));
    }
    return t;
}

/// Grid oracle for the L-objective sum_i c_i / mu_i (PO-WOR: sum c_i (1/mu_i - 1))
/// over compositions of `grid_steps` into N positive parts, followed by one
/// pass of exact pairwise exchanges. Small N only.
inline SamplingScheme brute_force_l_optimal(std::span<const double> c, double n, DesignFamily family, int grid_steps) {
    const std::size_t N = c.size();
    if (N == 0 || N > 5) throw Error(ErrorKind::Unsupported, "brute force oracle supports 1 <= N <= 5");
    if (grid_steps < static_cast<int>(N)) throw Error(ErrorKind::InvalidInput, "grid too coarse for N units");
    const bool capped = family == DesignFamily::PoissonWithoutReplacement;
    if (capped && n > static_cast<double>(N)) throw Error(ErrorKind::InvalidBudget, "PO-WOR budget exceeds N", n);
    auto objective = [&](const Vector& mu) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += c[i] * variance_factor(family, mu[i]);
        return s;
    };
    const double unit = n / static_cast<double>(grid_steps);
    Vector best;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<int> k(N, 1);
    // Enumerate k_1..k_{N-1} >= 1 with the remainder going to k_N.
    auto visit = [&](auto&& self, std::size_t pos, int remaining) -> void {
        if (pos + 1 == N) {
            if (remaining < 1) return;
            k[pos] = remaining;
            Vector mu(N);
            for (std::size_t i = 0; i < N; ++i) {
                mu[i] = unit * k[i];
                if (capped && mu[i] > 1.0 + 1e-12) return;
            }
            const double v = objective(mu);
            if (v < best_val) {
                best_val = v;
                best = mu;
            }
            return;
        }
        const int slots_left = static_cast<int>(N - pos - 1);
        for (int kk = 1; kk <= remaining - slots_left; ++kk) {
            k[pos] = kk;
            self(self, pos + 1, remaining - kk);
        }
    };
    visit(visit, 0, grid_steps);
    if (best.empty()) throw Error(ErrorKind::Infeasible, "no grid point satisfies the design constraints");

    // One exchange pass: for each pair, re-split mu_i + mu_j optimally.
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i + 1; j < N; ++j) {
            const double s = best[i] + best[j];
            const double si = std::sqrt(c[i]), sj = std::sqrt(c[j]);
            if (si + sj == 0.0) continue;
            double mi = s * si / (si + sj);
            if (capped) {
                mi = std::min(mi, 1.0);
                mi = std::max(mi, s - 1.0);
            }
            const double mj = s - mi;
            if (mi <= 0.0 || mj <= 0.0) continue;
            Vector cand = best;
            cand[i] = mi;
            cand[j] = mj;
            const double v = objective(cand);
            if (v < best_val) {
                best_val = v;
                best = cand;
            }
        }
    }
    for (double& m : best)
        if (capped) m = std::min(m, 1.0);
    return validate_scheme(best, family, n);
}

/// sum_i c_i * factor(mu_i): the L-objective tr(Gamma L L^T) up to H and L.
inline double l_objective(std::span<const double> c, const SamplingScheme& s) {
    double v = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) v += c[i] * variance_factor(s.family(), s.mu(i));
    return v;
}

struct MonteCarloResult {
    SymMatrix covariance;   // sample covariance of the replicate estimates
    Vector mean;            // mean replicate estimate
    std::vector<Vector> estimates;
    int replicates = 0;
    int failures = 0;
};

/// Draw + weighted fit repeated R times with per-replicate derived seeds.
inline MonteCarloResult monte_carlo_covariance(const RiskProblem& problem, const SamplingScheme& scheme, int R,
                                               std::uint64_t seed, std::span<const double> theta_start,
                                               double tol = 1e-10, int max_iter = 100) {
    if (R < 1000) throw Error(ErrorKind::InvalidInput, "Monte-Carlo covariance needs at least 1000 replicates", R);
    const std::size_t p = problem.dim();
    MonteCarloResult out{SymMatrix(p), Vector(p, 0.0), {}, R, 0};
    out.estimates.reserve(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
        const DrawResult d = draw(scheme, derive_seed(seed, static_cast<std::uint64_t>(r)));
        try {
            out.estimates.push_back(weighted_fit(problem, d.counts, scheme, theta_start, tol, max_iter).theta0);
        } catch (const Error&) {
            ++out.failures;
        }
    }
    if (static_cast<double>(out.failures) > 0.05 * R)
        throw Error(ErrorKind::UnreliableEstimate,
                    std::to_string(out.failures) + " of " + std::to_string(R) + " replicate fits failed", out.failures);
    if (out.estimates.empty()) return out;
    // Accumulate around the first estimate so identical replicates give an exact zero.
    const double m = static_cast<double>(out.estimates.size());
    const Vector& ref = out.estimates.front();
    Vector shift(p, 0.0);
    for (const auto& e : out.estimates)
        for (std::size_t j = 0; j < p; ++j) shift[j] += (e[j] - ref[j]) / m;
    for (std::size_t j = 0; j < p; ++j) out.mean[j] = ref[j] + shift[j];
    if (out.estimates.size() > 1) {
        Vector d(p);
        for (const auto& e : out.estimates) {
            for (std::size_t j = 0; j < p; ++j) d[j] = (e[j] - ref[j]) - shift[j];
            out.covariance.add_outer(d, 1.0 / (m - 1.0));
        }
    }
    return out;
}

struct UnbiasednessCheck {
    double mean = 0.0;
    double se = 0.0;
    double target = 0.0;
    double z() const { return se > 0.0 ? (mean - target) / se : (mean == target ? 0.0 : INFINITY); }
};

/// Mean and standard error of the Hansen-Hurwitz risk estimate at theta.
inline UnbiasednessCheck hh_unbiasedness(const RiskProblem& problem, const SamplingScheme& scheme,
                                         std::span<const double> theta, int R, std::uint64_t seed) {
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < R; ++r) {
        const double v = hh_risk(problem, draw(scheme, derive_seed(seed, static_cast<std::uint64_t>(r))).counts, scheme, theta);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / R;
    const double var = std::max(sumsq / R - mean * mean, 0.0) * R / (R - 1.0);
    return {mean, std::sqrt(var / R), problem.full_risk(theta)};
}

/// Linear map theta -> A theta. The transformed logistic problem uses the
/// model matrix X A^-1 so its fitted parameter is A theta0.
struct Reparameterization {
    Matrix a;

    explicit Reparameterization(Matrix m) : a(std::move(m)) {
        if (a.rows() != a.cols() || a.rows() == 0) throw Error(ErrorKind::InvalidInput, "map must be square");
        const double d = determinant(a);
        if (!(std::abs(d) > 1e-10)) throw Error(ErrorKind::InvalidInput, "map is singular", d);
    }
    const Matrix& jacobian() const noexcept { return a; }

    static double determinant(Matrix m) {
        const std::size_t n = m.rows();
        double det = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t piv = k;
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
            if (m(piv, k) == 0.0) return 0.0;
            if (piv != k) {
                for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
                det = -det;
            }
            det *= m(k, k);
            for (std::size_t i = k + 1; i < n; ++i) {
                const double f = m(i, k) / m(k, k);
                for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
            }
        }
        return det;
    }

    Matrix inverse() const {
        const std::size_t n = a.rows();
        Matrix m = a;
        Matrix inv = Matrix::identity(n);
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t piv = k;
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(m(i, k)) > std::abs(m(piv, k))) piv = i;
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(m(k, j), m(piv, j));
                std::swap(inv(k, j), inv(piv, j));
            }
            const double d = m(k, k);
            for (std::size_t j = 0; j < n; ++j) {
                m(k, j) /= d;
                inv(k, j) /= d;
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (i == k) continue;
                const double f = m(i, k);
                if (f == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    m(i, j) -= f * m(k, j);
                    inv(i, j) -= f * inv(k, j);
                }
            }
        }
        return inv;
    }
};

struct InvarianceResult {
    SamplingScheme original;
    SamplingScheme transformed;
    double sup_diff = 0.0;
};

inline InvarianceResult reparam_invariance(const RiskProblem& problem, const Reparameterization& map,
                                           const CriterionSpec& spec, DesignFamily family, double n,
                                           const SolverOptions& opt = {}) {
    if (problem.kind() != ModelKind::QbLogit)
        throw Error(ErrorKind::Unsupported, "re-parameterization harness uses the logistic model");
    if (map.a.rows() != problem.dim()) throw Error(ErrorKind::InvalidInput, "map dimension does not match the model");
    const RiskProblem moved = qblogit_problem(problem.matrix() * map.inverse(), problem.response());
    const FitResult f0 = fit_full(problem, Vector(problem.dim(), 0.0), 1e-12, 200);
    const FitResult f1 = fit_full(moved, Vector(moved.dim(), 0.0), 1e-12, 200);
    const SolveTrace a = fixed_point_solve(spec, gradient_set(problem, f0.theta0), family, n, std::nullopt, opt);
    const SolveTrace b = fixed_point_solve(spec, gradient_set(moved, f1.theta0), family, n, std::nullopt, opt);
    double sup = 0.0;
    for (std::size_t i = 0; i < a.final_scheme.size(); ++i)
        sup = std::max(sup, std::abs(a.final_scheme.mu(i) - b.final_scheme.mu(i)));
    return {a.final_scheme, b.final_scheme, sup};
}

}  // namespace osd
