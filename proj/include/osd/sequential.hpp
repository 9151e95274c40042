#pragma once

// K-stage subsampling: a uniform first stage, then per stage an anticipated
// optimal scheme built from the current pooled estimate and an auxiliary
// model refreshed from everything sampled so far.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "osd/anticipated.hpp"
#include "osd/covariance.hpp"
#include "osd/criteria.hpp"
#include "osd/error.hpp"
#include "osd/io.hpp"
#include "osd/mat_kernel.hpp"
#include "osd/optimizer.hpp"
#include "osd/risk.hpp"
#include "osd/rng.hpp"
#include "osd/sampling.hpp"

namespace osd {

struct AuxConfig {
    bool deflate = false;         // logistic: use h_ii (1 - h_ii)
    double sigma_floor = 1e-6;    // lognormal residual SD floor
    double eigen_floor = 1e-8;    // finpop dispersion floor, absolute and relative to the top eigenvalue
    double tol = 1e-10;           // pooled fit tolerance
    int max_iter = 100;
    SolverOptions solver{};
};

struct StageRecord {
    int stage = 0;
    double batch = 0.0;          // n_k
    double cumulative = 0.0;     // m_k = n_1 + ... + n_k
    SamplingScheme scheme;
    DrawResult draw;
    Vector theta_hat;
    SolveStatus status = SolveStatus::Converged;
    double objective = std::numeric_limits<double>::quiet_NaN();  // anticipated criterion value; NaN at stage 1
};

/// Auxiliary predictions for the unsampled outcomes.
struct AuxPrediction {
    Vector yhat;                     // lognormal: predicted log y
    Vector sigma;                    // lognormal: residual SD per unit
    Matrix yhat_m;                   // finpop: predicted outcome rows
    std::vector<SymMatrix> sigma_m;  // finpop: one shared dispersion matrix
    std::vector<std::string> warnings;
};

/// Units and weights of the pooled risk m_k^-1 sum_j n_j lhat_j: unit i of
/// stage j carries (n_j / m_k) S_ji / mu_ji.
inline std::vector<UnitWeight> pooled_units(std::span<const StageRecord> records) {
    if (records.empty()) throw Error(ErrorKind::InvalidInput, "no stages to pool");
    double m = 0.0;
    for (const auto& r : records) m += r.batch;
    std::vector<UnitWeight> units;
    for (const auto& r : records) {
        const double share = r.batch / m;
        for (const auto& u : hansen_hurwitz_units(r.draw.counts, r.scheme)) units.push_back({u.index, share * u.weight});
    }
    return units;
}

/// Starting point computed from sampled outcomes only.
inline Vector sample_theta_init(const RiskProblem& pr, std::span<const UnitWeight> units) {
    Vector t(pr.dim(), 0.0);
    double total = 0.0;
    for (const auto& u : units) total += u.weight;
    if (!(total > 0.0)) throw Error(ErrorKind::EmptySample, "no units selected");
    switch (pr.kind()) {
        case ModelKind::FinPop:
            for (const auto& u : units)
                for (std::size_t j = 0; j < pr.dim(); ++j) t[j] += u.weight * pr.matrix()(u.index, j) / total;
            break;
        case ModelKind::LogNormal: {
            double wsum = 0.0, eta = 0.0;
            for (const auto& u : units) {
                wsum += u.weight * pr.weights()[u.index];
                eta += u.weight * pr.weights()[u.index] * pr.response()[u.index];
            }
            eta /= wsum;
            double var = 0.0;
            for (const auto& u : units) {
                const double r = pr.response()[u.index] - eta;
                var += u.weight * pr.weights()[u.index] * r * r;
            }
            t[0] = eta;
            t[1] = std::sqrt(var / wsum);
            if (!(t[1] > 0.0)) t[1] = 1.0;
            break;
        }
        case ModelKind::QbLogit: break;
    }
    return t;
}

inline Vector pooled_estimate(std::span<const StageRecord> records, const RiskProblem& pr,
                              std::optional<Vector> init = std::nullopt, double tol = 1e-10, int max_iter = 100) {
    const auto units = pooled_units(records);
    if (units.empty()) throw Error(ErrorKind::EmptySample, "no units selected across stages");
    const Vector start = init ? *init : sample_theta_init(pr, units);
    return fit_units(pr, units, start, tol, max_iter).theta0;
}

namespace detail {

/// Distinct sampled unit indices across all stages, in index order.
inline std::vector<std::size_t> sampled_ids(std::span<const StageRecord> records, std::size_t N) {
    std::vector<char> seen(N, 0);
    for (const auto& r : records)
        for (std::size_t i = 0; i < N; ++i)
            if (r.draw.counts[i] > 0) seen[i] = 1;
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < N; ++i)
        if (seen[i]) ids.push_back(i);
    return ids;
}

/// Least squares via the normal equations; nullopt when X^T X is not positive definite.
inline std::optional<Vector> ols(const Matrix& x, std::span<const double> y) {
    SymMatrix xtx(x.cols());
    Vector xty(x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        xtx.add_outer(x.row(i), 1.0);
        for (std::size_t j = 0; j < x.cols(); ++j) xty[j] += x(i, j) * y[i];
    }
    if (x.rows() <= x.cols()) return std::nullopt;
    const EigenPair e = sym_eigen(xtx);
    if (!(e.min() > 1e-10 * e.max())) return std::nullopt;
    return cholesky_solve(*cholesky(xtx), xty);
}

inline SymMatrix clamp_spectrum(const SymMatrix& s, double floor_rel) {
    const EigenPair e = sym_eigen(s);
    const double lo = std::max(floor_rel, floor_rel * std::max(e.max(), 0.0));
    return spectral_apply(e, [&](double x) { return std::max(x, lo); });
}

}  // namespace detail

/// Refits the auxiliary model on every unit sampled so far.
///   lognormal: OLS of log y on [1, z]; sigma = pooled residual SD (floored)
///   qblogit:   nothing to fit, leverages come from theta_hat
///   finpop:    per-group sampled means; pooled within-group covariance
inline AuxPrediction update_aux(std::span<const StageRecord> records, const RiskProblem& pr, const AuxConfig& cfg = {}) {
    if (records.empty()) throw Error(ErrorKind::InvalidInput, "auxiliary update needs a fitted stage");
    const std::size_t N = pr.size();
    const auto ids = detail::sampled_ids(records, N);
    if (ids.empty()) throw Error(ErrorKind::EmptySample, "no units sampled");
    AuxPrediction out;
    switch (pr.kind()) {
        case ModelKind::LogNormal: {
            const std::size_t k = pr.aux().cols();
            Matrix x(ids.size(), 1 + k);
            Vector y(ids.size());
            for (std::size_t r = 0; r < ids.size(); ++r) {
                x(r, 0) = 1.0;
                for (std::size_t j = 0; j < k; ++j) x(r, 1 + j) = pr.aux()(ids[r], j);
                y[r] = pr.response()[ids[r]];
            }
            std::optional<Vector> beta = k ? detail::ols(x, y) : std::nullopt;
            std::size_t used = 1 + k;
            if (!beta) {
                if (k) out.warnings.push_back("auxiliary regression is degenerate; using the global mean");
                double mean = 0.0;
                for (double v : y) mean += v / static_cast<double>(y.size());
                beta = Vector(1 + k, 0.0);
                (*beta)[0] = mean;
                used = 1;
            }
            double rss = 0.0;
            for (std::size_t r = 0; r < ids.size(); ++r) {
                const double res = y[r] - dot(x.row(r), *beta);
                rss += res * res;
            }
            const double dof = ids.size() > used ? static_cast<double>(ids.size() - used) : static_cast<double>(ids.size());
            const double sd = std::max(std::sqrt(rss / dof), cfg.sigma_floor);
            out.yhat.resize(N);
            out.sigma.assign(N, sd);
            for (std::size_t i = 0; i < N; ++i) {
                double v = (*beta)[0];
                for (std::size_t j = 0; j < k; ++j) v += (*beta)[1 + j] * pr.aux()(i, j);
                out.yhat[i] = v;
            }
            break;
        }
        case ModelKind::QbLogit: break;
        case ModelKind::FinPop: {
            const std::size_t p = pr.dim();
            const auto groups = pr.groups();
            Vector global(p, 0.0);
            for (std::size_t i : ids)
                for (std::size_t j = 0; j < p; ++j) global[j] += pr.matrix()(i, j) / static_cast<double>(ids.size());
            std::map<int, std::pair<Vector, std::size_t>> gmean;
            if (!groups.empty()) {
                for (std::size_t i : ids) {
                    auto& [sum, count] = gmean.try_emplace(groups[i], Vector(p, 0.0), 0).first->second;
                    for (std::size_t j = 0; j < p; ++j) sum[j] += pr.matrix()(i, j);
                    ++count;
                }
                for (auto& [g, entry] : gmean)
                    for (double& v : entry.first) v /= static_cast<double>(entry.second);
            }
            auto predict = [&](std::size_t i) -> const Vector& {
                if (!groups.empty()) {
                    auto it = gmean.find(groups[i]);
                    if (it != gmean.end()) return it->second.first;
                }
                return global;
            };
            SymMatrix within(p);
            Vector d(p);
            for (std::size_t i : ids) {
                const Vector& c = predict(i);
                for (std::size_t j = 0; j < p; ++j) d[j] = pr.matrix()(i, j) - c[j];
                within.add_outer(d, 1.0);
            }
            const std::size_t n_groups = groups.empty() ? 1 : gmean.size();
            if (ids.size() > n_groups) {
                within *= 1.0 / static_cast<double>(ids.size() - n_groups);
            } else {
                out.warnings.push_back("too few sampled units per group; using the global covariance");
                within = SymMatrix(p);
                for (std::size_t i : ids) {
                    for (std::size_t j = 0; j < p; ++j) d[j] = pr.matrix()(i, j) - global[j];
                    within.add_outer(d, 1.0 / static_cast<double>(ids.size()));
                }
            }
            out.sigma_m = {detail::clamp_spectrum(within, cfg.eigen_floor)};
            out.yhat_m = Matrix(N, p);
            for (std::size_t i = 0; i < N; ++i) {
                const Vector& c = predict(i);
                for (std::size_t j = 0; j < p; ++j) out.yhat_m(i, j) = c[j];
            }
            break;
        }
    }
    return out;
}

/// Anticipated gradient set at theta for the model's auxiliary predictions.
inline GradientSet anticipated_set(const RiskProblem& pr, const AuxPrediction& aux, std::span<const double> theta,
                                   const AuxConfig& cfg = {}) {
    switch (pr.kind()) {
        case ModelKind::LogNormal: return lognormal_anticipated(pr.weights(), aux.yhat, aux.sigma, theta);
        case ModelKind::QbLogit: return logit_anticipated(pr.matrix(), theta, cfg.deflate);
        case ModelKind::FinPop: return finpop_anticipated(pr.weights(), aux.yhat_m, aux.sigma_m, theta);
    }
    throw Error(ErrorKind::InvalidInput, "unknown model kind");
}

/// Stage k draws with seed derive_seed(seed, k). A fit failure aborts with
/// the records so far attached to the error message; `partial` receives them.
inline std::vector<StageRecord> run_k_stages(const RiskProblem& pr, const CriterionSpec& spec, DesignFamily family,
                                             const std::vector<double>& batches, std::uint64_t seed,
                                             const AuxConfig& cfg = {},
                                             std::vector<StageRecord>* partial = nullptr) {
    if (batches.empty()) throw Error(ErrorKind::InvalidInput, "need at least one stage");
    std::vector<StageRecord> records;
    records.reserve(batches.size());
    double m = 0.0;
    for (std::size_t k = 0; k < batches.size(); ++k) {
        const double n = batches[k];
        StageRecord rec{static_cast<int>(k + 1), n, m + n, uniform_scheme(pr.size(), n, family), {}, {},
                        SolveStatus::Converged, std::numeric_limits<double>::quiet_NaN()};
        if (k > 0) {
            const AuxPrediction aux = update_aux(records, pr, cfg);
            const GradientSet g = anticipated_set(pr, aux, records.back().theta_hat, cfg);
            const SolveTrace tr = fixed_point_solve(spec, g, family, n, std::nullopt, cfg.solver);
            if (tr.status == SolveStatus::Infeasible)
                throw Error(ErrorKind::Infeasible, "stage " + std::to_string(k + 1) + ": " + tr.message);
            rec.scheme = tr.final_scheme;
            rec.status = tr.status;
            rec.objective = tr.final_objective();
        }
        rec.draw = draw(rec.scheme, derive_seed(seed, k + 1));
        records.push_back(rec);
        try {
            const std::optional<Vector> init = k > 0 ? std::optional<Vector>(records[k - 1].theta_hat) : std::nullopt;
            records.back().theta_hat = pooled_estimate(records, pr, init, cfg.tol, cfg.max_iter);
        } catch (const Error& e) {
            records.pop_back();
            if (partial) *partial = records;
            throw Error(e.kind(), "stage " + std::to_string(k + 1) + ": " + e.what(), e.value());
        }
        m += n;
    }
    if (partial) *partial = records;
    return records;
}

inline std::string stage_log_csv(const std::vector<StageRecord>& records, const std::vector<std::string>& names,
                                 const std::string& scheme_stem = "stage_") {
    std::ostringstream out;
    out << "stage,m_k";
    for (const auto& n : names) out << ',' << n;
    out << ",objective,scheme_file\n";
    for (const auto& r : records) {
        out << r.stage << ',' << format_double(r.cumulative);
        for (double t : r.theta_hat) out << ',' << format_double(t);
        out << ',';
        if (std::isfinite(r.objective)) out << format_double(r.objective);
        out << ',' << scheme_stem << r.stage << "_scheme.csv\n";
    }
    return out.str();
}

struct LearningCurve {
    Vector mean_error;  // mean ||theta_hat^(k) - theta0|| per stage
    int replications = 0;
    int failures = 0;

    double final_over_first() const { return mean_error.back() / mean_error.front(); }
};

/// Replication r uses master seed derive_seed(seed, 1000003 + r).
inline LearningCurve learning_curve(const RiskProblem& pr, const CriterionSpec& spec, DesignFamily family,
                                    const std::vector<double>& batches, std::uint64_t seed, int R,
                                    std::span<const double> theta0, const AuxConfig& cfg = {}) {
    if (R < 1) throw Error(ErrorKind::InvalidInput, "need at least one replication");
    LearningCurve lc;
    lc.mean_error.assign(batches.size(), 0.0);
    for (int r = 0; r < R; ++r) {
        std::vector<StageRecord> recs;
        try {
            recs = run_k_stages(pr, spec, family, batches, derive_seed(seed, 1000003ULL + static_cast<std::uint64_t>(r)), cfg);
        } catch (const Error&) {
            ++lc.failures;
            continue;
        }
        for (std::size_t k = 0; k < recs.size(); ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < theta0.size(); ++j) s += std::pow(recs[k].theta_hat[j] - theta0[j], 2);
            lc.mean_error[k] += std::sqrt(s);
        }
        ++lc.replications;
    }
    if (lc.replications == 0) throw Error(ErrorKind::UnreliableEstimate, "every replication failed");
    for (double& e : lc.mean_error) e /= lc.replications;
    return lc;
}

inline std::string learning_curve_csv(const LearningCurve& lc, const std::vector<double>& batches) {
    std::ostringstream out;
    out << "stage,m_k,mean_error,ratio_to_first\n";
    double m = 0.0;
    for (std::size_t k = 0; k < lc.mean_error.size(); ++k) {
        m += batches[k];
        out << k + 1 << ',' << format_double(m) << ',' << format_double(lc.mean_error[k]) << ','
            << format_double(lc.mean_error[k] / lc.mean_error.front()) << '\n';
    }
    return out.str();
}

}  // namespace osd
