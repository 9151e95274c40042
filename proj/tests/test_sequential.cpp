#include <gtest/gtest.h>

#include <cmath>

#include "osd/io.hpp"
#include "osd/sequential.hpp"
#include "osd/synth.hpp"

using namespace osd;

namespace {

const auto WR = DesignFamily::PoissonWithReplacement;

StageRecord census_stage(std::size_t N, int k) {
    const auto s = uniform_scheme(N, static_cast<double>(N), DesignFamily::PoissonWithoutReplacement);
    return StageRecord{k, static_cast<double>(N), static_cast<double>(N * k), s, draw(s, 1), {}, SolveStatus::Converged, NAN};
}

}  // namespace

TEST(Pooled, SingleStageIsWeightedFit) {
    const RiskProblem pr = make_problem(synth_lognormal(800, 4));
    const auto recs = run_k_stages(pr, CriterionSpec::a_opt(), WR, {60.0}, 99);
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].scheme, uniform_scheme(800, 60.0, WR));
    EXPECT_EQ(recs[0].draw, draw(uniform_scheme(800, 60.0, WR), derive_seed(99, 1)));
    const auto units = hansen_hurwitz_units(recs[0].draw.counts, recs[0].scheme);
    const FitResult f = weighted_fit(pr, recs[0].draw.counts, recs[0].scheme, sample_theta_init(pr, units));
    EXPECT_EQ(recs[0].theta_hat, f.theta0);
    EXPECT_EQ(recs[0].cumulative, 60.0);
}

TEST(Pooled, TwoCensusStagesRecoverFullFit) {
    const RiskProblem pr = make_problem(synth_lognormal(300, 5));
    const std::vector<StageRecord> recs = {census_stage(300, 1), census_stage(300, 2)};
    const Vector theta = pooled_estimate(recs, pr);
    const Vector full = fit_full(pr).theta0;
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(theta[j], full[j], 1e-9);
}

TEST(Pooled, FinpopMatchesClosedFormWeightedMean) {
    const Dataset d = synth_finpop(200, 6);
    const RiskProblem pr = make_problem(d);
    const auto s1 = uniform_scheme(200, 20.0, WR);
    const auto s2 = validate_scheme(Vector(200, 0.2), WR, 40.0);
    std::vector<StageRecord> recs = {
        {1, 20.0, 20.0, s1, draw(s1, 11), {}, SolveStatus::Converged, NAN},
        {2, 40.0, 60.0, s2, draw(s2, 12), {}, SolveStatus::Converged, NAN},
    };
    const Vector theta = pooled_estimate(recs, pr);
    // Minimizer of sum_u a_u w_i ||y_i - theta||^2: the a_u w_i weighted mean.
    Vector num(3, 0.0);
    double den = 0.0;
    for (const auto& r : recs) {
        for (std::size_t i = 0; i < 200; ++i) {
            if (!r.draw.counts[i]) continue;
            const double a = (r.batch / 60.0) * static_cast<double>(r.draw.counts[i]) / r.scheme.mu(i) * d.w[i];
            den += a;
            for (std::size_t j = 0; j < 3; ++j) num[j] += a * d.y(i, j);
        }
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(theta[j], num[j] / den, 1e-10 * std::max(1.0, std::abs(theta[j])));
}

TEST(Aux, NoAuxiliaryColumnsGiveConstantPredictions) {
    Dataset d = synth_lognormal(500, 7);
    d.x = Matrix(500, 0);
    const RiskProblem pr = make_problem(d);
    const auto recs = run_k_stages(pr, CriterionSpec::a_opt(), WR, {50.0}, 3);
    const AuxPrediction aux = update_aux(recs, pr);
    for (double v : aux.yhat) EXPECT_EQ(v, aux.yhat[0]);
    // With a constant prediction, c-optimal anticipated allocation is proportional to w.
    const GradientSet g = anticipated_set(pr, aux, recs[0].theta_hat);
    const CoefficientSet c = coefficients(CriterionSpec::c_opt({1.0, 0.0}), g);
    for (std::size_t i = 1; i < 500; ++i) EXPECT_NEAR(std::sqrt(c.c[i] / c.c[0]), d.w[i] / d.w[0], 1e-9);
}

TEST(Aux, SigmaFloorKeepsCoefficientsPositive) {
    Dataset d = synth_lognormal(200, 8);
    for (std::size_t i = 0; i < 200; ++i) d.y(i, 0) = 2.0;
    d.x = Matrix(200, 0);
    const RiskProblem pr = make_problem(d);
    const auto s = uniform_scheme(200, 30.0, WR);
    std::vector<StageRecord> recs = {{1, 30.0, 30.0, s, draw(s, 4), {std::log(2.0), 1e-3}, SolveStatus::Converged, NAN}};
    const AuxPrediction aux = update_aux(recs, pr);
    for (double v : aux.sigma) EXPECT_EQ(v, 1e-6);
    const GradientSet g = anticipated_set(pr, aux, Vector{std::log(2.0), 1e-6});
    EXPECT_TRUE(coefficients(CriterionSpec::c_opt({1.0, 0.0}), g).feasible());
}

TEST(Aux, FinpopDispersionIsFlooredOnRankOneResiduals) {
    // Outcomes lie on a line: the within-group covariance has rank one.
    const std::size_t N = 120;
    Matrix y(N, 3);
    Vector w(N, 1.0);
    std::vector<int> g(N);
    CounterRng rng(9);
    for (std::size_t i = 0; i < N; ++i) {
        const double t = rng.normal();
        y(i, 0) = t;
        y(i, 1) = 2.0 * t;
        y(i, 2) = -t;
        g[i] = static_cast<int>(i % 3);
    }
    RiskProblem pr = finpop_problem(y, w);
    pr.set_groups(g);
    const auto s = uniform_scheme(N, 40.0, WR);
    std::vector<StageRecord> recs = {{1, 40.0, 40.0, s, draw(s, 10), {0.0, 0.0, 0.0}, SolveStatus::Converged, NAN}};
    const AuxPrediction aux = update_aux(recs, pr);
    ASSERT_EQ(aux.sigma_m.size(), 1u);
    EXPECT_GE(min_eigenvalue(aux.sigma_m[0]), 1e-8 * (1.0 - 1e-12));
    EXPECT_TRUE(cholesky(aux.sigma_m[0]).has_value());
}

TEST(Stages, SecondStageMatchesQuadraticFormExpectation) {
    const Dataset d = synth_finpop(1500, 12);
    const RiskProblem pr = make_problem(d);
    const CriterionSpec spec = CriterionSpec::distance_opt(DispersionKind::Sandwich);
    const auto recs = run_k_stages(pr, spec, WR, {80.0, 80.0}, 21);
    ASSERT_EQ(recs.size(), 2u);

    // Recompute the stage-2 scheme from the stage-1 record alone.
    const Vector& theta = recs[0].theta_hat;
    std::map<int, std::pair<Vector, int>> means;
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!recs[0].draw.counts[i]) continue;
        ids.push_back(i);
        auto& e = means.try_emplace(d.groups[i], Vector(3, 0.0), 0).first->second;
        for (std::size_t j = 0; j < 3; ++j) e.first[j] += d.y(i, j);
        ++e.second;
    }
    for (auto& [k, e] : means)
        for (double& v : e.first) v /= e.second;
    Vector global(3, 0.0);
    for (std::size_t i : ids)
        for (std::size_t j = 0; j < 3; ++j) global[j] += d.y(i, j) / static_cast<double>(ids.size());
    auto yhat = [&](std::size_t i) {
        auto it = means.find(d.groups[i]);
        return it == means.end() ? global : it->second.first;
    };
    SymMatrix sigma(3);
    for (std::size_t i : ids) {
        const Vector m = yhat(i);
        Vector r(3);
        for (std::size_t j = 0; j < 3; ++j) r[j] = d.y(i, j) - m[j];
        sigma.add_outer(r, 1.0 / static_cast<double>(ids.size() - means.size()));
    }
    ASSERT_GT(min_eigenvalue(sigma), 1e-6);
    SymMatrix v(3);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Vector m = yhat(i);
        Vector r(3);
        for (std::size_t j = 0; j < 3; ++j) r[j] = m[j] - theta[j];
        v.add_outer(r, d.w[i] * d.w[i]);
        v += sigma * (d.w[i] * d.w[i]);
    }
    const SymMatrix vinv = spd_inverse(v);
    Vector c(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Vector m = yhat(i);
        Vector r(3);
        for (std::size_t j = 0; j < 3; ++j) r[j] = m[j] - theta[j];
        c[i] = d.w[i] * d.w[i] * (quad_form(vinv, r) + trace_prod(vinv, sigma));
    }
    const SamplingScheme expect = l_optimal_scheme(c, 80.0, WR);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(recs[1].scheme.mu(i), expect.mu(i), 1e-10);
}

TEST(Stages, SchemesPositiveAndReplayIsBitwise) {
    for (ModelKind k : {ModelKind::FinPop, ModelKind::LogNormal, ModelKind::QbLogit}) {
        const RiskProblem pr = make_problem(synth(k, 1200, 13));
        for (const auto& spec : {CriterionSpec::a_opt(), CriterionSpec::d_opt()}) {
            const std::vector<double> batches = {100.0, 60.0, 60.0};
            const auto a = run_k_stages(pr, spec, DesignFamily::PoissonWithoutReplacement, batches, 5);
            const auto b = run_k_stages(pr, spec, DesignFamily::PoissonWithoutReplacement, batches, 5);
            ASSERT_EQ(a.size(), 3u);
            double m = 0.0;
            for (std::size_t s = 0; s < a.size(); ++s) {
                m += batches[s];
                EXPECT_EQ(a[s].cumulative, m);
                EXPECT_EQ(a[s].scheme, b[s].scheme);
                EXPECT_EQ(a[s].draw, b[s].draw);
                EXPECT_EQ(a[s].theta_hat, b[s].theta_hat);
                for (double mu : a[s].scheme.mu()) EXPECT_GT(mu, 0.0);
            }
            // theta_hat^(k) minimizes the k-stage pooled risk.
            for (std::size_t s = 1; s < a.size(); ++s) {
                const auto units = pooled_units(std::span<const StageRecord>(a.data(), s + 1));
                EXPECT_LE(pr.risk(units, a[s].theta_hat), pr.risk(units, a[s - 1].theta_hat) + 1e-12) << to_token(k);
                EXPECT_LE(norm_inf(pr.gradient_sum(units, a[s].theta_hat)), 1e-10);
            }
        }
    }
}

TEST(Stages, StageLogFormat) {
    const RiskProblem pr = make_problem(synth_finpop(300, 14));
    const auto recs = run_k_stages(pr, CriterionSpec::a_opt(), WR, {30.0, 30.0}, 1);
    const std::string csv = stage_log_csv(recs, pr.parameter_names());
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "stage,m_k,theta1,theta2,theta3,objective,scheme_file");
    EXPECT_NE(csv.find("\n1,30,"), std::string::npos);
    EXPECT_NE(csv.find(",stage_2_scheme.csv\n"), std::string::npos);
}

TEST(Stages, EmptyBatchListRejected) {
    const RiskProblem pr = make_problem(synth_finpop(50, 1));
    EXPECT_THROW(run_k_stages(pr, CriterionSpec::a_opt(), WR, {}, 1), Error);
}

TEST(Stages, FitFailureKeepsPartialRecords) {
    // A tiny logistic pool: the first stages cannot identify 8 parameters.
    const RiskProblem pr = make_problem(synth_logit(60, 2));
    std::vector<StageRecord> partial;
    try {
        run_k_stages(pr, CriterionSpec::a_opt(), WR, {2.0, 2.0}, 3, {}, &partial);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("stage 1"), std::string::npos) << e.what();
    }
    EXPECT_TRUE(partial.empty());
}

TEST(LearningCurve, ErrorShrinksAcrossStages) {
    const RiskProblem pr = make_problem(synth_finpop(3000, 15));
    const Vector theta0 = fit_full(pr).theta0;
    const LearningCurve lc =
        learning_curve(pr, CriterionSpec::a_opt(), WR, {100.0, 100.0, 100.0, 100.0, 100.0}, 77, 40, theta0);
    EXPECT_EQ(lc.replications + lc.failures, 40);
    EXPECT_LT(lc.final_over_first(), 0.6);
    const std::string csv = learning_curve_csv(lc, {100.0, 100.0, 100.0, 100.0, 100.0});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "stage,m_k,mean_error,ratio_to_first");
}
