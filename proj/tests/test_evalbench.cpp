#include <gtest/gtest.h>

#include <cmath>

#include "osd/evalbench.hpp"
#include "osd/synth.hpp"
#include "support.hpp"

using namespace osd;
namespace ot = osd::testing;

namespace {

const auto WR = DesignFamily::PoissonWithReplacement;
const auto WOR = DesignFamily::PoissonWithoutReplacement;

GradientSet fitted_gradients(const Dataset& d) {
    const RiskProblem pr = make_problem(d);
    return gradient_set(pr, fit_full(pr).theta0);
}

std::vector<CriterionSpec> battery() {
    return {CriterionSpec::a_opt(),      CriterionSpec::c_opt({1.0, 0.0}),
            CriterionSpec::d_opt(),      CriterionSpec::e_opt(),
            CriterionSpec::phi_q(0.5),   CriterionSpec::phi_q(5.0),
            CriterionSpec::phi_q(10.0),  CriterionSpec::distance_opt(DispersionKind::ER),
            CriterionSpec::distance_opt(DispersionKind::Sandwich)};
}

}  // namespace

TEST(RelEfficiency, Definition) {
    const SymMatrix g = SymMatrix::diagonal(Vector{2.0, 1.0});
    EXPECT_EQ(rel_efficiency(CriterionSpec::a_opt(), g, g), 1.0);
    EXPECT_DOUBLE_EQ(rel_efficiency(CriterionSpec::a_opt(), g * 2.0, g), 0.5);
    EXPECT_THROW(rel_efficiency(CriterionSpec::a_opt(), SymMatrix(2), g), Error);
    try {
        rel_efficiency(CriterionSpec::c_opt({0.0, 1.0}), SymMatrix::diagonal(Vector{1.0, 0.0}), g);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateCriterion);
    }
}

TEST(EfficiencyTable, SingleCell) {
    const GradientSet g = fitted_gradients(synth_lognormal(600, 1));
    const EfficiencyTable t = efficiency_table(g, WR, 10.0, {CriterionSpec::a_opt()}, {CriterionSpec::a_opt()});
    ASSERT_EQ(t.cells.size(), 1u);
    ASSERT_TRUE(t.cells[0][0].has_value());
    EXPECT_NEAR(*t.cells[0][0], 1.0, 1e-12);
    EXPECT_EQ(t.iterations[0], 1);
    EXPECT_EQ(t.to_csv(), "row_criterion,iterations,status,A_eff\nA,1,Converged,1\n");
}

TEST(EfficiencyTable, EmpiricalRiskDistanceMatchesAOnFinpop) {
    const GradientSet g = fitted_gradients(synth_finpop(1000, 2));
    const auto cols = battery();
    const EfficiencyTable t = efficiency_table(
        g, WOR, 10.0, {CriterionSpec::a_opt(), CriterionSpec::distance_opt(DispersionKind::ER)}, cols);
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[1], "d-er");
    for (std::size_t j = 0; j < cols.size(); ++j) {
        ASSERT_EQ(t.cells[0][j].has_value(), t.cells[1][j].has_value()) << t.cols[j];
        if (t.cells[0][j]) {
            EXPECT_NEAR(*t.cells[0][j], *t.cells[1][j], 1e-12) << t.cols[j];
        }
    }
    EXPECT_NEAR(*t.cells[1][0], 1.0, 1e-12);
}

TEST(EfficiencyTable, CTargetsAreMutuallyInefficient) {
    const GradientSet g = fitted_gradients(synth_lognormal(2000, 3));
    const std::vector<CriterionSpec> s = {CriterionSpec::c_opt({1.0, 0.0}), CriterionSpec::c_opt({0.0, 1.0})};
    const EfficiencyTable t = efficiency_table(g, WR, 20.0, s, s);
    EXPECT_NEAR(*t.cells[0][0], 1.0, 1e-9);
    EXPECT_NEAR(*t.cells[1][1], 1.0, 1e-9);
    EXPECT_LT(*t.cells[0][1], 0.95);
    EXPECT_LT(*t.cells[1][0], 0.95);
}

TEST(EfficiencyTable, CellsBoundedAndDiagonalOne) {
    for (ModelKind k : {ModelKind::FinPop, ModelKind::LogNormal, ModelKind::QbLogit}) {
        const GradientSet g = fitted_gradients(synth(k, 1000, 4));
        auto specs = battery();
        if (g.dim() != 2) specs[1] = CriterionSpec::c_opt(Vector(g.dim(), 1.0));
        for (auto fam : {WR, WOR}) {
            const EfficiencyTable t = efficiency_table(g, fam, 10.0, specs, specs);
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
                for (std::size_t j = 0; j < t.cols.size(); ++j) {
                    if (!t.cells[i][j]) continue;
                    EXPECT_LE(*t.cells[i][j], 1.0 + 1e-9) << to_token(k) << ' ' << t.rows[i] << '/' << t.cols[j];
                    EXPECT_GT(*t.cells[i][j], 0.0);
                }
                if (t.status[i] == SolveStatus::Converged) {
                    ASSERT_TRUE(t.cells[i][i].has_value()) << t.rows[i];
                    EXPECT_NEAR(*t.cells[i][i], 1.0, 1e-9) << to_token(k) << ' ' << t.rows[i];
                } else {
                    EXPECT_FALSE(t.cells[i][i].has_value() && t.status[i] != SolveStatus::MaxIter);
                }
            }
        }
    }
}

TEST(EfficiencyTable, TextLayoutHasOneLinePerRow) {
    const GradientSet g = fitted_gradients(synth_finpop(300, 5));
    const auto specs = battery();
    const EfficiencyTable t = efficiency_table(g, WR, 5.0, specs, specs);
    const std::string txt = t.to_text();
    EXPECT_EQ(static_cast<std::size_t>(std::count(txt.begin(), txt.end(), '\n')), specs.size() + 1);
    EXPECT_EQ(txt.rfind("criterion", 0), 0u);
    const std::string csv = t.to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "row_criterion,iterations,status,A_eff,c:1;0_eff,D_eff,E_eff,phi:0.5_eff,phi:5_eff,phi:10_eff,d-er_eff,d-s_eff");
}

TEST(BruteForce, UniformCoefficients) {
    const Vector c(4, 2.0);
    const SamplingScheme s = brute_force_l_optimal(c, 2.0, WR, 40);
    for (double m : s.mu()) EXPECT_NEAR(m, 0.5, 1e-12);
}

TEST(BruteForce, TwoUnitClosedForm) {
    const SamplingScheme s = brute_force_l_optimal(Vector{4.0, 1.0}, 1.0, WR, 30);
    EXPECT_NEAR(s.mu(0), 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(s.mu(1), 1.0 / 3.0, 1e-9);
}

TEST(BruteForce, CappedSolution) {
    const SamplingScheme s = brute_force_l_optimal(Vector{100.0, 1.0, 1.0, 1.0}, 2.0, WOR, 60);
    EXPECT_NEAR(s.mu(0), 1.0, 1e-9);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(s.mu(i), 1.0 / 3.0, 1e-9);
}

TEST(BruteForce, RejectsLargePopulations) {
    try {
        brute_force_l_optimal(Vector(6, 1.0), 2.0, WR, 12);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Unsupported);
    }
}

TEST(MonteCarlo, CensusHasNoVariance) {
    const RiskProblem pr = make_problem(synth_lognormal(100, 6));
    const Vector theta0 = fit_full(pr).theta0;
    const MonteCarloResult r = monte_carlo_covariance(pr, uniform_scheme(100, 100.0, WOR), 1000, 1, theta0);
    EXPECT_EQ(r.failures, 0);
    EXPECT_EQ(r.covariance.matrix().max_abs(), 0.0);
}

TEST(MonteCarlo, NeedsEnoughReplicates) {
    const RiskProblem pr = make_problem(synth_lognormal(100, 6));
    EXPECT_THROW(monte_carlo_covariance(pr, uniform_scheme(100, 10.0, WR), 999, 1, Vector{0.0, 1.0}), Error);
}

TEST(MonteCarlo, CovarianceTracksGamma) {
    const RiskProblem pr = make_problem(synth_lognormal(3000, 7));
    const Vector theta0 = fit_full(pr).theta0;
    const GradientSet g = gradient_set(pr, theta0);
    const SamplingScheme s = fixed_point_solve(CriterionSpec::a_opt(), g, WR, 300.0).final_scheme;
    const MonteCarloResult r = monte_carlo_covariance(pr, s, 2000, 8, theta0);
    const double ratio = r.covariance.trace() / gamma(g, s).gamma.trace();
    EXPECT_GT(ratio, 0.85);
    EXPECT_LT(ratio, 1.15);
}

TEST(HansenHurwitz, UnbiasedInEveryFamily) {
    const RiskProblem pr = make_problem(synth_lognormal(150, 9));
    CounterRng rng(10);
    const Vector mu_raw = ot::random_positive(rng, 150, 0.05, 0.6);
    double total = 0.0;
    for (double m : mu_raw) total += m;
    for (auto fam : {WR, WOR, DesignFamily::Multinomial}) {
        Vector mu = mu_raw;
        double n = total;
        if (fam == DesignFamily::Multinomial) {
            n = std::round(total);
            for (double& m : mu) m *= n / total;
        }
        const SamplingScheme s = validate_scheme(mu, fam, n);
        for (const Vector& theta : {Vector{0.5, 1.0}, Vector{1.0, 0.7}, Vector{-0.2, 2.0}}) {
            const UnbiasednessCheck u = hh_unbiasedness(pr, s, theta, 20000, 11);
            EXPECT_LT(std::abs(u.z()), 4.0) << to_token(fam) << " mean " << u.mean << " target " << u.target;
        }
    }
}

TEST(Reparameterization, RejectsSingularMaps) {
    Matrix a(2, 2);
    a(0, 0) = 1.0;
    a(0, 1) = 2.0;
    a(1, 0) = 2.0;
    a(1, 1) = 4.0;
    EXPECT_THROW(Reparameterization{a}, Error);
    EXPECT_THROW(Reparameterization{Matrix(2, 3)}, Error);
}

TEST(Reparameterization, InverseAndJacobian) {
    CounterRng rng(12);
    const Matrix a = ot::random_matrix(rng, 5, 5) + Matrix::identity(5) * 3.0;
    const Reparameterization r(a);
    EXPECT_LT(ot::max_abs_diff(r.inverse() * a, Matrix::identity(5)), 1e-12);
    EXPECT_EQ(r.jacobian(), a);
}

TEST(Reparameterization, IdentityLeavesSchemeUnchanged) {
    const RiskProblem pr = make_problem(synth_logit(800, 13));
    const auto r = reparam_invariance(pr, Reparameterization(Matrix::identity(pr.dim())), CriterionSpec::a_opt(), WR, 10.0);
    EXPECT_EQ(r.sup_diff, 0.0);
}

TEST(Reparameterization, DistanceCriteriaInvariantAOptimalityNot) {
    const RiskProblem pr = make_problem(synth_logit(800, 14));
    const std::size_t p = pr.dim();
    CounterRng rng(15);
    const Reparameterization random_map(ot::random_matrix(rng, p, p) + Matrix::identity(p) * 3.0);
    for (auto kind : {DispersionKind::ER, DispersionKind::Sandwich}) {
        const auto r = reparam_invariance(pr, random_map, CriterionSpec::distance_opt(kind), WR, 10.0);
        EXPECT_LE(r.sup_diff, 1e-8);
    }
    Matrix stretch = Matrix::identity(p);
    stretch(0, 0) = 100.0;
    const auto a = reparam_invariance(pr, Reparameterization(stretch), CriterionSpec::a_opt(), WR, 10.0);
    EXPECT_GE(a.sup_diff, 1e-3);
}

TEST(Reparameterization, OnlyForLogisticModel) {
    const RiskProblem pr = make_problem(synth_finpop(50, 1));
    try {
        reparam_invariance(pr, Reparameterization(Matrix::identity(3)), CriterionSpec::a_opt(), WR, 5.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Unsupported);
    }
}
