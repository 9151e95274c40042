#include <gtest/gtest.h>

#include <cmath>

#include "osd/mat_kernel.hpp"
#include "support.hpp"

using namespace osd;
using osd::testing::max_abs_diff;

namespace {

Matrix reconstruct(const EigenPair& e) {
    const std::size_t p = e.dim();
    Matrix out(p, p);
    for (std::size_t k = 0; k < p; ++k)
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j) out(i, j) += e.values[k] * e.vectors(i, k) * e.vectors(j, k);
    return out;
}

}  // namespace

TEST(SymMatrix, ConstructionIsExactlySymmetric) {
    SymMatrix s(Matrix{{1.0, 0.3}, {0.1, 2.0}});
    EXPECT_EQ(s(0, 1), s(1, 0));
    EXPECT_DOUBLE_EQ(s(0, 1), 0.2);
    EXPECT_THROW(SymMatrix(0), Error);
}

TEST(SymEigen, Identity) {
    const EigenPair e = sym_eigen(SymMatrix::identity(3));
    for (double v : e.values) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(SymEigen, DiagonalGivesAxisVectors) {
    const EigenPair e = sym_eigen(SymMatrix{{4.0, 0.0}, {0.0, 1.0}});
    EXPECT_DOUBLE_EQ(e.values[0], 4.0);
    EXPECT_DOUBLE_EQ(e.values[1], 1.0);
    EXPECT_DOUBLE_EQ(e.vectors(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(e.vectors(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(e.vectors(1, 1), 1.0);
}

TEST(SymEigen, TwoByTwoClosedForm) {
    const EigenPair e = sym_eigen(SymMatrix{{2.0, 1.0}, {1.0, 2.0}});
    EXPECT_NEAR(e.values[0], 3.0, 1e-14);
    EXPECT_NEAR(e.values[1], 1.0, 1e-14);
    const double r = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(e.vectors(0, 0), r, 1e-14);
    EXPECT_NEAR(e.vectors(1, 0), r, 1e-14);
    EXPECT_NEAR(e.vectors(0, 1), r, 1e-14);
    EXPECT_NEAR(e.vectors(1, 1), -r, 1e-14);
}

TEST(SymEigen, RejectsNonFinite) {
    SymMatrix m = SymMatrix::identity(2);
    m.set(0, 1, std::nan(""));
    try {
        sym_eigen(m);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
    }
}

TEST(SymEigen, RandomReconstructionAndOrthonormality) {
    CounterRng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t p = 2 + rng.below(5);
        const SymMatrix m = osd::testing::random_symmetric(rng, p);
        const EigenPair e = sym_eigen(m);
        for (std::size_t k = 1; k < p; ++k) EXPECT_GE(e.values[k - 1], e.values[k]);
        EXPECT_LE(max_abs_diff(reconstruct(e), m.matrix()), 1e-10 * m.frobenius());
        const Matrix qtq = e.vectors.transpose() * e.vectors;
        EXPECT_LE(max_abs_diff(qtq, Matrix::identity(p)), 1e-10);
        for (std::size_t k = 0; k < p; ++k) {
            for (std::size_t i = 0; i < p; ++i) {
                if (std::abs(e.vectors(i, k)) > 1e-12) {
                    EXPECT_GT(e.vectors(i, k), 0.0);
                    break;
                }
            }
        }
    }
}

TEST(PsdFactor, IdentityAndDiagonal) {
    EXPECT_EQ(psd_factor(SymMatrix::identity(3)), Matrix::identity(3));
    const Matrix l = psd_factor(SymMatrix{{4.0, 0.0}, {0.0, 9.0}});
    EXPECT_LE(max_abs_diff(l * l.transpose(), Matrix{{4.0, 0.0}, {0.0, 9.0}}), 1e-14);
    EXPECT_DOUBLE_EQ(l(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(l(1, 1), 3.0);
}

TEST(PsdFactor, RankOneFallsBackToEigenRoot) {
    const Vector v{1.0, 2.0};
    const SymMatrix m = SymMatrix::outer(v);
    const Matrix l = psd_factor(m);
    EXPECT_LE(max_abs_diff(l * l.transpose(), m.matrix()), 1e-9 * m.frobenius());
    EXPECT_NEAR(std::abs(l(0, 1)) + std::abs(l(1, 1)), 0.0, 1e-7);
}

TEST(PsdFactor, RejectsIndefinite) {
    try {
        psd_factor(SymMatrix{{1.0, 0.0}, {0.0, -1.0}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotPSD);
    }
}

TEST(PsdFactor, RandomGramRoundTrip) {
    CounterRng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t p = 2 + rng.below(5);
        const std::size_t k = 1 + rng.below(p + 1);  // includes rank-deficient cases
        const SymMatrix m = osd::testing::random_gram(rng, p, k);
        const Matrix l = psd_factor(m);
        EXPECT_LE(max_abs_diff(l * l.transpose(), m.matrix()), 1e-9 * m.frobenius());
    }
}

TEST(SpdInverse, Examples) {
    EXPECT_LE(max_abs_diff(spd_inverse(SymMatrix::identity(3)).matrix(), Matrix::identity(3)), 0.0);
    const SymMatrix d = spd_inverse(SymMatrix{{2.0, 0.0}, {0.0, 4.0}});
    EXPECT_DOUBLE_EQ(d(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(d(1, 1), 0.25);
    const SymMatrix inv = spd_inverse(SymMatrix{{2.0, 1.0}, {1.0, 2.0}});
    EXPECT_LE(max_abs_diff(inv.matrix(), Matrix{{2.0 / 3, -1.0 / 3}, {-1.0 / 3, 2.0 / 3}}), 1e-15);
}

TEST(SpdInverse, SingularCarriesEigenvalue) {
    try {
        spd_inverse(SymMatrix{{1.0, 1.0}, {1.0, 1.0}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingularMatrix);
        EXPECT_NEAR(e.value(), 0.0, 1e-12);
    }
}

TEST(SpdInverse, RandomProductIsIdentity) {
    CounterRng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = 2 + rng.below(6);
        const SymMatrix m = osd::testing::random_gram(rng, p, p + 2, 0.1);
        EXPECT_LE(max_abs_diff(m * spd_inverse(m), Matrix::identity(p)), 1e-8);
    }
}

TEST(TraceProd, Examples) {
    EXPECT_DOUBLE_EQ(trace_prod(SymMatrix::identity(3), SymMatrix::identity(3)), 3.0);
    EXPECT_DOUBLE_EQ(trace_prod(SymMatrix{{1.0, 0.0}, {0.0, 2.0}}, SymMatrix{{3.0, 0.0}, {0.0, 4.0}}), 11.0);
    EXPECT_DOUBLE_EQ(trace_prod(SymMatrix{{1.0, 1.0}, {1.0, 1.0}}, SymMatrix{{2.0, 0.0}, {0.0, 2.0}}), 4.0);
    EXPECT_THROW(trace_prod(SymMatrix::identity(2), SymMatrix::identity(3)), Error);
}

TEST(TraceProd, MatchesExplicitProduct) {
    CounterRng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t p = 1 + rng.below(6);
        const SymMatrix a = osd::testing::random_symmetric(rng, p);
        const SymMatrix b = osd::testing::random_symmetric(rng, p);
        const Matrix ab = a * b;
        double tr = 0.0;
        for (std::size_t i = 0; i < p; ++i) tr += ab(i, i);
        EXPECT_NEAR(trace_prod(a, b), tr, 1e-12 * std::max(1.0, std::abs(tr)));
    }
}

TEST(SymPower, SquareRootSquaresBack) {
    CounterRng rng(21);
    const SymMatrix m = osd::testing::random_gram(rng, 4, 6, 0.5);
    const SymMatrix r = sym_power(m, 0.5);
    EXPECT_LE(max_abs_diff(r * r, m.matrix()), 1e-10 * m.frobenius());
    EXPECT_THROW(sym_power(SymMatrix{{1.0, 1.0}, {1.0, 1.0}}, -0.5), Error);
}

TEST(LogDet, MatchesEigenvalues) {
    const SymMatrix m{{2.0, 1.0}, {1.0, 2.0}};
    EXPECT_NEAR(log_det(m), std::log(3.0), 1e-14);
}
