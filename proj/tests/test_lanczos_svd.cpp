#include <gtest/gtest.h>

#include <random>

#include "oracle.hpp"
#include "softimpute/lanczos_svd.hpp"

using namespace softimpute;

namespace {

SparsePlusLowRank dense_operator(const Matrix& a) {
    return SparsePlusLowRank(ObservedMatrix::from_dense(a), LowRankFactors::zero(a.rows(), a.cols()));
}

double orthonormality_error(const Matrix& q) {
    if (q.cols() == 0) return 0.0;
    return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

/// Explicit residuals max(||A v - d u||, ||A'u - d v||) per triplet.
Vector explicit_residuals(const SparsePlusLowRank& op, const LowRankFactors& f) {
    Vector out(f.rank());
    for (Index i = 0; i < f.rank(); ++i) {
        const Vector av = op.matvec(f.v().col(i)) - f.d()[i] * f.u().col(i);
        const Vector atu = op.rmatvec(f.u().col(i)) - f.d()[i] * f.v().col(i);
        out[i] = std::max(av.norm(), atu.norm());
    }
    return out;
}

SparsePlusLowRank random_operator(Index m, Index n, std::mt19937_64& rng) {
    const Index count = std::uniform_int_distribution<Index>(1, m * n)(rng);
    const auto obs = oracle::random_observed(m, n, count, rng);
    const Index r = std::uniform_int_distribution<Index>(0, std::min<Index>({m, n, 5}))(rng);
    Vector d(r);
    for (Index i = 0; i < r; ++i) d[i] = 3.0 / static_cast<double>(i + 1);
    return build_iteration_operator(obs.x, oracle::random_factors(m, n, d, rng));
}

}  // namespace

TEST(TruncatedSvd, DiagonalOperator) {
    Matrix a = Matrix::Zero(3, 3);
    a.diagonal() << 3.0, 2.0, 1.0;
    // Only the diagonal is observed.
    const SparsePlusLowRank op(ObservedMatrix(3, 3, {{0, 0, 3.0}, {1, 1, 2.0}, {2, 2, 1.0}}),
                               LowRankFactors::zero(3, 3));
    SvdRequest req;
    req.k = 2;
    const auto res = truncated_svd(op, req);
    EXPECT_NEAR(res.factors.d()[0], 3.0, 1e-12);
    EXPECT_NEAR(res.factors.d()[1], 2.0, 1e-12);
    // Sign convention makes the largest entry of each u positive.
    EXPECT_NEAR(res.factors.u()(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(res.factors.u()(1, 1), 1.0, 1e-12);
    EXPECT_NEAR(res.factors.v()(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(res.factors.v()(1, 1), 1.0, 1e-12);
}

TEST(TruncatedSvd, RankOne) {
    std::mt19937_64 rng(1);
    const Matrix u = oracle::random_orthonormal(12, 1, rng);
    const Matrix v = oracle::random_orthonormal(9, 1, rng);
    const auto op = dense_operator(5.0 * u * v.transpose());
    SvdRequest req;
    const auto res = truncated_svd(op, req);
    EXPECT_NEAR(res.factors.d()[0], 5.0, 1e-10);
}

TEST(TruncatedSvd, DenseMatchesJacobiOracle) {
    std::mt19937_64 rng(2);
    const Matrix a = oracle::random_matrix(40, 30, rng);
    const auto expected = oracle::jacobi_svd(a);
    SvdRequest req;
    req.k = 10;
    const auto res = truncated_svd(dense_operator(a), req);
    for (Index i = 0; i < 10; ++i) EXPECT_NEAR(res.factors.d()[i], expected.d[i], 1e-8);
    EXPECT_LE(orthonormality_error(res.factors.u()), 1e-8);
    EXPECT_LE(orthonormality_error(res.factors.v()), 1e-8);
}

TEST(TruncatedSvd, RestartedRunMatchesOracleAndReportsResiduals) {
    std::mt19937_64 rng(3);
    const auto obs = oracle::random_observed(300, 200, 6000, rng);
    const SparsePlusLowRank op(obs.x, LowRankFactors::zero(300, 200));
    const auto expected = oracle::jacobi_svd(obs.x.to_dense());
    SvdRequest req;
    req.k = 6;
    req.max_lanczos_dim = 20;
    req.tol = 1e-10;
    const auto res = truncated_svd(op, req);
    EXPECT_GT(res.restarts, 0);
    const double d1 = expected.d[0];
    for (Index i = 0; i < req.k; ++i) EXPECT_NEAR(res.factors.d()[i], expected.d[i], 1e-8 * d1);
    const Vector resid = explicit_residuals(op, res.factors);
    for (Index i = 0; i < req.k; ++i) EXPECT_LE(resid[i], 1e-10 * d1 * 1.01 + 1e-13);
    EXPECT_LE(orthonormality_error(res.factors.u()), 1e-8);
    EXPECT_LE(orthonormality_error(res.factors.v()), 1e-8);
}

TEST(TruncatedSvd, RepeatedSingularValuesAreAllFound) {
    Matrix a = Matrix::Zero(8, 6);
    a.diagonal() << 2.0, 2.0, 2.0, 1.0, 0.5, 0.25;
    SvdRequest req;
    req.k = 4;
    const auto res = truncated_svd(dense_operator(a), req);
    EXPECT_NEAR(res.factors.d()[0], 2.0, 1e-12);
    EXPECT_NEAR(res.factors.d()[1], 2.0, 1e-12);
    EXPECT_NEAR(res.factors.d()[2], 2.0, 1e-12);
    EXPECT_NEAR(res.factors.d()[3], 1.0, 1e-12);
}

TEST(TruncatedSvd, RankDeficientOperatorPadsWithZeros) {
    std::mt19937_64 rng(4);
    const auto z = oracle::random_factors(30, 20, (Vector(4) << 9.0, 4.0, 2.0, 1.0).finished(), rng);
    const auto op = dense_operator(z.to_dense());
    SvdRequest req;
    req.k = 10;
    const auto res = truncated_svd(op, req);
    for (Index i = 0; i < 4; ++i) EXPECT_NEAR(res.factors.d()[i], z.d()[i], 1e-10);
    for (Index i = 4; i < 10; ++i) EXPECT_LE(res.factors.d()[i], 1e-8 * 9.0);
    EXPECT_LE(orthonormality_error(res.factors.u()), 1e-8);
    EXPECT_LE(orthonormality_error(res.factors.v()), 1e-8);
}

TEST(TruncatedSvd, ZeroOperator) {
    const auto op = dense_operator(Matrix::Zero(5, 4));
    SvdRequest req;
    req.k = 2;
    const auto res = truncated_svd(op, req);
    EXPECT_EQ(res.factors.d()[0], 0.0);
    EXPECT_LE(orthonormality_error(res.factors.u()), 1e-8);
}

TEST(TruncatedSvd, WideOperator) {
    std::mt19937_64 rng(5);
    const Matrix a = oracle::random_matrix(15, 35, rng);
    const auto expected = oracle::jacobi_svd(a);
    SvdRequest req;
    req.k = 15;
    const auto res = truncated_svd(dense_operator(a), req);
    EXPECT_EQ(res.factors.rows(), 15);
    EXPECT_EQ(res.factors.cols(), 35);
    for (Index i = 0; i < 15; ++i) EXPECT_NEAR(res.factors.d()[i], expected.d[i], 1e-10);
    EXPECT_LE((res.factors.to_dense() - a).norm(), 1e-10);
}

TEST(TruncatedSvd, InvalidRequests) {
    const auto op = dense_operator(Matrix::Ones(3, 4));
    SvdRequest req;
    req.k = 0;
    EXPECT_THROW(truncated_svd(op, req), InvalidArgument);
    req.k = 4;
    EXPECT_THROW(truncated_svd(op, req), InvalidArgument);
    req.k = 1;
    req.tol = 0.0;
    EXPECT_THROW(truncated_svd(op, req), InvalidArgument);
}

TEST(TruncatedSvd, NonConvergenceCarriesBestEstimate) {
    std::mt19937_64 rng(6);
    const auto obs = oracle::random_observed(200, 150, 3000, rng);
    const SparsePlusLowRank op(obs.x, LowRankFactors::zero(200, 150));
    SvdRequest req;
    req.k = 8;
    req.max_lanczos_dim = 10;
    req.max_restarts = 0;
    req.tol = 1e-14;
    try {
        truncated_svd(op, req);
        FAIL() << "expected SvdNotConverged";
    } catch (const SvdNotConverged& e) {
        EXPECT_EQ(e.best().factors.rank(), 8);
        EXPECT_EQ(e.best().residuals.size(), 8);
        EXPECT_GT(e.best().factors.d()[0], 0.0);
    }
}

TEST(TruncatedSvd, DeterministicGivenSeed) {
    std::mt19937_64 rng(7);
    const auto op = random_operator(60, 45, rng);
    SvdRequest req;
    req.k = 7;
    req.max_lanczos_dim = 16;
    const auto a = truncated_svd(op, req);
    const auto b = truncated_svd(op, req);
    for (Index i = 0; i < req.k; ++i) EXPECT_EQ(a.factors.d()[i], b.factors.d()[i]);
    EXPECT_EQ(a.factors.u(), b.factors.u());
}

// Oracle equivalence and orthonormality over generated sparse-plus-low-rank operators.
TEST(TruncatedSvdProperties, OracleEquivalenceAndOrthonormality) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<Index> dim(1, 60);
    for (int trial = 0; trial < 40; ++trial) {
        const Index m = dim(rng), n = dim(rng);
        const auto op = random_operator(m, n, rng);
        const auto expected = oracle::jacobi_svd(op.to_dense());
        SvdRequest req;
        req.k = std::uniform_int_distribution<Index>(1, std::min(m, n))(rng);
        req.seed = rng();
        const auto res = truncated_svd(op, req);
        const double d1 = std::max(expected.d[0], 1e-300);
        for (Index i = 0; i < req.k; ++i)
            EXPECT_LE(std::abs(res.factors.d()[i] - expected.d[i]), 1e-8 * d1)
                << "trial " << trial << " (" << m << "x" << n << "), i = " << i;
        EXPECT_LE(orthonormality_error(res.factors.u()), 1e-8);
        EXPECT_LE(orthonormality_error(res.factors.v()), 1e-8);
    }
}

TEST(SvdAboveThreshold, StopsOnceBelowThreshold) {
    Matrix a = Matrix::Zero(6, 6);
    a.diagonal() << 5.0, 3.0, 1.0, 0.0, 0.0, 0.0;
    EscalationPolicy policy;
    policy.min_start = 1;
    const auto res = svd_above_threshold(dense_operator(a), 2.0, policy);
    ASSERT_GE(res.factors.rank(), 3);
    EXPECT_NEAR(res.factors.d()[0], 5.0, 1e-12);
    EXPECT_NEAR(res.factors.d()[1], 3.0, 1e-12);
    EXPECT_LE(res.factors.d()[res.factors.rank() - 1], 2.0);
    EXPECT_FALSE(res.capped);
}

TEST(SvdAboveThreshold, ThresholdAboveSpectrum) {
    std::mt19937_64 rng(9);
    const Matrix a = oracle::random_matrix(20, 10, rng);
    const double top = oracle::jacobi_svd(a).d[0];
    EscalationPolicy policy;
    const auto res = svd_above_threshold(dense_operator(a), 2.0 * top, policy);
    EXPECT_EQ(res.factors.rank(), 10);  // first probe, k = max(10, 0 + 2)
    EXPECT_LE(res.factors.d()[res.factors.rank() - 1], 2.0 * top);
}

TEST(SvdAboveThreshold, ZeroThresholdOnExactLowRank) {
    std::mt19937_64 rng(10);
    const auto z = oracle::random_factors(30, 20, (Vector(4) << 8.0, 6.0, 3.0, 2.0).finished(), rng);
    EscalationPolicy policy;
    policy.r_max = 10;
    const auto res = svd_above_threshold(dense_operator(z.to_dense()), 0.0, policy);
    ASSERT_GE(res.factors.rank(), 4);
    for (Index i = 4; i < res.factors.rank(); ++i) EXPECT_LE(res.factors.d()[i], 1e-8 * 8.0);
}

TEST(SvdAboveThreshold, CapIsFlagged) {
    std::mt19937_64 rng(11);
    const Matrix a = oracle::random_matrix(30, 30, rng) + 10.0 * Matrix::Identity(30, 30);
    EscalationPolicy policy;
    policy.r_max = 5;
    policy.min_start = 2;
    const auto res = svd_above_threshold(dense_operator(a), 0.1, policy);
    EXPECT_TRUE(res.capped);
    EXPECT_EQ(res.factors.rank(), 5);
    EXPECT_THROW(svd_above_threshold(dense_operator(a), -1.0, policy), InvalidArgument);
}

// Escalation soundness: never stops above lambda without the cap flag.
TEST(SvdAboveThresholdProperties, EscalationSoundness) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<Index> dim(2, 40);
    for (int trial = 0; trial < 30; ++trial) {
        const Index m = dim(rng), n = dim(rng);
        const auto op = random_operator(m, n, rng);
        const auto expected = oracle::jacobi_svd(op.to_dense());
        const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * expected.d[0];
        EscalationPolicy policy;
        policy.min_start = 1;
        policy.r_max = std::uniform_int_distribution<Index>(1, std::min(m, n))(rng);
        const auto res = svd_above_threshold(op, lambda, policy);
        const Index k = res.factors.rank();
        const bool reached = res.factors.d()[k - 1] <= lambda + policy.zero_tol * res.factors.d()[0];
        EXPECT_TRUE(reached || res.capped || k == std::min(m, n)) << "trial " << trial;
        if (res.capped) {
            EXPECT_EQ(k, policy.r_max);
        }
        // Every value above lambda is present.
        Index above = 0;
        while (above < expected.d.size() && expected.d[above] > lambda * (1 + 1e-9)) ++above;
        if (!res.capped) {
            EXPECT_GE(k, std::min(above, std::min(m, n)));
        }
    }
}
