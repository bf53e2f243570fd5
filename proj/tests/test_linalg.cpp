#include "oracles.hpp"

#include <gvidgp/linalg.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace gvidgp;

TEST(Cholesky, IdentityFactorsToIdentity) {
    const auto f = cholesky_psd<double>(Eigen::MatrixXd::Identity(3, 3), 0.0);
    EXPECT_TRUE(f.lower.isApprox(Eigen::MatrixXd::Identity(3, 3), 0.0));
    EXPECT_EQ(f.jitter, 0.0);
}

TEST(Cholesky, HandCheckedTwoByTwo) {
    Eigen::MatrixXd a(2, 2);
    a << 4, 2, 2, 3;
    const auto f = cholesky_psd<double>(a, 0.0);
    EXPECT_DOUBLE_EQ(f.lower(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(f.lower(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(f.lower(0, 1), 0.0);
    EXPECT_NEAR(f.lower(1, 1), std::sqrt(2.0), 1e-15);
}

TEST(Cholesky, ReconstructsRandomLowRankPlusJitter) {
    std::mt19937_64 rng(11);
    const Eigen::MatrixXd w = oracle::random_matrix(rng, 20, 20);
    const Eigen::MatrixXd a = w * w.transpose() + 1e-6 * Eigen::MatrixXd::Identity(20, 20);
    const auto f = cholesky_psd<double>(a, 1e-6);
    EXPECT_LT((reconstruct(f) - a).norm() / a.norm(), 1e-8);
}

TEST(Cholesky, EscalatesJitterForSingularMatrix) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 3);
    const auto f = cholesky_psd<double>(a, 1e-6);
    EXPECT_GT(f.jitter, 0.0);
    const Eigen::MatrixXd shifted = a + f.jitter * Eigen::MatrixXd::Identity(3, 3);
    EXPECT_LT((reconstruct(f) - shifted).norm(), 1e-10);
}

TEST(Cholesky, FailsOnIndefiniteMatrix) {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0, 0, -1;
    EXPECT_THROW(cholesky_psd<double>(a, 1e-6), NotPositiveDefinite);
    EXPECT_THROW(cholesky_psd<double>(a, 0.0), NotPositiveDefinite);
}

TEST(Cholesky, RejectsAsymmetricAndNonSquare) {
    Eigen::MatrixXd a(2, 2);
    a << 2, 1, 0, 2;
    EXPECT_THROW(cholesky_psd<double>(a, 0.0), PreconditionViolation);
    EXPECT_THROW(cholesky_psd<double>(Eigen::MatrixXd::Ones(2, 3), 0.0), DimensionMismatch);
    EXPECT_THROW(cholesky_psd<double>(Eigen::MatrixXd::Identity(2, 2), -1.0), PreconditionViolation);
}

TEST(TriSolve, IdentityReturnsRightHandSide) {
    const auto f = CholFactor<double>::identity_factor(3);
    const Eigen::MatrixXd b = Eigen::MatrixXd::Random(3, 2);
    EXPECT_EQ(tri_solve(f, b), b);
    const auto g = cholesky_psd<double>(Eigen::MatrixXd::Identity(3, 3), 0.0);
    EXPECT_TRUE(tri_solve(g, b).isApprox(b, 0.0));
}

TEST(TriSolve, DiagonalSolve) {
    Eigen::MatrixXd a(2, 2);
    a << 4, 0, 0, 9;
    const auto f = cholesky_psd<double>(a, 0.0);
    const Eigen::VectorXd x = tri_solve(f, Eigen::VectorXd(Eigen::Vector2d(2, 3)));
    EXPECT_DOUBLE_EQ(x(0), 1.0);
    EXPECT_DOUBLE_EQ(x(1), 1.0);
}

TEST(TriSolve, ResidualOnRandomSystem) {
    std::mt19937_64 rng(5);
    const auto f = cholesky_psd<double>(oracle::random_spd(rng, 10), 0.0);
    const Eigen::MatrixXd b = oracle::random_matrix(rng, 10, 3);
    const Eigen::MatrixXd x = tri_solve(f, b);
    EXPECT_LT((f.lower * x - b).norm(), 1e-10);
    const Eigen::MatrixXd xt = tri_solve(f, b, Transpose::yes);
    EXPECT_LT((f.lower.transpose() * xt - b).norm(), 1e-10);
}

TEST(TriSolve, DimensionMismatch) {
    const auto f = cholesky_psd<double>(Eigen::MatrixXd::Identity(3, 3), 0.0);
    EXPECT_THROW(tri_solve(f, Eigen::MatrixXd(Eigen::MatrixXd::Ones(2, 1))), DimensionMismatch);
}

TEST(Logdet, IdentityAndDiagonal) {
    EXPECT_EQ(logdet(cholesky_psd<double>(Eigen::MatrixXd::Identity(4, 4), 0.0)), 0.0);
    Eigen::MatrixXd a(2, 2);
    a << 4, 0, 0, 9;
    EXPECT_NEAR(logdet(cholesky_psd<double>(a, 0.0)), std::log(36.0), 1e-14);
    EXPECT_NEAR(std::log(36.0), 3.58352, 1e-5);
}

TEST(Logdet, MatchesLuOracleDim8) {
    std::mt19937_64 rng(8);
    const Eigen::MatrixXd a = oracle::random_spd(rng, 8);
    EXPECT_NEAR(logdet(cholesky_psd<double>(a, 0.0)), oracle::lu_logabsdet(a), 1e-9);
}

TEST(LinalgProperties, ReconstructSolveAndLogdetOnRandomMatrices) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const int dim = std::uniform_int_distribution<int>(1, 50)(rng);
        const Eigen::MatrixXd a = oracle::random_spd(rng, dim, oracle::uniform(rng, 1e-3, 1.0));
        const auto f = cholesky_psd<double>(a, 1e-6 * a.diagonal().mean());
        ASSERT_LT((reconstruct(f) - a).norm() / a.norm(), 1e-8) << "dim " << dim;
        for (int k = 0; k < dim; ++k) ASSERT_GT(f.lower(k, k), 0.0);

        const Eigen::VectorXd x = oracle::random_matrix(rng, dim, 1);
        const Eigen::VectorXd lx = f.lower * x;
        ASSERT_LT((tri_solve(f, lx) - x).cwiseAbs().maxCoeff(), 1e-9) << "dim " << dim;

        if (dim <= 20) {
            ASSERT_NEAR(logdet(f), oracle::lu_logabsdet(a), 1e-9) << "dim " << dim;
        }
    }
}

TEST(LinalgGradients, LogdetAndSolveThroughTape) {
    std::mt19937_64 rng(17);
    const int n = 4;
    const Eigen::MatrixXd w = oracle::random_matrix(rng, n, n);
    const Eigen::VectorXd b = oracle::random_matrix(rng, n, 1);
    Eigen::VectorXd theta(n * n);
    for (int k = 0; k < n * n; ++k) theta(k) = w(k % n, k / n);

    auto fn = [&](const auto& th) {
        using T = std::decay_t<decltype(th[0])>;
        MatrixX<T> wm(n, n);
        for (int k = 0; k < n * n; ++k) wm(k % n, k / n) = th[k];
        MatrixX<T> a(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) a(i, j) = ad::dot(wm.row(i), wm.row(j)) + (i == j ? 0.5 : 0.0);
        const auto f = cholesky_psd(a, 0.0);
        const VectorX<T> x = tri_solve(f, tri_solve(f, VectorX<T>(b.cast<T>())), Transpose::yes);
        return logdet(f) + ad::dot(x, VectorX<T>(b.cast<T>()));
    };
    const Eigen::VectorXd g_ad = oracle::tape_gradient([&](const std::vector<Var>& v) { return fn(v); }, theta);
    const Eigen::VectorXd g_fd = oracle::fd_gradient(
        [&](const Eigen::VectorXd& v) { return fn(std::vector<double>(v.data(), v.data() + v.size())); }, theta);
    EXPECT_LT(oracle::max_relative_error(g_ad, g_fd), 1e-6);
}
