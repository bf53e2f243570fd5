#include "oracles.hpp"

#include <gvidgp/kernels.hpp>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

using namespace gvidgp;

TEST(Kernel, SinglePointGivesVariance) {
    const auto p = KernelParams<double>::from_values(1.7, Eigen::VectorXd::Ones(2));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(1, 2);
    const Eigen::MatrixXd k = kernel_matrix(p, x, x);
    ASSERT_EQ(k.rows(), 1);
    EXPECT_NEAR(k(0, 0), 1.7, 1e-14);
}

TEST(Kernel, AnalyticOffDiagonal) {
    const auto p = KernelParams<double>::unit(2);
    Eigen::MatrixXd x(2, 2);
    x << 0, 0, 1, 1;  // distance √2
    const Eigen::MatrixXd k = kernel_matrix(p, x, x);
    EXPECT_NEAR(k(0, 1), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(k(0, 1), 0.36788, 1e-5);
}

TEST(Kernel, RandomGramIsPsd) {
    std::mt19937_64 rng(4);
    const auto p = KernelParams<double>::from_values(1.3, Eigen::Vector3d(0.5, 1.0, 2.0));
    const Eigen::MatrixXd x = oracle::random_matrix(rng, 10, 3);
    const Eigen::MatrixXd k = kernel_matrix(p, x, x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(Kernel, DimensionMismatch) {
    const auto p = KernelParams<double>::unit(2);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 3);
    EXPECT_THROW(kernel_matrix(p, x, x), DimensionMismatch);
    EXPECT_THROW(kernel_diag(p, x), DimensionMismatch);
}

TEST(KernelDiag, ConstantSignalVariance) {
    const auto p = KernelParams<double>::from_values(2.5, Eigen::VectorXd::Ones(3));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
    const Eigen::VectorXd d = kernel_diag(p, x);
    ASSERT_EQ(d.size(), 5);
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(d(i), 2.5, 1e-14);
    EXPECT_LT((d - kernel_matrix(p, x, x).diagonal()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KernelProperties, SymmetryDecayAndScaleInvariance) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const int d = std::uniform_int_distribution<int>(1, 5)(rng);
        const int n = std::uniform_int_distribution<int>(2, 15)(rng);
        Eigen::VectorXd ls(d);
        for (int k = 0; k < d; ++k) ls(k) = oracle::uniform(rng, 0.2, 3.0);
        const auto p = KernelParams<double>::from_values(oracle::uniform(rng, 0.1, 4.0), ls);
        const Eigen::MatrixXd x = oracle::random_matrix(rng, n, d);
        const Eigen::MatrixXd k = kernel_matrix(p, x, x);
        ASSERT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-12);

        const Eigen::MatrixXd kj = k + 1e-6 * k.diagonal().mean() * Eigen::MatrixXd::Identity(n, n);
        ASSERT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(kj).eigenvalues().minCoeff(), 0.0);

        const double c = oracle::uniform(rng, 0.1, 10.0);
        const auto pc = KernelParams<double>::from_values(p.variance(), ls * c);
        const Eigen::MatrixXd xc = x * c;
        ASSERT_LT((kernel_matrix(pc, xc, xc) - k).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(KernelProperties, MonotoneDecayOnGrid) {
    const auto p = KernelParams<double>::from_values(1.0, Eigen::VectorXd::Constant(1, 0.7));
    Eigen::MatrixXd origin = Eigen::MatrixXd::Zero(1, 1);
    Eigen::MatrixXd grid(200, 1);
    for (int i = 0; i < 200; ++i) grid(i, 0) = 0.05 * i;
    const Eigen::MatrixXd k = kernel_matrix(p, origin, grid);
    for (int i = 1; i < 200; ++i) ASSERT_LE(k(0, i), k(0, i - 1));
}

TEST(KernelGradients, TapeMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    const Eigen::MatrixXd a = oracle::random_matrix(rng, 3, 2);
    const Eigen::MatrixXd b = oracle::random_matrix(rng, 4, 2);
    Eigen::VectorXd theta(3 + a.size());
    theta << 0.3, -0.2, 0.4, Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
    const Eigen::MatrixXd weights = oracle::random_matrix(rng, 3, 4);
    auto fn = [&](const auto& th) {
        using T = std::decay_t<decltype(th[0])>;
        KernelParams<T> p;
        p.log_variance = th[0];
        p.log_lengthscales = VectorX<T>(2);
        p.log_lengthscales << th[1], th[2];
        MatrixX<T> at(3, 2);
        for (int k = 0; k < 6; ++k) at(k % 3, k / 3) = th[3 + k];
        const MatrixX<T> k = kernel_matrix(p, at, MatrixX<T>(b.cast<T>()));
        T s = 0.0;
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 3; ++i) s += weights(i, j) * k(i, j);
        return s;
    };
    const Eigen::VectorXd g_ad = oracle::tape_gradient([&](const std::vector<Var>& v) { return fn(v); }, theta);
    const Eigen::VectorXd g_fd = oracle::fd_gradient(
        [&](const Eigen::VectorXd& v) { return fn(std::vector<double>(v.data(), v.data() + v.size())); }, theta);
    EXPECT_LT(oracle::max_relative_error(g_ad, g_fd), 1e-7);
}
