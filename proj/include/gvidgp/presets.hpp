#pragma once

// Small fixed problems used by the gradient audit and the test suites.

#include "gvidgp/dgp.hpp"
#include "gvidgp/trainer.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gvidgp {

struct ReferenceProblem {
    DgpModel model;
    Eigen::MatrixXd x;
    Eigen::MatrixXd y;
};

/// Two-layer model (2 → 2 → 1) with 4 inducing points per layer on 6 data
/// points, with every parameter moved away from its initial value so no
/// gradient entry is structurally zero.
inline ReferenceProblem reference_problem(std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ReferenceProblem p;
    p.x.resize(6, 2);
    p.y.resize(6, 1);
    for (Eigen::Index i = 0; i < 6; ++i) {
        p.x(i, 0) = normal(rng);
        p.x(i, 1) = normal(rng);
        p.y(i, 0) = std::sin(1.5 * p.x(i, 0)) + 0.3 * p.x(i, 1) + 0.1 * normal(rng);
    }
    ModelOptions opts;
    opts.layers = 2;
    opts.num_inducing = 4;
    p.model = init_model(p.x, 1, opts, seed);
    for (auto& layer : p.model.layers) {
        layer.kernel.log_variance = 0.3 * normal(rng);
        for (Eigen::Index d = 0; d < layer.kernel.log_lengthscales.size(); ++d)
            layer.kernel.log_lengthscales(d) = 0.3 * normal(rng);
        for (Eigen::Index k = 0; k < layer.inducing.size(); ++k) layer.inducing(k) += 0.2 * normal(rng);
        for (Eigen::Index k = 0; k < layer.q_mu.size(); ++k) layer.q_mu(k) = 0.5 * normal(rng);
        const Eigen::Index m = layer.num_inducing();
        for (Eigen::Index c = 0; c < layer.output_dim(); ++c) {
            Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(m, m);
            for (Eigen::Index j = 0; j < m; ++j) {
                lower(j, j) = 0.3 + 0.5 * unit(rng);
                for (Eigen::Index i = j + 1; i < m; ++i) lower(i, j) = 0.2 * normal(rng);
            }
            layer.set_q_sqrt(c, lower);
        }
    }
    p.model.lik = LikelihoodParams<double>::from_variance(0.1, 1);
    return p;
}

/// The nine loss × quantifier combinations audited by gradcheck.
inline std::vector<GviProblem> reference_problems(std::size_t num_layers, std::size_t n_samples = 3) {
    const std::array losses = {LossSpec::nll(), LossSpec::beta_loss(1.5), LossSpec::gamma_loss(1.05)};
    const std::array quantifiers = {QuantifierSpec::kld(), QuantifierSpec::scaled_kld(2.0), QuantifierSpec::renyi(0.5)};
    std::vector<GviProblem> out;
    for (const auto& l : losses)
        for (const auto& q : quantifiers) out.push_back({l, std::vector<QuantifierSpec>(num_layers, q), n_samples});
    return out;
}

inline std::string describe(const GviProblem& p) {
    return p.loss.name() + "(" + std::to_string(p.loss.hyperparameter()) + ")/" + p.specs.front().name() + "(" +
           std::to_string(p.specs.front().hyperparameter()) + ")";
}

}  // namespace gvidgp
