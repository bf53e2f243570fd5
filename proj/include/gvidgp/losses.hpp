#pragma once

// Expected losses under a diagonal Gaussian marginal q(f) = N(μ, diag(s²)) for
// the likelihood p(y|f) = N(y; f, σ²I_d):
//
//   E(c)   = (1/c)·E_q[p(y|f)^c]
//   I(c)   = ∫ p(y|f)^c dy = (2πσ²)^(−d(c−1)/2) · c^(−d/2)
//   E[β]   = −E(β−1) + I(β)/β
//   E[γ]   = −γ·E(γ−1)·I(γ)^(−(γ−1)/γ)
//
// Everything is evaluated in log space; the γ-loss never changes sign so it is
// exponentiated only once at the very end.

#include "gvidgp/autodiff.hpp"
#include "gvidgp/divergences.hpp"
#include "gvidgp/errors.hpp"
#include "gvidgp/running_stats.hpp"

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

namespace gvidgp {

struct LossSpec {
    enum class Kind { nll, beta, gamma };

    /// How I(γ) enters the γ-loss. `fujisawa_eguchi` multiplies by I(γ)^(−(γ−1)/γ);
    /// `theorem_display` divides by I(γ)^(γ/(γ−1)) as printed in the closed-form
    /// theorem. Only the former is a monotone transform of the γ-divergence.
    enum class GammaNormalization { fujisawa_eguchi, theorem_display };

    Kind kind = Kind::nll;
    double beta = 1.05;
    double gamma = 1.05;
    double weight = 1.0;  // multiplies every per-point loss
    GammaNormalization gamma_normalization = GammaNormalization::fujisawa_eguchi;

    static LossSpec nll() { return {}; }
    static LossSpec beta_loss(double beta) {
        LossSpec s;
        s.kind = Kind::beta;
        s.beta = beta;
        return s;
    }
    static LossSpec gamma_loss(double gamma) {
        LossSpec s;
        s.kind = Kind::gamma;
        s.gamma = gamma;
        return s;
    }

    [[nodiscard]] LossSpec weighted(double w) const {
        LossSpec s = *this;
        s.weight = w;
        return s;
    }

    void validate() const {
        if (kind == Kind::beta && !(beta > 1.0 && std::isfinite(beta)))
            throw PreconditionViolation("beta loss: beta must be finite and > 1");
        if (kind == Kind::gamma && !(gamma > 1.0 && std::isfinite(gamma)))
            throw PreconditionViolation("gamma loss: gamma must be finite and > 1");
        if (!(weight > 0.0 && std::isfinite(weight))) throw PreconditionViolation("loss weight must be finite and > 0");
    }

    [[nodiscard]] std::string name() const {
        switch (kind) {
            case Kind::nll: return "nll";
            case Kind::beta: return "beta";
            case Kind::gamma: return "gamma";
        }
        return "unknown";
    }

    [[nodiscard]] double hyperparameter() const {
        switch (kind) {
            case Kind::beta: return beta;
            case Kind::gamma: return gamma;
            default: return 1.0;
        }
    }
};

/// Gaussian likelihood N(y; f, σ²I_d) with σ² stored as a logarithm.
template <class T>
struct LikelihoodParams {
    T log_noise_variance = T(0.0);
    Eigen::Index output_dim = 1;

    static LikelihoodParams from_variance(double noise_variance, Eigen::Index output_dim) {
        return {T(std::log(noise_variance)), output_dim};
    }

    [[nodiscard]] T noise_variance() const {
        using std::exp;
        return exp(log_noise_variance);
    }
};

/// Diagonal marginal q(f) = N(mean, diag(variance)).
template <class T>
struct MarginalMoments {
    VectorX<T> mean;
    VectorX<T> variance;

    [[nodiscard]] Eigen::Index dim() const noexcept { return mean.size(); }
};

namespace detail {

inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

template <class T, class DY>
void check_loss_dims(const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q, const LikelihoodParams<T>& lik,
                     const char* who) {
    if (y.size() != q.mean.size() || q.variance.size() != q.mean.size() || q.mean.size() != lik.output_dim) {
        throw DimensionMismatch(std::string(who) + ": target has " + std::to_string(y.size()) + " entries, moments " +
                                std::to_string(q.mean.size()) + "/" + std::to_string(q.variance.size()) +
                                ", likelihood dimension " + std::to_string(lik.output_dim));
    }
}

inline void check_power(double c, const char* who) {
    if (!(c > 0.0) || !std::isfinite(c))
        throw NonPositivePower(std::string(who) + ": power must be a finite positive number, got " + std::to_string(c));
}

}  // namespace detail

/// log I(c) = −d(c−1)/2·log(2πσ²) − (d/2)·log c.
template <class T>
T log_integral_I(double c, const LikelihoodParams<T>& lik) {
    detail::check_power(c, "integral_I");
    const auto d = static_cast<double>(lik.output_dim);
    return -0.5 * d * (c - 1.0) * (detail::kLog2Pi + lik.log_noise_variance) - 0.5 * d * std::log(c);
}

/// I(c) = ∫ N(y; f, σ²I_d)^c dy.
template <class T>
T integral_I(double c, const LikelihoodParams<T>& lik) {
    using std::exp;
    return exp(log_integral_I(c, lik));
}

/// log E(c) with E(c) = (1/c)·E_q[p(y|f)^c]. Per dimension, the closed form's
/// exponent −½(c/σ²·y² + μ²/s² − μ̃²Σ̃) is evaluated as −(y−μ)²/(2(σ²/c + s²)),
/// which is the same quantity without the cancellation at small s².
template <class T, class DY>
T log_expected_power_density(double c, const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q,
                             const LikelihoodParams<T>& lik) {
    detail::check_power(c, "expected_power_density");
    detail::check_loss_dims(y, q, lik, "expected_power_density");
    using std::exp;
    using std::log;
    const T log_s2pi = detail::kLog2Pi + lik.log_noise_variance;
    const T noise_over_c = exp(lik.log_noise_variance) / c;
    std::vector<T> terms;
    terms.reserve(static_cast<std::size_t>(q.dim()) + 1);
    for (Eigen::Index j = 0; j < q.dim(); ++j) {
        const T v = noise_over_c + q.variance(j);
        const T r = y(j) - q.mean(j);
        terms.push_back(-0.5 * (c - 1.0) * log_s2pi - 0.5 * (detail::kLog2Pi + log(v)) - (r * r) / (2.0 * v));
    }
    const auto d = static_cast<double>(q.dim());
    return ad::sum(terms) - 0.5 * d * std::log(c) - std::log(c);
}

template <class T, class DY>
T expected_power_density(double c, const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q,
                         const LikelihoodParams<T>& lik) {
    using std::exp;
    return exp(log_expected_power_density(c, y, q, lik));
}

/// E_q[−log p(y|f)] = Σ_j ½log(2πσ²) + ((y_j−μ_j)² + s_j²)/(2σ²).
template <class T, class DY>
T expected_nll(const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q, const LikelihoodParams<T>& lik) {
    detail::check_loss_dims(y, q, lik, "expected_nll");
    using std::exp;
    const T inv_two_s2 = 0.5 * exp(-lik.log_noise_variance);
    std::vector<T> terms;
    terms.reserve(static_cast<std::size_t>(q.dim()));
    for (Eigen::Index j = 0; j < q.dim(); ++j) {
        const T r = y(j) - q.mean(j);
        terms.push_back((r * r + q.variance(j)) * inv_two_s2);
    }
    const auto d = static_cast<double>(q.dim());
    return ad::sum(terms) + 0.5 * d * (detail::kLog2Pi + lik.log_noise_variance);
}

template <class T, class DY>
T expected_beta_loss(const LossSpec& spec, const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q,
                     const LikelihoodParams<T>& lik) {
    if (spec.kind != LossSpec::Kind::beta) throw PreconditionViolation("expected_beta_loss: spec is not a beta loss");
    spec.validate();
    return -expected_power_density(spec.beta - 1.0, y, q, lik) + integral_I(spec.beta, lik) / spec.beta;
}

template <class T, class DY>
T expected_gamma_loss(const LossSpec& spec, const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q,
                      const LikelihoodParams<T>& lik) {
    if (spec.kind != LossSpec::Kind::gamma)
        throw PreconditionViolation("expected_gamma_loss: spec is not a gamma loss");
    spec.validate();
    using std::exp;
    const double g = spec.gamma;
    const double i_exponent = spec.gamma_normalization == LossSpec::GammaNormalization::fujisawa_eguchi
                                  ? -(g - 1.0) / g
                                  : -g / (g - 1.0);
    const T log_magnitude =
        std::log(g) + log_expected_power_density(g - 1.0, y, q, lik) + i_exponent * log_integral_I(g, lik);
    return -exp(log_magnitude);
}

/// weight · E_q[ℓ(f, y)] for the loss selected by `spec`.
template <class T, class DY>
T expected_loss(const LossSpec& spec, const Eigen::MatrixBase<DY>& y, const MarginalMoments<T>& q,
                const LikelihoodParams<T>& lik) {
    T v = T(0.0);
    switch (spec.kind) {
        case LossSpec::Kind::nll: v = expected_nll(y, q, lik); break;
        case LossSpec::Kind::beta: v = expected_beta_loss(spec, y, q, lik); break;
        case LossSpec::Kind::gamma: v = expected_gamma_loss(spec, y, q, lik); break;
    }
    return spec.weight == 1.0 ? v : spec.weight * v;
}

/// ℓ(f, y) at a single latent value f.
inline double pointwise_loss(const LossSpec& spec, const Eigen::VectorXd& y, const Eigen::VectorXd& f,
                             const LikelihoodParams<double>& lik) {
    const double s2 = lik.noise_variance();
    const auto d = static_cast<double>(y.size());
    const double log_p = -0.5 * d * (detail::kLog2Pi + std::log(s2)) - 0.5 * (y - f).squaredNorm() / s2;
    double loss = 0.0;
    switch (spec.kind) {
        case LossSpec::Kind::nll: loss = -log_p; break;
        case LossSpec::Kind::beta: {
            const double b = spec.beta;
            loss = -std::exp((b - 1.0) * log_p) / (b - 1.0) + integral_I(b, lik) / b;
            break;
        }
        case LossSpec::Kind::gamma: {
            const double g = spec.gamma;
            const double i_exponent = spec.gamma_normalization == LossSpec::GammaNormalization::fujisawa_eguchi
                                          ? -(g - 1.0) / g
                                          : -g / (g - 1.0);
            loss = -(g / (g - 1.0)) * std::exp((g - 1.0) * log_p + i_exponent * log_integral_I(g, lik));
            break;
        }
    }
    return spec.weight * loss;
}

/// Plain Monte-Carlo average of ℓ(f, y) over f ~ q.
template <class DY>
MonteCarloEstimate mc_loss_oracle(const LossSpec& spec, const Eigen::MatrixBase<DY>& y,
                                  const MarginalMoments<double>& q, const LikelihoodParams<double>& lik,
                                  std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < kMinOracleSamples) throw PreconditionViolation("mc_loss_oracle: needs at least 10^4 samples");
    spec.validate();
    detail::check_loss_dims(y, q, lik, "mc_loss_oracle");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const Eigen::VectorXd yy = y;
    const Eigen::VectorXd sd = q.variance.array().sqrt();
    Eigen::VectorXd f(q.dim());
    RunningStats stats;
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (Eigen::Index j = 0; j < q.dim(); ++j) f(j) = q.mean(j) + sd(j) * normal(rng);
        stats.push(pointwise_loss(spec, yy, f, lik));
    }
    return {stats.mean(), stats.std_error()};
}

/// E(c) for a full covariance q(f) = N(μ, Σ), written exactly as the closed form
/// with Σ̃⁻¹ = (c/σ²)I + Σ⁻¹ and μ̃ = (c/σ²)y + Σ⁻¹μ.
inline double expected_power_density_full(double c, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                                          const Eigen::MatrixXd& sigma, double noise_variance) {
    detail::check_power(c, "expected_power_density_full");
    const Eigen::Index d = y.size();
    if (mu.size() != d || sigma.rows() != d || sigma.cols() != d)
        throw DimensionMismatch("expected_power_density_full: dimension mismatch");
    const Eigen::LLT<Eigen::MatrixXd> sigma_llt(sigma);
    if (sigma_llt.info() != Eigen::Success) throw NotPositiveDefinite("expected_power_density_full: Σ not PD");
    const Eigen::MatrixXd sigma_inv = sigma_llt.solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd tilde_inv = (c / noise_variance) * Eigen::MatrixXd::Identity(d, d) + sigma_inv;
    const Eigen::LLT<Eigen::MatrixXd> tilde_llt(tilde_inv);
    const Eigen::VectorXd mu_tilde = (c / noise_variance) * y + sigma_inv * mu;

    const double logdet_sigma = 2.0 * Eigen::MatrixXd(sigma_llt.matrixL()).diagonal().array().log().sum();
    const double logdet_tilde = -2.0 * Eigen::MatrixXd(tilde_llt.matrixL()).diagonal().array().log().sum();
    const double quad = (c / noise_variance) * y.squaredNorm() + mu.dot(sigma_inv * mu) -
                        mu_tilde.dot(tilde_llt.solve(mu_tilde));
    const double log_e = -std::log(c) - 0.5 * static_cast<double>(d) * c * std::log(2.0 * std::numbers::pi * noise_variance) +
                         0.5 * (logdet_tilde - logdet_sigma) - 0.5 * quad;
    return std::exp(log_e);
}

}  // namespace gvidgp
