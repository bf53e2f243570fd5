#pragma once

// Uncertainty quantifiers between multivariate Gaussians: KLD, KLD/w and the
// Rényi α-divergence D = 1/(α(α−1))·log ∫ q^α p^(1−α).

#include "gvidgp/autodiff.hpp"
#include "gvidgp/errors.hpp"
#include "gvidgp/linalg.hpp"
#include "gvidgp/running_stats.hpp"

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace gvidgp {

template <class T>
struct GaussianDist {
    VectorX<T> mean;
    CholFactor<T> cov_factor;

    [[nodiscard]] Eigen::Index dim() const noexcept { return mean.size(); }

    static GaussianDist from_covariance(VectorX<T> mean, const MatrixX<T>& cov, double base_jitter = 0.0) {
        if (mean.size() != cov.rows()) throw DimensionMismatch("GaussianDist: mean and covariance sizes differ");
        return GaussianDist{std::move(mean), cholesky_psd(cov, base_jitter)};
    }

    static GaussianDist standard(Eigen::Index dim) {
        return GaussianDist{VectorX<T>::Zero(dim), CholFactor<T>::identity_factor(dim)};
    }
};

struct QuantifierSpec {
    enum class Kind { kld, scaled_kld, renyi };

    Kind kind = Kind::kld;
    double w = 1.0;      // scaled_kld only
    double alpha = 0.5;  // renyi only

    static QuantifierSpec kld() { return {}; }
    static QuantifierSpec scaled_kld(double w) { return {Kind::scaled_kld, w, 0.5}; }
    static QuantifierSpec renyi(double alpha) { return {Kind::renyi, 1.0, alpha}; }

    void validate() const {
        if (kind == Kind::scaled_kld && !(w > 0.0 && std::isfinite(w)))
            throw PreconditionViolation("scaled_kld: w must be a finite positive number");
        if (kind == Kind::renyi && !(alpha > 0.0 && alpha < 1.0))
            throw AlphaOutOfRange("renyi: alpha must lie in the open interval (0,1), got " + std::to_string(alpha));
    }

    [[nodiscard]] std::string name() const {
        switch (kind) {
            case Kind::kld: return "kld";
            case Kind::scaled_kld: return "scaled_kld";
            case Kind::renyi: return "renyi";
        }
        return "unknown";
    }

    /// The hyperparameter that matters for this kind (w, α, or 1 for plain KLD).
    [[nodiscard]] double hyperparameter() const {
        switch (kind) {
            case Kind::scaled_kld: return w;
            case Kind::renyi: return alpha;
            default: return 1.0;
        }
    }

    bool operator==(const QuantifierSpec&) const = default;
};

namespace detail {

template <class T>
void check_same_dim(const GaussianDist<T>& q, const GaussianDist<T>& p, const char* who) {
    if (q.dim() != p.dim() || q.cov_factor.dim() != q.dim() || p.cov_factor.dim() != p.dim()) {
        throw DimensionMismatch(std::string(who) + ": distributions have dimensions " + std::to_string(q.dim()) +
                                " and " + std::to_string(p.dim()));
    }
}

template <class T>
VectorX<T> symmetric_times(const MatrixX<T>& a, const VectorX<T>& x) {
    VectorX<T> out(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) out(i) = ad::dot(a.col(i), x);
    return out;
}

}  // namespace detail

/// KLD(q‖p) = ½[tr(Σp⁻¹Σq) + Δᵀ Σp⁻¹ Δ − d + ln|Σp| − ln|Σq|].
template <class T>
T kld_gauss(const GaussianDist<T>& q, const GaussianDist<T>& p) {
    detail::check_same_dim(q, p, "kld_gauss");
    const auto d = static_cast<double>(q.dim());
    const MatrixX<T> whitened_q = tri_solve(p.cov_factor, q.cov_factor.lower);
    const T trace = ad::squared_norm(whitened_q);
    const VectorX<T> delta = p.mean - q.mean;
    const T maha = ad::squared_norm(tri_solve(p.cov_factor, delta));
    return 0.5 * (trace + maha - d + logdet(p.cov_factor) - logdet(q.cov_factor));
}

/// Rényi α-divergence for α ∈ (0,1) through the mixed covariance
/// Σ_α = αΣp + (1−α)Σq, Δ = μq − μp:
///
///   D = ½ ΔᵀΣ_α⁻¹Δ + (ln|Σ_α| − (1−α) ln|Σq| − α ln|Σp|) / (2α(1−α)).
template <class T>
T renyi_alpha_gauss(const GaussianDist<T>& q, const GaussianDist<T>& p, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw AlphaOutOfRange("renyi_alpha_gauss: alpha must lie in the open interval (0,1), got " +
                              std::to_string(alpha));
    detail::check_same_dim(q, p, "renyi_alpha_gauss");
    const Eigen::Index d = q.dim();
    const double beta = 1.0 - alpha;

    auto cov = [d](const CholFactor<T>& f) {
        return f.identity ? MatrixX<T>(MatrixX<T>::Identity(d, d)) : reconstruct(f);
    };
    const MatrixX<T> cov_q = cov(q.cov_factor);
    const MatrixX<T> cov_p = cov(p.cov_factor);
    MatrixX<T> mixed(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index i = 0; i < d; ++i) mixed(i, j) = alpha * cov_p(i, j) + beta * cov_q(i, j);
    const CholFactor<T> mixed_factor = cholesky_psd(mixed, 0.0);

    VectorX<T> delta(d);
    for (Eigen::Index i = 0; i < d; ++i) delta(i) = q.mean(i) - p.mean(i);
    const T maha = ad::squared_norm(tri_solve(mixed_factor, delta));
    const T log_ratio = logdet(mixed_factor) - beta * logdet(q.cov_factor) - alpha * logdet(p.cov_factor);
    return 0.5 * maha + log_ratio / (2.0 * alpha * beta);
}

template <class T>
T apply_quantifier(const QuantifierSpec& spec, const GaussianDist<T>& q, const GaussianDist<T>& p) {
    spec.validate();
    switch (spec.kind) {
        case QuantifierSpec::Kind::kld: return kld_gauss(q, p);
        case QuantifierSpec::Kind::scaled_kld: return kld_gauss(q, p) / spec.w;
        case QuantifierSpec::Kind::renyi: return renyi_alpha_gauss(q, p, spec.alpha);
    }
    throw PreconditionViolation("apply_quantifier: unknown quantifier kind");
}

struct MonteCarloEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
};

inline constexpr std::size_t kMinOracleSamples = 10000;

/// log N(x; mean, L·Lᵀ).
inline double log_density(const GaussianDist<double>& g, const Eigen::VectorXd& x) {
    const Eigen::VectorXd diff = x - g.mean;
    const Eigen::VectorXd r = g.cov_factor.lower.triangularView<Eigen::Lower>().solve(diff);
    const double half_logdet = g.cov_factor.lower.diagonal().array().log().sum();
    return -0.5 * r.squaredNorm() - half_logdet - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

/// Plain Monte-Carlo estimate of D(q‖p) from samples of q. Rényi uses the
/// delta method for its standard error.
inline MonteCarloEstimate mc_divergence_oracle(const GaussianDist<double>& q, const GaussianDist<double>& p,
                                               const QuantifierSpec& spec, std::size_t n_samples,
                                               std::uint64_t seed) {
    if (n_samples < kMinOracleSamples)
        throw PreconditionViolation("mc_divergence_oracle: needs at least 10^4 samples");
    spec.validate();
    detail::check_same_dim(q, p, "mc_divergence_oracle");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const Eigen::Index d = q.dim();
    const bool renyi = spec.kind == QuantifierSpec::Kind::renyi;
    const double exponent = 1.0 - spec.alpha;

    RunningStats stats;
    Eigen::VectorXd z(d);
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
        const Eigen::VectorXd x = q.mean + q.cov_factor.lower.triangularView<Eigen::Lower>() * z;
        const double log_ratio = log_density(q, x) - log_density(p, x);
        stats.push(renyi ? std::exp(-exponent * log_ratio) : log_ratio);
    }
    const double mean = stats.mean();
    const double se = stats.std_error();

    switch (spec.kind) {
        case QuantifierSpec::Kind::kld: return {mean, se};
        case QuantifierSpec::Kind::scaled_kld: return {mean / spec.w, se / spec.w};
        case QuantifierSpec::Kind::renyi: {
            const double scale = 1.0 / (spec.alpha * (spec.alpha - 1.0));
            return {scale * std::log(mean), std::abs(scale) * se / mean};
        }
    }
    return {};
}

}  // namespace gvidgp
