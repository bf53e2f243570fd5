#pragma once

// Doubly-stochastic deep GP with sparse-GP layers. Each layer keeps
// q(U) = N(m, S) over its inducing outputs and the prior conditional p(F|U);
// integrating U out gives per-point Gaussian marginals, so propagation between
// layers only needs univariate samples.

#include "gvidgp/autodiff.hpp"
#include "gvidgp/divergences.hpp"
#include "gvidgp/errors.hpp"
#include "gvidgp/kernels.hpp"
#include "gvidgp/linalg.hpp"
#include "gvidgp/losses.hpp"

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gvidgp {

enum class MeanFunction { zero, linear_projection };

inline constexpr double kVarianceFloor = 1e-10;
/// Base jitter for K(Z,Z), relative to its mean diagonal.
inline constexpr double kInducingJitter = 1e-6;
inline constexpr int kMaxHiddenWidth = 30;

/// Index of entry (i, j), i >= j, in a column-major packed lower triangle.
inline Eigen::Index packed_index(Eigen::Index n, Eigen::Index i, Eigen::Index j) {
    return j * n - j * (j - 1) / 2 + (i - j);
}

inline Eigen::Index packed_size(Eigen::Index n) { return n * (n + 1) / 2; }

template <class T>
struct BasicLayer {
    MatrixX<T> inducing;  // Z: m × D_in
    MatrixX<T> q_mu;      // m × D_out
    // One packed lower factor of S_c per output column; the stored diagonal is
    // the softplus pre-image of the factor's diagonal.
    std::vector<VectorX<T>> q_sqrt;
    KernelParams<T> kernel;
    MeanFunction mean_fn = MeanFunction::zero;
    Eigen::MatrixXd projection;  // D_in × D_out, used by linear_projection
    bool whiten = true;

    [[nodiscard]] Eigen::Index num_inducing() const noexcept { return inducing.rows(); }
    [[nodiscard]] Eigen::Index input_dim() const noexcept { return inducing.cols(); }
    [[nodiscard]] Eigen::Index output_dim() const noexcept { return q_mu.cols(); }

    [[nodiscard]] CholFactor<T> q_sqrt_factor(Eigen::Index c) const {
        const Eigen::Index m = num_inducing();
        CholFactor<T> f;
        f.lower = MatrixX<T>::Zero(m, m);
        const VectorX<T>& packed = q_sqrt[static_cast<std::size_t>(c)];
        for (Eigen::Index j = 0; j < m; ++j) {
            f.lower(j, j) = softplus(packed(packed_index(m, j, j)));
            for (Eigen::Index i = j + 1; i < m; ++i) f.lower(i, j) = packed(packed_index(m, i, j));
        }
        return f;
    }

    /// Stores `lower` (strictly positive diagonal) as the factor of S_c.
    void set_q_sqrt(Eigen::Index c, const Eigen::MatrixXd& lower) {
        const Eigen::Index m = num_inducing();
        if (lower.rows() != m || lower.cols() != m) throw DimensionMismatch("set_q_sqrt: factor has wrong shape");
        VectorX<T> packed(packed_size(m));
        for (Eigen::Index j = 0; j < m; ++j) {
            if (!(lower(j, j) > 0.0)) throw PreconditionViolation("set_q_sqrt: factor diagonal must be positive");
            packed(packed_index(m, j, j)) = T(softplus_inverse(lower(j, j)));
            for (Eigen::Index i = j + 1; i < m; ++i) packed(packed_index(m, i, j)) = T(lower(i, j));
        }
        q_sqrt[static_cast<std::size_t>(c)] = std::move(packed);
    }

    /// mean_fn applied row-wise to `x` (n × D_in), giving n × D_out.
    [[nodiscard]] MatrixX<T> mean_of(const MatrixX<T>& x) const {
        const Eigen::Index n = x.rows();
        const Eigen::Index d_out = output_dim();
        if (mean_fn == MeanFunction::zero) return MatrixX<T>::Zero(n, d_out);
        if (projection.rows() != x.cols() || projection.cols() != d_out)
            throw DimensionMismatch("mean function projection has wrong shape");
        const bool identity = projection.rows() == projection.cols() &&
                              projection.isApprox(Eigen::MatrixXd::Identity(d_out, d_out), 0.0);
        if (identity) return x;
        MatrixX<T> out(n, d_out);
        for (Eigen::Index c = 0; c < d_out; ++c)
            for (Eigen::Index i = 0; i < n; ++i) out(i, c) = ad::weighted_sum(projection.col(c), x.row(i));
        return out;
    }
};

template <class T>
struct BasicDgp {
    std::vector<BasicLayer<T>> layers;
    LikelihoodParams<T> lik;

    [[nodiscard]] std::size_t num_layers() const noexcept { return layers.size(); }
    [[nodiscard]] Eigen::Index input_dim() const { return layers.front().input_dim(); }
    [[nodiscard]] Eigen::Index output_dim() const { return layers.back().output_dim(); }
};

using LayerState = BasicLayer<double>;
using DgpModel = BasicDgp<double>;

/// Per-point marginal means and variances (batch × width).
template <class T>
struct GaussianMoments {
    MatrixX<T> mean;
    MatrixX<T> variance;

    [[nodiscard]] MarginalMoments<T> row(Eigen::Index i) const {
        return {mean.row(i).transpose(), variance.row(i).transpose()};
    }
};

// -- casting ------------------------------------------------------------------

template <class U, class T>
BasicLayer<U> cast_layer(const BasicLayer<T>& l) {
    auto conv = [](const auto& m) {
        return m.unaryExpr([](const T& x) { return U(value(x)); }).eval();
    };
    BasicLayer<U> out;
    out.inducing = conv(l.inducing);
    out.q_mu = conv(l.q_mu);
    for (const auto& s : l.q_sqrt) out.q_sqrt.push_back(conv(s));
    out.kernel.log_variance = U(value(l.kernel.log_variance));
    out.kernel.log_lengthscales = conv(l.kernel.log_lengthscales);
    out.mean_fn = l.mean_fn;
    out.projection = l.projection;
    out.whiten = l.whiten;
    return out;
}

template <class U, class T>
BasicDgp<U> cast_model(const BasicDgp<T>& m) {
    BasicDgp<U> out;
    for (const auto& l : m.layers) out.layers.push_back(cast_layer<U>(l));
    out.lik.log_noise_variance = U(value(m.lik.log_noise_variance));
    out.lik.output_dim = m.lik.output_dim;
    return out;
}

// -- layer computations ---------------------------------------------------------

/// Quantities of a layer that do not depend on its inputs: the factor of
/// K(Z,Z), the factors of every S_c and mean_fn(Z).
template <class T>
struct PreparedLayer {
    const BasicLayer<T>* layer = nullptr;
    CholFactor<T> kzz_factor;
    std::vector<CholFactor<T>> s_factors;
    MatrixX<T> mean_at_inducing;
};

template <class T>
PreparedLayer<T> prepare_layer(const BasicLayer<T>& layer) {
    if (layer.num_inducing() < 1) throw PreconditionViolation("layer needs at least one inducing point");
    if (static_cast<Eigen::Index>(layer.q_sqrt.size()) != layer.output_dim() ||
        layer.q_mu.rows() != layer.num_inducing())
        throw DimensionMismatch("layer variational parameters have inconsistent shapes");
    PreparedLayer<T> p;
    p.layer = &layer;
    // The base jitter is always part of K(Z,Z); escalation only adds to it.
    const double base = kInducingJitter * value(layer.kernel.variance());
    MatrixX<T> kzz = kernel_matrix(layer.kernel, layer.inducing, layer.inducing);
    for (Eigen::Index i = 0; i < kzz.rows(); ++i) kzz(i, i) += base;
    p.kzz_factor = cholesky_psd(kzz, base);
    p.kzz_factor.jitter += base;
    for (Eigen::Index c = 0; c < layer.output_dim(); ++c) p.s_factors.push_back(layer.q_sqrt_factor(c));
    if (!layer.whiten) p.mean_at_inducing = layer.mean_of(layer.inducing);
    return p;
}

/// Marginal moments of every output column at every input row.
template <class T>
GaussianMoments<T> layer_moments(const PreparedLayer<T>& prepared, const MatrixX<T>& inputs) {
    const BasicLayer<T>& layer = *prepared.layer;
    if (inputs.cols() != layer.input_dim()) {
        throw DimensionMismatch("layer_moments: inputs have width " + std::to_string(inputs.cols()) +
                                " but the layer expects " + std::to_string(layer.input_dim()));
    }
    const Eigen::Index n = inputs.rows();
    const Eigen::Index d_out = layer.output_dim();

    const MatrixX<T> kzx = kernel_matrix(layer.kernel, layer.inducing, inputs);
    const MatrixX<T> a = tri_solve(prepared.kzz_factor, kzx);  // L⁻¹K(Z,x)
    const T kdiag = layer.kernel.variance();
    const MatrixX<T> prior_mean = layer.mean_of(inputs);

    // Coefficients applied to the variational parameters: L⁻¹K(Z,x) in the
    // whitened parameterization, K(Z,Z)⁻¹K(Z,x) otherwise.
    const MatrixX<T> proj = layer.whiten ? a : tri_solve(prepared.kzz_factor, a, Transpose::yes);

    GaussianMoments<T> out{MatrixX<T>(n, d_out), MatrixX<T>(n, d_out)};
    for (Eigen::Index c = 0; c < d_out; ++c) {
        VectorX<T> shift = layer.q_mu.col(c);
        if (!layer.whiten) shift = shift - prepared.mean_at_inducing.col(c);
        const MatrixX<T> b = lower_transpose_times(prepared.s_factors[static_cast<std::size_t>(c)], proj);
        for (Eigen::Index i = 0; i < n; ++i) {
            out.mean(i, c) = prior_mean(i, c) + ad::dot(proj.col(i), shift);
            out.variance(i, c) = clamp_below(ad::base_minus_plus_squares(kdiag, a.col(i), b.col(i)), kVarianceFloor);
        }
    }
    return out;
}

template <class T>
GaussianMoments<T> layer_moments(const BasicLayer<T>& layer, const MatrixX<T>& inputs) {
    return layer_moments(prepare_layer(layer), inputs);
}

/// mean + sqrt(variance) ⊙ noise, with the variance floored at kVarianceFloor.
template <class T>
MatrixX<T> layer_sample(const GaussianMoments<T>& moments, const Eigen::MatrixXd& noise) {
    if (noise.rows() != moments.mean.rows() || noise.cols() != moments.mean.cols())
        throw DimensionMismatch("layer_sample: noise shape differs from moments shape");
    MatrixX<T> out(noise.rows(), noise.cols());
    for (Eigen::Index c = 0; c < noise.cols(); ++c) {
        for (Eigen::Index i = 0; i < noise.rows(); ++i) {
            const T& mu = moments.mean(i, c);
            const T& var = moments.variance(i, c);
            const double z = noise(i, c);
            if constexpr (is_var_v<T>) {
                const bool floored = var.value() < kVarianceFloor;
                const double sd = std::sqrt(floored ? kVarianceFloor : var.value());
                ad::NodeBuilder nb;
                nb.add(mu, 1.0);
                if (!floored) nb.add(var, z / (2.0 * sd));
                out(i, c) = nb.finish(mu.value() + sd * z);
            } else {
                out(i, c) = mu + std::sqrt(std::max(var, kVarianceFloor)) * z;
            }
        }
    }
    return out;
}

inline Eigen::MatrixXd standard_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd z(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index i = 0; i < rows; ++i) z(i, c) = normal(rng);
    return z;
}

namespace detail {

template <class T>
std::vector<PreparedLayer<T>> prepare_all(const BasicDgp<T>& model) {
    if (model.layers.empty()) throw PreconditionViolation("model has no layers");
    std::vector<PreparedLayer<T>> out;
    out.reserve(model.layers.size());
    for (const auto& l : model.layers) out.push_back(prepare_layer(l));
    return out;
}

// Final-layer moments per sample path. A single-layer model has no stochastic
// layers, so exactly one path is returned.
template <class T>
std::vector<GaussianMoments<T>> propagate(const std::vector<PreparedLayer<T>>& prepared, const MatrixX<T>& x,
                                          std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw PreconditionViolation("need at least one sample path");
    const GaussianMoments<T> first = layer_moments(prepared.front(), x);
    if (prepared.size() == 1) return {first};
    std::mt19937_64 rng(seed);
    std::vector<GaussianMoments<T>> paths;
    paths.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        MatrixX<T> f = layer_sample(first, standard_normal(rng, first.mean.rows(), first.mean.cols()));
        for (std::size_t l = 1; l + 1 < prepared.size(); ++l) {
            const GaussianMoments<T> m = layer_moments(prepared[l], f);
            f = layer_sample(m, standard_normal(rng, m.mean.rows(), m.mean.cols()));
        }
        paths.push_back(layer_moments(prepared.back(), f));
    }
    return paths;
}

template <class T>
T divergence_term(const std::vector<PreparedLayer<T>>& prepared, std::span<const QuantifierSpec> specs) {
    if (specs.size() != prepared.size())
        throw PreconditionViolation("divergence_term: need one quantifier per layer, got " +
                                    std::to_string(specs.size()) + " for " + std::to_string(prepared.size()));
    std::vector<T> terms;
    for (std::size_t l = 0; l < prepared.size(); ++l) {
        const PreparedLayer<T>& p = prepared[l];
        const BasicLayer<T>& layer = *p.layer;
        const Eigen::Index m = layer.num_inducing();
        for (Eigen::Index c = 0; c < layer.output_dim(); ++c) {
            GaussianDist<T> q{layer.q_mu.col(c), p.s_factors[static_cast<std::size_t>(c)]};
            GaussianDist<T> prior = layer.whiten ? GaussianDist<T>::standard(m)
                                                 : GaussianDist<T>{p.mean_at_inducing.col(c), p.kzz_factor};
            terms.push_back(apply_quantifier(specs[l], q, prior));
        }
    }
    return ad::sum(terms);
}

}  // namespace detail

/// Final-layer moments for each of `n_samples` sample paths. Hidden layers are
/// sampled with the reparameterization mean + sd·ε; the last layer is left as
/// moments so closed-form expected losses apply.
template <class T>
std::vector<GaussianMoments<T>> model_forward(const BasicDgp<T>& model, const MatrixX<T>& x, std::size_t n_samples,
                                              std::uint64_t seed) {
    const auto prepared = detail::prepare_all(model);
    auto paths = detail::propagate(prepared, x, n_samples, seed);
    if (paths.size() == 1 && n_samples > 1) paths.resize(n_samples, paths.front());
    return paths;
}

/// Σ_l Σ_c D_l(q(u_c) ‖ p(u_c)), with p = N(0, I) when whitened and
/// N(mean_fn(Z)_c, K(Z,Z)) otherwise.
template <class T>
T divergence_term(const BasicDgp<T>& model, std::span<const QuantifierSpec> specs) {
    return detail::divergence_term(detail::prepare_all(model), specs);
}

/// (n_total / batch)·mean over paths of Σ_i E_q[ℓ(f_i, y_i)] + divergence_term.
template <class T>
T gvi_objective(const BasicDgp<T>& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LossSpec& loss,
                std::span<const QuantifierSpec> specs, std::size_t n_samples, std::uint64_t seed,
                std::size_t n_total) {
    if (x.rows() == 0) throw PreconditionViolation("gvi_objective: empty batch");
    if (y.rows() != x.rows()) throw DimensionMismatch("gvi_objective: X and Y have different row counts");
    if (y.cols() != model.output_dim()) throw DimensionMismatch("gvi_objective: Y width differs from model output");
    if (n_total < static_cast<std::size_t>(x.rows()))
        throw PreconditionViolation("gvi_objective: n_total is smaller than the batch");
    loss.validate();
    for (const auto& s : specs) s.validate();

    const auto prepared = detail::prepare_all(model);
    const MatrixX<T> xt = x.template cast<T>();
    const auto paths = detail::propagate(prepared, xt, n_samples, seed);

    std::vector<T> data_terms;
    data_terms.reserve(paths.size() * static_cast<std::size_t>(x.rows()));
    for (const auto& moments : paths)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            data_terms.push_back(expected_loss(loss, y.row(i).transpose(), moments.row(i), model.lik));

    const double scale = static_cast<double>(n_total) /
                         (static_cast<double>(x.rows()) * static_cast<double>(paths.size()));
    return scale * ad::sum(data_terms) + detail::divergence_term(prepared, specs);
}

/// Mixture-over-paths predictive distribution in the model's (normalized) units.
struct Predictive {
    Eigen::MatrixXd mean;      // average of path means
    Eigen::MatrixXd variance;  // average of (path var + σ²) + variance of path means
    std::vector<Eigen::MatrixXd> path_means;
    std::vector<Eigen::MatrixXd> path_variances;  // latent, without σ²
    double noise_variance = 0.0;

    [[nodiscard]] Eigen::Index num_points() const noexcept { return mean.rows(); }

    /// log of (1/S)·Σ_s N(y; path mean, path var + σ²) at point i.
    [[nodiscard]] double log_density(Eigen::Index i, const Eigen::VectorXd& y) const {
        if (y.size() != mean.cols()) throw DimensionMismatch("Predictive::log_density: target width mismatch");
        std::vector<double> logs;
        logs.reserve(path_means.size());
        for (std::size_t s = 0; s < path_means.size(); ++s) {
            double lp = 0.0;
            for (Eigen::Index j = 0; j < y.size(); ++j) {
                const double v = path_variances[s](i, j) + noise_variance;
                lp += -0.5 * (detail::kLog2Pi + std::log(v)) - 0.5 * square(y(j) - path_means[s](i, j)) / v;
            }
            logs.push_back(lp);
        }
        const double mx = *std::max_element(logs.begin(), logs.end());
        double acc = 0.0;
        for (double l : logs) acc += std::exp(l - mx);
        return mx + std::log(acc / static_cast<double>(logs.size()));
    }

    [[nodiscard]] Eigen::VectorXd log_densities(const Eigen::MatrixXd& y) const {
        if (y.rows() != mean.rows()) throw DimensionMismatch("Predictive::log_densities: row count mismatch");
        Eigen::VectorXd out(y.rows());
        for (Eigen::Index i = 0; i < y.rows(); ++i) out(i) = log_density(i, y.row(i).transpose());
        return out;
    }
};

inline Predictive predict(const DgpModel& model, const Eigen::MatrixXd& x_star, std::size_t n_samples,
                          std::uint64_t seed) {
    const auto paths = model_forward(model, x_star, n_samples, seed);
    Predictive p;
    p.noise_variance = model.lik.noise_variance();
    const auto s = static_cast<double>(paths.size());
    p.mean = Eigen::MatrixXd::Zero(x_star.rows(), model.output_dim());
    Eigen::MatrixXd second = p.mean;
    Eigen::MatrixXd avg_var = p.mean;
    for (const auto& m : paths) {
        p.path_means.push_back(m.mean);
        p.path_variances.push_back(m.variance);
        p.mean += m.mean / s;
        avg_var += (m.variance.array() + p.noise_variance).matrix() / s;
    }
    for (const auto& m : paths) second += (m.mean - p.mean).cwiseAbs2() / s;
    p.variance = avg_var + second;
    return p;
}

// -- construction -----------------------------------------------------------------

struct ModelOptions {
    int layers = 1;
    int width = 0;           // hidden width; 0 selects min(30, D)
    int num_inducing = 100;  // clamped to the number of training points
    bool whiten = true;
    double noise_variance = 0.05;  // on normalized targets
    double q_sqrt_scale = 1e-5;    // S initialized to this multiple of I
};

/// Builds a model for inputs `x` (normalized): inducing inputs are a seeded
/// subset of the rows of x, hidden layers use a fixed linear mean function
/// (identity, top right-singular vectors of the running inputs, or zero-padding)
/// and the final layer has zero mean.
inline DgpModel init_model(const Eigen::MatrixXd& x, Eigen::Index output_dim, const ModelOptions& opts,
                           std::uint64_t seed) {
    if (opts.layers < 1) throw PreconditionViolation("init_model: need at least one layer");
    if (opts.num_inducing < 1) throw PreconditionViolation("init_model: need at least one inducing point");
    if (x.rows() < 1 || x.cols() < 1) throw PreconditionViolation("init_model: empty input matrix");
    if (output_dim < 1) throw PreconditionViolation("init_model: output dimension must be positive");

    const Eigen::Index n = x.rows();
    const Eigen::Index m = std::min<Eigen::Index>(opts.num_inducing, n);
    Eigen::MatrixXd z(m, x.cols());
    if (m == n) {
        z = x;
    } else {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::sort(idx.begin(), idx.begin() + m);
        for (Eigen::Index k = 0; k < m; ++k) z.row(k) = x.row(idx[static_cast<std::size_t>(k)]);
    }

    const Eigen::Index hidden = opts.width > 0 ? opts.width : std::min<Eigen::Index>(kMaxHiddenWidth, x.cols());
    DgpModel model;
    Eigen::MatrixXd x_running = x;
    Eigen::MatrixXd z_running = z;
    for (int l = 0; l < opts.layers; ++l) {
        const bool last = l + 1 == opts.layers;
        const Eigen::Index d_in = x_running.cols();
        const Eigen::Index d_out = last ? output_dim : hidden;
        LayerState layer;
        layer.inducing = z_running;
        layer.q_mu = Eigen::MatrixXd::Zero(m, d_out);
        layer.kernel = KernelParams<double>::unit(d_in);
        layer.whiten = opts.whiten;
        layer.q_sqrt.resize(static_cast<std::size_t>(d_out));
        for (Eigen::Index c = 0; c < d_out; ++c)
            layer.set_q_sqrt(c, std::sqrt(opts.q_sqrt_scale) * Eigen::MatrixXd::Identity(m, m));
        if (last) {
            layer.mean_fn = MeanFunction::zero;
        } else {
            layer.mean_fn = MeanFunction::linear_projection;
            if (d_in == d_out) {
                layer.projection = Eigen::MatrixXd::Identity(d_in, d_out);
            } else if (d_in > d_out) {
                Eigen::BDCSVD<Eigen::MatrixXd> svd(x_running, Eigen::ComputeThinV);
                layer.projection = svd.matrixV().leftCols(d_out);
            } else {
                layer.projection = Eigen::MatrixXd::Zero(d_in, d_out);
                layer.projection.leftCols(d_in).setIdentity();
            }
            x_running = x_running * layer.projection;
            z_running = z_running * layer.projection;
        }
        model.layers.push_back(std::move(layer));
    }
    model.lik = LikelihoodParams<double>::from_variance(opts.noise_variance, output_dim);
    return model;
}

}  // namespace gvidgp
