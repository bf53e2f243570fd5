#pragma once

#include "gvidgp/autodiff.hpp"
#include "gvidgp/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace gvidgp {

/// RBF kernel with one lengthscale per input dimension (ARD). Both the signal
/// variance and the lengthscales are stored as logarithms.
template <class T>
struct KernelParams {
    T log_variance = T(0.0);
    VectorX<T> log_lengthscales;

    static KernelParams from_values(double variance, const Eigen::VectorXd& lengthscales) {
        KernelParams p;
        p.log_variance = T(std::log(variance));
        p.log_lengthscales = lengthscales.array().log().matrix().template cast<T>();
        return p;
    }

    /// Unit variance, unit lengthscales.
    static KernelParams unit(Eigen::Index input_dim) {
        return from_values(1.0, Eigen::VectorXd::Ones(input_dim));
    }

    [[nodiscard]] Eigen::Index input_dim() const noexcept { return log_lengthscales.size(); }

    [[nodiscard]] T variance() const {
        using std::exp;
        return exp(log_variance);
    }
};

namespace detail {

template <class T>
MatrixX<T> scale_inputs(const KernelParams<T>& params, const MatrixX<T>& x, const char* who) {
    if (x.cols() != params.input_dim()) {
        throw DimensionMismatch(std::string(who) + ": points have dimension " + std::to_string(x.cols()) +
                                " but the kernel has " + std::to_string(params.input_dim()) + " lengthscales");
    }
    using std::exp;
    MatrixX<T> out(x.rows(), x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
        const T inv_ls = exp(-params.log_lengthscales(d));
        for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, d) = x(i, d) * inv_ls;
    }
    return out;
}

}  // namespace detail

/// K(a, b) with entries σ²·exp(−½ Σ_d ((a_id − b_jd)/ℓ_d)²); a is n×D, b is m×D.
template <class T>
MatrixX<T> kernel_matrix(const KernelParams<T>& params, const MatrixX<T>& a, const MatrixX<T>& b) {
    const MatrixX<T> as = detail::scale_inputs(params, a, "kernel_matrix");
    const MatrixX<T> bs = detail::scale_inputs(params, b, "kernel_matrix");
    const Eigen::Index dims = as.cols();
    MatrixX<T> k(as.rows(), bs.rows());
    for (Eigen::Index j = 0; j < bs.rows(); ++j) {
        for (Eigen::Index i = 0; i < as.rows(); ++i) {
            double sq = 0.0;
            for (Eigen::Index d = 0; d < dims; ++d) sq += square(value(as(i, d)) - value(bs(j, d)));
            const double kij = std::exp(value(params.log_variance) - 0.5 * sq);
            if constexpr (is_var_v<T>) {
                ad::NodeBuilder nb;
                nb.add(params.log_variance, kij);
                for (Eigen::Index d = 0; d < dims; ++d) {
                    const double diff = as(i, d).value() - bs(j, d).value();
                    nb.add(as(i, d), -kij * diff);
                    nb.add(bs(j, d), kij * diff);
                }
                k(i, j) = nb.finish(kij);
            } else {
                k(i, j) = kij;
            }
        }
    }
    return k;
}

/// Diagonal of K(a, a): the signal variance repeated once per point.
template <class T>
VectorX<T> kernel_diag(const KernelParams<T>& params, const MatrixX<T>& a) {
    if (a.cols() != params.input_dim()) {
        throw DimensionMismatch("kernel_diag: points have dimension " + std::to_string(a.cols()) +
                                " but the kernel has " + std::to_string(params.input_dim()) + " lengthscales");
    }
    return VectorX<T>::Constant(a.rows(), params.variance());
}

}  // namespace gvidgp
